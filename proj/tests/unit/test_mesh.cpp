#include <gtest/gtest.h>

#include <fstream>

#include "apap/error.hpp"
#include "apap/mesh.hpp"
#include "fixtures.hpp"

namespace apap {
namespace {

using testing::grid_mesh;
using testing::scratch_dir;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path) << text;
}

TEST(MeshIo, SaveLoadRoundTripIsBitExact) {
  const auto dir = scratch_dir("mesh_roundtrip");
  TexturedMesh mesh = testing::height_field(9, 0.3, 4);
  mesh.vertices *= 1.0 / 3.0;  // values without short decimal forms
  save_mesh(mesh, dir / "m.obj");
  const TexturedMesh back = load_mesh(dir / "m.obj");
  EXPECT_EQ(back.vertices, mesh.vertices);
  EXPECT_EQ(back.faces, mesh.faces);
  EXPECT_EQ(back.uvs, mesh.uvs);
  ASSERT_TRUE(back.has_texture());
  EXPECT_EQ(back.texture.width, mesh.texture.width);
  EXPECT_FALSE(back.is_planar);
}

TEST(MeshIo, PlanarMeshIsDetected) {
  const auto dir = scratch_dir("mesh_planar");
  save_mesh(grid_mesh(4, 3), dir / "p.obj");
  EXPECT_TRUE(load_mesh(dir / "p.obj").is_planar);
}

TEST(MeshIo, ParsesSlashFormsAndNegativeIndices) {
  const auto dir = scratch_dir("mesh_forms");
  write_text(dir / "a.obj",
             "# comment\nv 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\n"
             "vn 0 0 1\nf 1//1 2//1 3//1\nf -3 -1 -2\n");
  const TexturedMesh mesh = load_mesh(dir / "a.obj");
  ASSERT_EQ(mesh.num_faces(), 2);
  EXPECT_EQ(mesh.faces.row(1), Eigen::RowVector3i(1, 3, 2));
  EXPECT_FALSE(mesh.has_uvs());
}

TEST(MeshIo, MissingFileIsIoError) {
  EXPECT_THROW(load_mesh("/nonexistent/dir/none.obj"), IoError);
}

TEST(MeshIo, OutOfRangeIndexIsParseError) {
  const auto dir = scratch_dir("mesh_bad_index");
  write_text(dir / "b.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 7\n");
  EXPECT_THROW(load_mesh(dir / "b.obj"), ParseError);
}

TEST(MeshIo, QuadIsRejected) {
  const auto dir = scratch_dir("mesh_quad");
  write_text(dir / "q.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
  EXPECT_THROW(load_mesh(dir / "q.obj"), ParseError);
}

TEST(MeshIo, MixedUvPresenceIsParseError) {
  const auto dir = scratch_dir("mesh_mixed");
  write_text(dir / "m.obj",
             "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nvt 0 0\nvt 1 0\nvt 0 1\n"
             "f 1/1 2/2 3/3\nf 2 4 3\n");
  EXPECT_THROW(load_mesh(dir / "m.obj"), ParseError);
}

TEST(MeshIo, MissingTextureIsIoError) {
  const auto dir = scratch_dir("mesh_missing_tex");
  write_text(dir / "t.mtl", "newmtl m\nmap_Kd gone.png\n");
  write_text(dir / "t.obj",
             "mtllib t.mtl\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n");
  EXPECT_THROW(load_mesh(dir / "t.obj"), IoError);
}

TEST(MeshValidate, DegenerateFaceReportsIndex) {
  TexturedMesh mesh = grid_mesh(3, 3);
  mesh.vertices.row(mesh.faces(5, 1)) = mesh.vertices.row(mesh.faces(5, 0));
  try {
    validate(mesh);
    FAIL() << "expected DegenerateFaceError";
  } catch (const DegenerateFaceError& e) {
    EXPECT_GE(e.face(), 0);
    EXPECT_LT(e.face(), mesh.num_faces());
  }
}

TEST(MeshValidate, RejectsNonFiniteAndBadIndices) {
  TexturedMesh mesh = grid_mesh(3, 3);
  mesh.vertices(0, 0) = std::nan("");
  EXPECT_THROW(validate(mesh), InvalidInputError);
  mesh = grid_mesh(3, 3);
  mesh.faces(0, 0) = 99;
  EXPECT_THROW(validate(mesh), InvalidInputError);
}

TEST(MeshNormalize, FitsUnitCubeCentered) {
  TexturedMesh mesh = testing::uv_sphere(6, 8, 3.0);
  mesh.vertices.rowwise() += Eigen::RowVector3d(5, -2, 7);
  normalize_to_unit_cube(mesh);
  const BoundingBox box = mesh.bounding_box();
  EXPECT_NEAR(box.extent().maxCoeff(), 1.0, 1e-12);
  EXPECT_NEAR(box.center().norm(), 0.0, 1e-12);
}

TEST(MeshNormalize, PlanarUnitSquareKeepsAspect) {
  TexturedMesh mesh = grid_mesh(3, 3);
  mesh.vertices.col(0) *= 4.0;
  mesh.vertices.col(1) *= 2.0;
  normalize_planar_unit_square(mesh);
  const BoundingBox box = mesh.bounding_box();
  EXPECT_NEAR(box.extent().x(), 1.0, 1e-12);
  EXPECT_NEAR(box.extent().y(), 0.5, 1e-12);
  EXPECT_GE(box.min.minCoeff(), -1e-12);
}

TEST(MeshTopology, EdgesBoundaryAndComponents) {
  const TexturedMesh mesh = grid_mesh(4, 4);
  // Euler: V - E + F = 1 for a disk.
  EXPECT_EQ(mesh.num_vertices() - static_cast<int>(unique_edges(mesh.faces).size()) +
                mesh.num_faces(),
            1);
  EXPECT_EQ(boundary_edges(mesh.faces).size(), 12u);
  int count = 0;
  connected_components(mesh.num_vertices() + 1, mesh.faces, &count);
  EXPECT_EQ(count, 2);  // the extra unreferenced vertex is its own component
}

TEST(MeshTopology, ClosedSurfacesHaveNoBoundary) {
  EXPECT_TRUE(boundary_edges(testing::uv_sphere(6, 8).faces).empty());
  EXPECT_TRUE(boundary_edges(testing::torus(8, 6).faces).empty());
}

}  // namespace
}  // namespace apap
