#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "apap/error.hpp"
#include "apap/render.hpp"
#include "fixtures.hpp"

namespace apap {
namespace {

TexturedMesh flat_square(double z = 0.0) {
  TexturedMesh mesh = testing::grid_mesh(2, 2);
  mesh.vertices.col(2).setConstant(z);
  mesh.is_planar = z == 0.0;
  return mesh;
}

double weighted_sum(const Image& image, const Image& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < image.size(); ++i) s += double(image.data[i]) * weights.data[i];
  return s;
}

TEST(Camera, PlanarRigMapsUnitSquareInsideMargin) {
  const auto cameras = canonical_cameras(CameraRig::kPlanar, 110);
  ASSERT_EQ(cameras.size(), 1u);
  const Camera& cam = cameras[0];
  // 5% margin on each side: 110 px = 1.1 units, so 100 px per unit.
  const Eigen::Vector3d a = cam.project({0, 0, 0});
  const Eigen::Vector3d b = cam.project({1, 1, 0});
  EXPECT_NEAR(a.x(), 5.0, 1e-9);
  EXPECT_NEAR(a.y(), 105.0, 1e-9);  // world +y is image up
  EXPECT_NEAR(b.x(), 105.0, 1e-9);
  EXPECT_NEAR(b.y(), 5.0, 1e-9);
}

TEST(Camera, FourViewRigLooksAtOrigin) {
  const auto cameras = canonical_cameras(CameraRig::kFourView, 64);
  ASSERT_EQ(cameras.size(), 4u);
  for (const Camera& cam : cameras) {
    const Eigen::Vector3d p = cam.project(Eigen::Vector3d::Zero());
    EXPECT_NEAR(p.x(), 32.0, 1e-9);
    EXPECT_NEAR(p.y(), 32.0, 1e-9);
    EXPECT_NEAR(p.z(), 2.5, 1e-9);
  }
  // Azimuths 90 degrees apart: the +x axis tip is off-center in view 0 and
  // centered in view 1 (seen head on).
  const Eigen::Vector3d tip(0.5, 0, 0);
  EXPECT_GT(std::abs(cameras[0].project(tip).x() - 32.0), 1.0);
  EXPECT_NEAR(cameras[1].project(tip).x(), 32.0, 1e-9);
}

TEST(Camera, ProjectJacobianMatchesFiniteDifferences) {
  for (const CameraRig rig : {CameraRig::kPlanar, CameraRig::kFourView}) {
    const Camera cam = canonical_cameras(rig, 64).back();
    const Eigen::Vector3d x(0.2, -0.1, 0.3);
    const Eigen::Matrix<double, 2, 3> J = cam.project_jacobian(x);
    for (int d = 0; d < 3; ++d) {
      Eigen::Vector3d h = Eigen::Vector3d::Zero();
      h[d] = 1e-6;
      const Eigen::Vector2d fd =
          (cam.project(x + h).head<2>() - cam.project(x - h).head<2>()) / 2e-6;
      EXPECT_LT((J.col(d) - fd).norm(), 1e-5);
    }
  }
}

TEST(Camera, ValidateRejectsNonsense) {
  Camera cam = canonical_cameras(CameraRig::kPlanar, 32)[0];
  cam.width = 0;
  EXPECT_THROW(cam.validate(), InvalidInputError);
  cam = canonical_cameras(CameraRig::kPlanar, 32)[0];
  cam.rotation(0, 0) = 2.0;
  EXPECT_THROW(cam.validate(), InvalidInputError);
}

TEST(SampleTexture, TexelCentersAndBilinearMidpoints) {
  Image tex(2, 2, 3);
  const float values[2][2] = {{0.0f, 1.0f}, {0.25f, 0.5f}};  // [y][x], y = 0 is the top row
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      for (int c = 0; c < 3; ++c) tex.at(x, y, c) = values[y][x];
  EXPECT_FLOAT_EQ(sample_texture(tex, 0.25, 0.75).x(), 0.0f);  // top-left texel
  EXPECT_FLOAT_EQ(sample_texture(tex, 0.75, 0.75).x(), 1.0f);
  EXPECT_FLOAT_EQ(sample_texture(tex, 0.25, 0.25).x(), 0.25f);
  EXPECT_FLOAT_EQ(sample_texture(tex, 0.5, 0.5).x(), 0.4375f);  // mean of all four
  EXPECT_FLOAT_EQ(sample_texture(tex, -3.0, 9.0).x(), 0.0f);    // clamped
}

TEST(Rasterize, FullSquareShowsTextureAndBackground) {
  TexturedMesh mesh = flat_square();
  mesh.texture = Image(4, 4, 3, 0.25f);
  const Camera cam = canonical_cameras(CameraRig::kPlanar, 110)[0];
  RenderOptions options;
  options.background = Eigen::Vector3f(1, 0, 0);
  options.sigma_px = 0.5;
  const RenderOutput out = rasterize(mesh, cam, options);
  EXPECT_FLOAT_EQ(out.image.at(55, 55, 0), 0.25f);
  EXPECT_GE(out.face_id[55 * 110 + 55], 0);
  // Corner pixel lies in the margin, beyond the soft band (8 sigma = 4 px).
  EXPECT_FLOAT_EQ(out.image.at(0, 0, 0), 1.0f);
  EXPECT_FLOAT_EQ(out.image.at(0, 0, 1), 0.0f);
  EXPECT_EQ(out.face_id[0], -1);
  EXPECT_TRUE(out.warnings.empty());
}

TEST(Rasterize, SoftEdgeIsHalfCoveredOnTheSilhouette) {
  // A pixel center exactly on the silhouette gets coverage 1/2.
  TexturedMesh mesh = flat_square();
  mesh.texture = Image();
  const Camera cam = canonical_cameras(CameraRig::kPlanar, 110)[0];
  const RenderOutput out = rasterize(mesh, cam);
  // x = 0 maps to pixel x 5.0; pixel 4 has center 4.5, half a pixel outside.
  const int y = 55;
  const float inside = out.coverage[y * 110 + 5];
  const float outside = out.coverage[y * 110 + 4];
  EXPECT_GT(inside, 0.5f);  // center 5.5, half a pixel inside
  EXPECT_LT(outside, 0.5f);
  EXPECT_NEAR(inside + outside, 1.0f, 1e-5f);  // symmetric logistic profile
}

TEST(Rasterize, NearerSurfaceOccludes) {
  TexturedMesh front = flat_square(0.3), back = flat_square(-0.3);
  front.texture = Image(2, 2, 3, 0.1f);
  TexturedMesh both = front;
  const int nv = front.num_vertices(), nf = front.num_faces();
  both.vertices.conservativeResize(2 * nv, 3);
  both.vertices.bottomRows(nv) = back.vertices;
  both.faces.conservativeResize(2 * nf, 3);
  both.faces.bottomRows(nf) = back.faces.array() + nv;
  both.uvs.conservativeResize(6 * nf, 2);
  both.uvs.bottomRows(3 * nf) = back.uvs;
  both.vertices.leftCols(2).array() -= 0.5;  // center on the origin
  // Four-view camera 0 sits on +z looking at the origin.
  const Camera cam = canonical_cameras(CameraRig::kFourView, 32)[0];
  const RenderOutput out = rasterize(both, cam);
  const int id = out.face_id[16 * 32 + 16];
  ASSERT_GE(id, 0);
  EXPECT_LT(id, nf) << "the face nearer the camera must win the depth test";
}

TEST(Rasterize, OffscreenMeshWarns) {
  TexturedMesh mesh = flat_square();
  mesh.vertices.col(0).array() += 10.0;
  const RenderOutput out = rasterize(mesh, canonical_cameras(CameraRig::kPlanar, 16)[0]);
  EXPECT_FALSE(out.warnings.empty());
}

TEST(Rasterize, ForwardAndBackwardAreBitDeterministic) {
  const TexturedMesh mesh = testing::uv_sphere(8, 12);
  const Camera cam = canonical_cameras(CameraRig::kFourView, 48)[2];
  const RenderOutput a = rasterize(mesh, cam), b = rasterize(mesh, cam);
  ASSERT_EQ(a.image.size(), b.image.size());
  EXPECT_EQ(std::memcmp(a.image.data.data(), b.image.data.data(), a.image.size() * 4), 0);
  const Image ones(48, 48, 3, 1.0f);
  EXPECT_EQ(rasterize_backward(a, mesh, cam, ones), rasterize_backward(b, mesh, cam, ones));
}

TEST(RasterizeBackward, MatchesFiniteDifferencesOnTexturedGrid) {
  TexturedMesh mesh = testing::grid_mesh(3, 3, 0.3, 2);
  mesh.vertices = (mesh.vertices * 0.8).rowwise() + Eigen::RowVector3d(0.13, 0.07, 0);
  const Camera cam = canonical_cameras(CameraRig::kPlanar, 24)[0];
  RenderOptions options;
  options.sigma_px = 1.5;
  const RenderOutput out = rasterize(mesh, cam, options);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(-1, 1);
  Image w(24, 24, 3);
  for (float& x : w.data) x = u(rng);
  const Vertices analytic = rasterize_backward(out, mesh, cam, w);
  Vertices numeric = Vertices::Zero(mesh.num_vertices(), 3);
  for (int v = 0; v < mesh.num_vertices(); ++v)
    for (int d = 0; d < 2; ++d) {
      Vertices p = mesh.vertices;
      p(v, d) += 1e-4;
      const double plus = weighted_sum(rasterize(mesh, p, cam, options).image, w);
      p(v, d) -= 2e-4;
      const double minus = weighted_sum(rasterize(mesh, p, cam, options).image, w);
      numeric(v, d) = (plus - minus) / 2e-4;
    }
  EXPECT_LT((analytic - numeric).norm() / numeric.norm(), 5e-2);
  // Orthographic view along z: depth does not change the picture.
  EXPECT_LT(analytic.col(2).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(RasterizeBackward, RejectsWrongUpstreamShape) {
  const TexturedMesh mesh = flat_square();
  const Camera cam = canonical_cameras(CameraRig::kPlanar, 16)[0];
  const RenderOutput out = rasterize(mesh, cam);
  EXPECT_THROW(rasterize_backward(out, mesh, cam, Image(8, 8, 3)), InvalidInputError);
}

}  // namespace
}  // namespace apap
