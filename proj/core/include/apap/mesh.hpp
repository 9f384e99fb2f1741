#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <optional>
#include <vector>

#include "apap/image.hpp"

namespace apap {

using Vertices = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3>;
/// Per-corner texture coordinates, row 3*f + k for corner k of face f.
using CornerUVs = Eigen::Matrix<double, Eigen::Dynamic, 2>;

/// Faces smaller than this are rejected at load / validation time.
inline constexpr double kMinFaceArea = 1e-12;

struct BoundingBox {
  Eigen::Vector3d min = Eigen::Vector3d::Zero();
  Eigen::Vector3d max = Eigen::Vector3d::Zero();

  Eigen::Vector3d extent() const { return max - min; }
  Eigen::Vector3d center() const { return 0.5 * (min + max); }
};

/// Triangle mesh with optional per-corner UVs and a texture.
/// 2D meshes live in the z = 0 plane and share every code path with 3D ones.
struct TexturedMesh {
  Vertices vertices;
  Faces faces;
  CornerUVs uvs;
  Image texture;
  bool is_planar = false;

  int num_vertices() const { return static_cast<int>(vertices.rows()); }
  int num_faces() const { return static_cast<int>(faces.rows()); }
  bool has_uvs() const { return uvs.rows() > 0; }
  bool has_texture() const { return !texture.empty(); }

  BoundingBox bounding_box() const;
};

/// Throws InvalidInputError / DegenerateFaceError if an invariant is broken.
void validate(const TexturedMesh& mesh);

/// Sets is_planar from the vertex z coordinates (true iff all exactly 0).
void update_planarity(TexturedMesh& mesh);

double face_area(const TexturedMesh& mesh, int face);

/// Signed area in the xy plane; positive for counter-clockwise faces.
double signed_area_xy(const Vertices& vertices, const Faces& faces, int face);

struct NormalizeOptions {
  bool center = true;
  bool scale = true;
};

/// Fits the mesh into the unit cube [-0.5, 0.5]^3 (center) or rescales by the
/// longest extent only (no center). Planar meshes keep z = 0.
void normalize_to_unit_cube(TexturedMesh& mesh, NormalizeOptions options = {});

/// Maps a planar mesh onto [0,1]^2 preserving aspect ratio.
void normalize_planar_unit_square(TexturedMesh& mesh);

/// OBJ with v / vt / f records. A `mtllib` with `map_Kd` loads the texture
/// (PNG) relative to the OBJ's directory.
TexturedMesh load_mesh(const std::filesystem::path& path);

/// Writes OBJ (+ .mtl and _texture.png when a texture is present). Vertex and
/// UV values use shortest round-trip formatting, so reloading is exact.
void save_mesh(const TexturedMesh& mesh, const std::filesystem::path& path);

/// Undirected edges (i < j) in a deterministic sorted order.
std::vector<std::pair<int, int>> unique_edges(const Faces& faces);

/// Edges that belong to exactly one face, oriented as they appear in it.
std::vector<std::pair<int, int>> boundary_edges(const Faces& faces);

/// Component id per vertex over the face graph; unreferenced vertices get
/// their own component.
std::vector<int> connected_components(int num_vertices, const Faces& faces,
                                      int* num_components = nullptr);

}  // namespace apap
