#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "apap/bench.hpp"
#include "apap/mesh.hpp"
#include "apap/poisson.hpp"

namespace apap::testing {

/// Checkerboard RGB texture.
Image checker_texture(int size = 64, int cells = 8);

/// (nx x ny) vertex grid over [0,1]^2 in the z = 0 plane with per-corner UVs
/// and a checker texture. `jitter` moves interior vertices by up to that
/// fraction of a cell.
TexturedMesh grid_mesh(int nx, int ny, double jitter = 0.0, std::uint64_t seed = 0);

/// Open 3D surface z = amplitude * bumps(x, y) over a jittered grid.
TexturedMesh height_field(int n, double amplitude, std::uint64_t seed = 0);

/// Closed genus-0 surface.
TexturedMesh uv_sphere(int rings, int segments, double radius = 0.5);

/// Closed genus-1 surface.
TexturedMesh torus(int major_segments, int minor_segments, double major = 0.35,
                   double minor = 0.12);

/// Constrained Delaunay triangulation of ~n random points inside a random
/// star-shaped polygon.
TexturedMesh random_planar_mesh(int n, std::uint64_t seed);

/// Random surface: a random planar mesh lifted by a smooth height function.
TexturedMesh random_surface_mesh(int n, std::uint64_t seed);

/// Ten or more meshes with 3k-5k vertices, planar and curved, open and closed.
std::vector<TexturedMesh> identity_corpus();

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

struct MaskFixture {
  std::string name;
  BinaryMask mask;
};

/// Five shapes: disk, star, L, crescent and a wobbly blob.
std::vector<MaskFixture> mask_fixtures(int size = 128);

/// Writes the mask as a black/white PNG and a matching colored image.
/// Returns {mask_path, image_path}.
std::pair<std::filesystem::path, std::filesystem::path> write_mask_fixture(
    const MaskFixture& fixture, const std::filesystem::path& dir);

/// One handle at the boundary vertex with the largest x, displaced by
/// `displacement`, and one anchor at the vertex nearest (0.2, 0.5).
DeformationSpec single_handle_spec(const TexturedMesh& mesh,
                                   const Eigen::RowVector3d& displacement);

/// Minimum signed xy area over all faces.
double min_signed_area(const Vertices& vertices, const Faces& faces);

}  // namespace apap::testing
