#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "apap/image.hpp"
#include "apap/mesh.hpp"

namespace apap {

inline constexpr int kDefaultResolution = 512;

enum class Projection { kOrthographic, kPerspective };

/// World-to-camera rigid transform plus a pinhole or orthographic projection.
/// Camera space follows the x-right, y-down, z-forward convention; pixel
/// centers sit at half-integer coordinates.
struct Camera {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Projection projection = Projection::kOrthographic;
  /// Perspective: focal lengths in pixels. Orthographic: pixels per unit.
  double focal_x = 1.0;
  double focal_y = 1.0;
  double principal_x = 0.0;
  double principal_y = 0.0;
  int width = kDefaultResolution;
  int height = kDefaultResolution;

  void validate() const;

  /// (pixel x, pixel y, depth).
  Eigen::Vector3d project(const Eigen::Vector3d& world) const;
  /// d(pixel x, pixel y) / d(world position).
  Eigen::Matrix<double, 2, 3> project_jacobian(const Eigen::Vector3d& world) const;
};

enum class CameraRig { kPlanar, kFourView };

/// kPlanar: one orthographic camera looking down -z at the unit square.
/// kFourView: perspective cameras at azimuths 0, 90, 180, 270 degrees on the
/// equator, looking at the origin.
std::vector<Camera> canonical_cameras(CameraRig rig,
                                      int resolution = kDefaultResolution);

struct RenderOptions {
  /// Logistic edge width in pixels.
  double sigma_px = 1.0;
  /// Soft coverage is evaluated up to this many sigmas from a silhouette.
  double band_sigmas = 8.0;
  Eigen::Vector3f background = Eigen::Vector3f::Ones();
  /// Shading for meshes without a texture.
  Eigen::Vector3f base_color = Eigen::Vector3f::Constant(0.6f);
};

/// Rendered image plus the per-pixel state the backward pass needs.
struct RenderOutput {
  Image image;
  RenderOptions options;

  /// Hard z-buffered coverage: face id (-1 = background) and screen-space
  /// barycentrics (3 per pixel).
  std::vector<int> face_id;
  std::vector<double> barycentrics;
  std::vector<double> depth;

  /// Soft coverage near silhouettes. `edge_id` indexes `silhouette_edges`
  /// (-1 when the pixel is outside the band), `edge_t` is the closest-point
  /// parameter along the edge, `signed_distance` is positive on covered pixels.
  std::vector<float> coverage;
  std::vector<int> edge_id;
  std::vector<double> edge_t;
  std::vector<double> signed_distance;

  struct SilhouetteEdge {
    int v0, v1;    // vertex ids
    int face;      // owning (front-facing) face
    int corner0, corner1;  // corners of v0 / v1 within that face
  };
  std::vector<SilhouetteEdge> silhouette_edges;

  int num_vertices = 0;
  int num_faces = 0;
  std::vector<std::string> warnings;
};

RenderOutput rasterize(const TexturedMesh& mesh, const Camera& camera,
                       const RenderOptions& options = {});
/// Renders `mesh` with its vertices replaced by `vertices`.
RenderOutput rasterize(const TexturedMesh& mesh, const Vertices& vertices,
                       const Camera& camera, const RenderOptions& options = {});

/// dLoss/dVertex given dLoss/dImage, for the same mesh / camera / vertices
/// that produced `output`.
Vertices rasterize_backward(const RenderOutput& output, const TexturedMesh& mesh,
                            const Vertices& vertices, const Camera& camera,
                            const Image& upstream);
Vertices rasterize_backward(const RenderOutput& output, const TexturedMesh& mesh,
                            const Camera& camera, const Image& upstream);

/// Bilinear lookup with UVs clamped to [0,1] (v = 1 is the top row).
Eigen::Vector3f sample_texture(const Image& texture, double u, double v);

}  // namespace apap
