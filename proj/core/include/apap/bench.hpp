#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "apap/deform.hpp"
#include "apap/image.hpp"
#include "apap/mesh.hpp"
#include "apap/poisson.hpp"
#include "apap/triangulate.hpp"

namespace apap {

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 0 or 1

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, 0) {}

  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  std::size_t count() const;
};

/// Foreground where the mean channel value exceeds `threshold`.
BinaryMask mask_from_image(const Image& image, float threshold = 0.5f);
BinaryMask load_mask(const std::filesystem::path& path);

/// Opening with a 3x3 structuring element, largest 4-connected component,
/// holes filled. Throws InvalidInputError when nothing is left.
BinaryMask clean_mask(const BinaryMask& mask);

/// Outer contour of the mask: marching squares through pixel centers, pixel
/// (i, j) centered at (i + 0.5, j + 0.5). Returned with positive shoelace
/// area in image coordinates.
std::vector<Eigen::Vector2d> trace_contour(const BinaryMask& mask);

/// Douglas-Peucker on a closed polygon.
std::vector<Eigen::Vector2d> simplify_closed(const std::vector<Eigen::Vector2d>& polygon,
                                             double tolerance);

bool polygon_self_intersects(const std::vector<Eigen::Vector2d>& polygon);
double polygon_signed_area(const std::vector<Eigen::Vector2d>& polygon);
bool point_in_polygon(const std::vector<Eigen::Vector2d>& polygon, const Eigen::Vector2d& p);

struct MeshFromMaskOptions {
  int interior_samples = 800;
  double simplify_tolerance_px = 1.5;
  std::uint64_t seed = 0;
};

/// Constrained triangulation of a cleaned mask in image coordinates. The
/// first constraints.size() points are the boundary loop, the rest are
/// Poisson-disk interior samples.
struct MaskTriangulation {
  std::vector<Eigen::Vector2d> points;
  std::vector<std::pair<int, int>> constraints;
  CdtResult cdt;
};

MaskTriangulation triangulate_mask(const BinaryMask& mask,
                                   const MeshFromMaskOptions& options = {});

/// Planar textured mesh whose boundary follows the mask contour. Vertices are
/// normalized to [0,1]^2 (aspect preserved); UVs index the source image,
/// which becomes the texture.
TexturedMesh mesh_from_mask(const BinaryMask& mask, const Image& image,
                            const MeshFromMaskOptions& options = {});

/// Boundary vertex loops, each oriented as the faces traverse it.
std::vector<std::vector<int>> boundary_loops(const TexturedMesh& mesh);

inline constexpr double kRegionRadius = 0.01;
inline constexpr double kHandleMagnitude = 0.1;

struct HandleAssignment {
  int n_pairs = 2;
  double magnitude = kHandleMagnitude;
  /// Overrides the outward-normal direction for every handle when set.
  std::optional<Eigen::Vector3d> direction;
};

/// n_pairs handles spread by arc length along the longest boundary loop,
/// starting from the vertex farthest from the area centroid; the anchor is
/// the vertex nearest the centroid. Displacements follow the outward normal.
DeformationSpec assign_handles(const TexturedMesh& mesh,
                               const HandleAssignment& assignment = {});

/// All vertices within `radius` (Euclidean, rest pose) of any seed, sorted.
std::vector<int> region_expand(const TexturedMesh& mesh, const std::vector<int>& seeds,
                               double radius = kRegionRadius);

/// Expands handles and anchors into regions. Each added handle vertex takes
/// the displacement of its nearest seed; anchors win overlaps.
DeformationSpec expand_spec(const TexturedMesh& mesh, const DeformationSpec& spec,
                            double radius = kRegionRadius);

/// Spec containing only handle `pair` (plus all anchors).
DeformationSpec select_pair(const DeformationSpec& spec, int pair);

/// k-NN quality score: mean of exp(-||x - r||^2 / (2 h^2)) over the k nearest
/// references r, with h the mean distance from each reference to its
/// min(k, n - 1) nearest other references.
double giqa_knn(const std::vector<float>& edited,
                const std::vector<std::vector<float>>& reference, int k = 12);

struct ManifestInstance {
  std::string name;
  std::filesystem::path mesh_path;
  std::filesystem::path mask_path;
  std::filesystem::path image_path;
  std::filesystem::path spec_path;
  std::string category;
  std::string prompt;
  /// Restrict an assigned spec to one handle pair.
  std::optional<int> handle_pair;
};

struct Manifest {
  std::vector<ManifestInstance> instances;
  APAPConfig config;
  int interior_samples = 800;
  int handle_pairs = 2;
  double handle_magnitude = kHandleMagnitude;
  double region_radius = kRegionRadius;
  /// JSON object {category: [[feature...], ...]} for k-NN scoring.
  std::filesystem::path reference_features;
  int giqa_k = 12;
};

/// Relative paths resolve against `base_dir`.
Manifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir);
Manifest load_manifest(const std::filesystem::path& path);

struct ExperimentOptions {
  Variant variant = Variant::kOurs;
  std::filesystem::path output_dir;
  std::string endpoint;  // overrides the manifest config when non-empty
  int workers = 1;
  bool resume = true;
  std::optional<std::int64_t> seed;
};

struct InstanceOutcome {
  std::string name;
  std::string category;
  std::string status;  // "ok", "failed", "resumed"
  std::string error;
  double handle_loss = 0.0;
  std::optional<double> giqa;
};

struct ExperimentSummary {
  std::vector<InstanceOutcome> instances;
  int failed() const;
};

/// Runs every instance; failures are recorded and the run continues. Writes
/// <output_dir>/<name>/{mesh.obj, render.png, trace.csv, meta.json} and
/// <output_dir>/scores.csv.
ExperimentSummary run_experiment(const Manifest& manifest, const ExperimentOptions& options);

}  // namespace apap
