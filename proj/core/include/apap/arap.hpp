#pragma once

#include <vector>

#include "apap/mesh.hpp"
#include "apap/poisson.hpp"

namespace apap {

struct ArapConstraints {
  std::vector<int> constrained_indices;
  Vertices target_positions;
  int max_iterations = 100;
  double tolerance = 1e-7;  // absolute energy change
  /// Start from the rest pose moved by the best rigid fit of the constrained
  /// vertices (needs 3 non-collinear ones); otherwise from the rest pose.
  bool rigid_initialization = true;
};

struct ArapResult {
  Vertices vertices;
  double energy = 0.0;
  int iterations = 0;
  /// Energy after each local-global iteration (first entry: initial guess).
  std::vector<double> energy_trace;
};

/// Local-global ARAP: per-vertex spokes-and-rims cells with cotangent
/// weights, rotations fitted by 3x3 SVD, global step solved with the
/// constrained vertices eliminated.
ArapResult arap_deform(const TexturedMesh& mesh,
                       const ArapConstraints& constraints);

/// sum_k min_R sum_(f incident to k) sum_(edges ij of f) w_ij^f
/// ||(v_i - v_j) - R (r_i - r_j)||^2, with w_ij^f half the cotangent of the
/// angle opposite ij in f, r the rest and v the deformed positions.
double arap_energy(const TexturedMesh& rest_mesh, const Vertices& deformed);

/// Handles at their targets and anchors at their targets, all hard.
ArapConstraints arap_constraints_from_spec(const TexturedMesh& mesh,
                                           const DeformationSpec& spec);

/// Closest rotation to a cross-covariance matrix (Procrustes with the
/// reflection fix applied to the smallest singular direction).
Eigen::Matrix3d fit_rotation(const Eigen::Matrix3d& covariance);

}  // namespace apap
