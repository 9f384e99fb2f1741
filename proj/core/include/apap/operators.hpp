#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <vector>

#include "apap/mesh.hpp"

namespace apap {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
/// 3F x 3 stack of per-face gradients, rows 3f..3f+2 are d/dx, d/dy, d/dz.
using StackedGradients = Eigen::Matrix<double, Eigen::Dynamic, 3>;

/// Discrete differential operators of a rest mesh.
///
/// `grad` is 3F x V and maps a per-vertex scalar to its constant gradient on
/// each face. `laplacian` is the cotangent stiffness matrix, assembled from
/// cotangent weights; it is positive semi-definite with positive diagonal and
/// coincides with grad^T * mass * grad. `mass` holds each face area three
/// times along its diagonal.
struct SparseOperatorSet {
  SparseMatrix grad;
  SparseMatrix laplacian;
  Eigen::VectorXd mass;
  Faces faces;
  int num_vertices = 0;
  int num_faces = 0;

  SparseMatrix mass_matrix() const;
};

SparseOperatorSet build_operators(const TexturedMesh& mesh);

/// Per-face Jacobians of the map x -> phi(x). Entry (c, d) of a face matrix is
/// d phi_c / d x_d, so a face's matrix is the transpose of its block in
/// grad * V. Pre-multiplying by a 3x3 transform applies that transform to the
/// deformed shape.
struct JacobianField {
  std::vector<Eigen::Matrix3d> per_face;

  int num_faces() const { return static_cast<int>(per_face.size()); }
  bool all_finite() const;

  StackedGradients to_stacked() const;
  static JacobianField from_stacked(const StackedGradients& stacked);

  /// Row-major flattening, 9 values per face. Used as the optimizer's
  /// parameter vector.
  Eigen::VectorXd flatten() const;
  static JacobianField unflatten(const Eigen::VectorXd& flat);
};

JacobianField jacobian_field(const TexturedMesh& mesh);
JacobianField jacobian_field(const SparseOperatorSet& ops,
                             const Vertices& vertices);

}  // namespace apap
