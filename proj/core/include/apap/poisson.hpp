#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "apap/mesh.hpp"
#include "apap/operators.hpp"

namespace apap {

inline constexpr double kDefaultAnchorWeight = 1e4;

/// Handles (K_h, D_h) and anchors (K_a, T_a) of an edit.
struct DeformationSpec {
  std::vector<int> handle_indices;
  Vertices handle_displacements;  // one row per handle
  std::vector<int> anchor_indices;
  /// Defaults to the rest positions of the anchors when empty.
  Vertices anchor_targets;
  std::optional<double> lambda;

  /// Throws InvalidInputError on empty / overlapping / out-of-range sets.
  void validate(int num_vertices) const;

  Vertices handle_targets(const Vertices& rest) const;
  Vertices resolved_anchor_targets(const Vertices& rest) const;
};

/// {"handles":[{"index":i,"displacement":[x,y,z]}],
///  "anchors":[{"index":i, "target":[x,y,z]?}], "lambda":float?}
DeformationSpec load_deformation_spec(const std::filesystem::path& path);
DeformationSpec parse_deformation_spec(const std::string& json_text);
std::string deformation_spec_to_json(const DeformationSpec& spec);
void save_deformation_spec(const DeformationSpec& spec,
                           const std::filesystem::path& path);

/// Gathers rows of `values` selected by `indices`.
Vertices select_rows(const Vertices& values, const std::vector<int>& indices);

/// Factorization of (L^T L + lambda K_a^T K_a) with cached right-hand-side
/// operators. Immutable once built; concurrent solves are safe.
class FactorizedSystem {
 public:
  int num_vertices() const { return num_vertices_; }
  int num_faces() const { return num_faces_; }
  double lambda() const { return lambda_; }
  const std::vector<int>& anchors() const { return anchors_; }
  const SparseMatrix& system_matrix() const { return system_; }

  /// Solves M x = b with one step of iterative refinement.
  Eigen::MatrixXd solve_system(const Eigen::MatrixXd& rhs) const;

 private:
  friend FactorizedSystem build_system(const SparseOperatorSet&,
                                       const std::vector<int>&, double);
  friend Vertices solve(const FactorizedSystem&, const JacobianField&,
                        const Vertices&);
  friend JacobianField solve_adjoint(const FactorizedSystem&, const Vertices&);

  int num_vertices_ = 0;
  int num_faces_ = 0;
  double lambda_ = kDefaultAnchorWeight;
  std::vector<int> anchors_;
  SparseMatrix system_;
  SparseMatrix rhs_operator_;    // L^T grad^T mass, V x 3F
  SparseMatrix rhs_operator_t_;  // mass grad L, 3F x V
  std::shared_ptr<const Eigen::SimplicialLLT<SparseMatrix>> cholesky_;
};

/// Throws FactorizationError if some connected component has no anchor.
FactorizedSystem build_system(const SparseOperatorSet& ops,
                              const std::vector<int>& anchors,
                              double lambda = kDefaultAnchorWeight);

/// argmin_V ||L V - grad^T A J||^2 + lambda ||K_a V - T_a||^2.
Vertices solve(const FactorizedSystem& system, const JacobianField& jac,
               const Vertices& anchor_targets);

/// Gradient of a scalar loss w.r.t. the Jacobian field, given dLoss/dV* for
/// V* = solve(...). Computed as A grad L M^{-1} upstream and reshaped per face.
JacobianField solve_adjoint(const FactorizedSystem& system,
                            const Vertices& upstream_grad);

/// Least-squares Poisson solve with the listed vertices eliminated and held
/// exactly at their targets.
Vertices solve_hard_constrained(const SparseOperatorSet& ops,
                                const JacobianField& jac,
                                const std::vector<int>& constrained,
                                const Vertices& targets);

}  // namespace apap
