#include "apap/arap.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <Eigen/SparseCholesky>
#include <cmath>

#include "apap/error.hpp"
#include "apap/operators.hpp"

namespace apap {

Eigen::Matrix3d fit_rotation(const Eigen::Matrix3d& covariance) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      covariance, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  Eigen::Matrix3d rotation = v * u.transpose();
  if (rotation.determinant() < 0.0) {
    // Singular values are sorted, so column 2 is the smallest.
    u.col(2) *= -1.0;
    rotation = v * u.transpose();
  }
  return rotation;
}

namespace {

// Spokes-and-rims cells: the cell of vertex k holds every edge of every face
// incident to k. Edge (i, j) of face f carries half the cotangent of the
// angle opposite it in f. Each face's weighted edge form is positive
// semi-definite even for obtuse faces, so the energy never goes negative.
struct Cells {
  const Faces& faces;
  const Vertices& rest;
  Eigen::Matrix<double, Eigen::Dynamic, 3> weight;  // (f, k): edge opposite corner k
};

Cells make_cells(const TexturedMesh& mesh) {
  Cells cells{mesh.faces, mesh.vertices, {}};
  cells.weight.resize(mesh.num_faces(), 3);
  for (int f = 0; f < mesh.num_faces(); ++f)
    for (int k = 0; k < 3; ++k) {
      const Eigen::Vector3d p = mesh.vertices.row(mesh.faces(f, k)).transpose();
      const Eigen::Vector3d a = mesh.vertices.row(mesh.faces(f, (k + 1) % 3)).transpose() - p;
      const Eigen::Vector3d b = mesh.vertices.row(mesh.faces(f, (k + 2) % 3)).transpose() - p;
      cells.weight(f, k) = 0.5 * a.dot(b) / a.cross(b).norm();
    }
  return cells;
}

// Calls visit(i, j, w) for the three edges of face f.
template <typename Visit>
void for_each_edge(const Cells& cells, int f, Visit&& visit) {
  for (int k = 0; k < 3; ++k)
    visit(cells.faces(f, (k + 1) % 3), cells.faces(f, (k + 2) % 3), cells.weight(f, k));
}

std::vector<Eigen::Matrix3d> fit_cell_rotations(const Cells& cells,
                                                const Vertices& deformed) {
  const int nv = static_cast<int>(cells.rest.rows());
  std::vector<Eigen::Matrix3d> covariance(nv, Eigen::Matrix3d::Zero());
  for (int f = 0; f < cells.faces.rows(); ++f) {
    Eigen::Matrix3d face_cov = Eigen::Matrix3d::Zero();
    for_each_edge(cells, f, [&](int i, int j, double w) {
      const Eigen::Vector3d rest_edge = (cells.rest.row(i) - cells.rest.row(j)).transpose();
      const Eigen::Vector3d edge = (deformed.row(i) - deformed.row(j)).transpose();
      face_cov += w * rest_edge * edge.transpose();
    });
    for (int k = 0; k < 3; ++k) covariance[cells.faces(f, k)] += face_cov;
  }
  std::vector<Eigen::Matrix3d> rotations(nv);
  for (int i = 0; i < nv; ++i) {
    if (!covariance[i].allFinite())
      throw NumericalError("ARAP rotation fit failed for cell " +
                           std::to_string(i) + " (non-finite covariance)");
    rotations[i] = fit_rotation(covariance[i]);
    if (!rotations[i].allFinite())
      throw NumericalError("ARAP rotation fit failed for cell " +
                           std::to_string(i));
  }
  return rotations;
}

double cell_energy(const Cells& cells, const Vertices& deformed,
                   const std::vector<Eigen::Matrix3d>& rotations) {
  double energy = 0.0;
  for (int f = 0; f < cells.faces.rows(); ++f)
    for (int k = 0; k < 3; ++k) {
      const Eigen::Matrix3d& r = rotations[cells.faces(f, k)];
      for_each_edge(cells, f, [&](int i, int j, double w) {
        const Eigen::Vector3d rest_edge = (cells.rest.row(i) - cells.rest.row(j)).transpose();
        const Eigen::Vector3d edge = (deformed.row(i) - deformed.row(j)).transpose();
        energy += w * (edge - r * rest_edge).squaredNorm();
      });
    }
  return energy;
}

// Rest pose moved by the best rigid fit of the constrained vertices to their
// targets. Local-global from the plain rest pose stalls on large rotations.
// Collinear constraint sets leave the rotation ambiguous; the rest pose is
// kept then.
Vertices rigid_initial_guess(const Vertices& rest, const std::vector<int>& fixed,
                             const Vertices& targets) {
  if (fixed.size() < 3) return rest;
  const Vertices source = select_rows(rest, fixed);
  const Eigen::RowVector3d source_mean = source.colwise().mean();
  const Eigen::RowVector3d target_mean = targets.colwise().mean();
  const Eigen::MatrixXd centered = source.rowwise() - source_mean;
  const Eigen::JacobiSVD<Eigen::MatrixXd> spread(centered);
  if (spread.singularValues()(1) <= 1e-9 * spread.singularValues()(0)) return rest;
  const Eigen::Matrix3d covariance =
      centered.transpose() * (targets.rowwise() - target_mean);
  const Eigen::Matrix3d rotation = fit_rotation(covariance);
  return ((rest.rowwise() - source_mean) * rotation.transpose()).rowwise() + target_mean;
}

}  // namespace

double arap_energy(const TexturedMesh& rest_mesh, const Vertices& deformed) {
  if (deformed.rows() != rest_mesh.vertices.rows())
    throw InvalidInputError("deformed vertex count " +
                            std::to_string(deformed.rows()) +
                            " does not match rest mesh " +
                            std::to_string(rest_mesh.vertices.rows()));
  const Cells cells = make_cells(rest_mesh);
  return cell_energy(cells, deformed, fit_cell_rotations(cells, deformed));
}

ArapConstraints arap_constraints_from_spec(const TexturedMesh& mesh,
                                           const DeformationSpec& spec) {
  spec.validate(mesh.num_vertices());
  ArapConstraints constraints;
  const Vertices handle_targets = spec.handle_targets(mesh.vertices);
  const Vertices anchor_targets = spec.resolved_anchor_targets(mesh.vertices);
  constraints.constrained_indices = spec.handle_indices;
  constraints.constrained_indices.insert(constraints.constrained_indices.end(),
                                         spec.anchor_indices.begin(),
                                         spec.anchor_indices.end());
  constraints.target_positions.resize(
      static_cast<Eigen::Index>(constraints.constrained_indices.size()), 3);
  constraints.target_positions << handle_targets, anchor_targets;
  return constraints;
}

ArapResult arap_deform(const TexturedMesh& mesh,
                       const ArapConstraints& constraints) {
  const int nv = mesh.num_vertices();
  const auto& fixed = constraints.constrained_indices;
  if (fixed.empty()) throw InvalidInputError("ARAP needs at least one constraint");
  if (constraints.target_positions.rows() !=
      static_cast<Eigen::Index>(fixed.size()))
    throw InvalidInputError("ARAP target count does not match constraints");
  if (constraints.max_iterations < 0)
    throw InvalidInputError("max_iterations must be non-negative");

  const SparseOperatorSet ops = build_operators(mesh);
  const Cells cells = make_cells(mesh);

  std::vector<int> slot(nv, -1);
  for (int v : fixed) {
    if (v < 0 || v >= nv)
      throw InvalidInputError("ARAP constraint index " + std::to_string(v) +
                              " out of range");
    if (slot[v] == -2)
      throw InvalidInputError("duplicate ARAP constraint " + std::to_string(v));
    slot[v] = -2;
  }
  {
    int count = 0;
    const auto label = connected_components(nv, mesh.faces, &count);
    std::vector<char> covered(count, 0);
    for (int v : fixed) covered[label[v]] = 1;
    for (int c = 0; c < count; ++c)
      if (!covered[c])
        throw FactorizationError("ARAP: connected component " +
                                 std::to_string(c) + " has no constraint");
  }
  std::vector<int> free_vertices;
  for (int v = 0; v < nv; ++v)
    if (slot[v] == -1) {
      slot[v] = static_cast<int>(free_vertices.size());
      free_vertices.push_back(v);
    }
  const int nfree = static_cast<int>(free_vertices.size());

  Vertices current = constraints.rigid_initialization
                         ? rigid_initial_guess(mesh.vertices, fixed,
                                               constraints.target_positions)
                         : mesh.vertices;
  for (std::size_t k = 0; k < fixed.size(); ++k)
    current.row(fixed[k]) =
        constraints.target_positions.row(static_cast<Eigen::Index>(k));

  // L_ff and L_fc blocks of the cotangent Laplacian.
  SparseMatrix l_free(nfree, nfree);
  SparseMatrix l_fixed(nfree, nv);
  {
    std::vector<Eigen::Triplet<double>> tf, tc;
    for (int col = 0; col < ops.laplacian.outerSize(); ++col) {
      for (SparseMatrix::InnerIterator it(ops.laplacian, col); it; ++it) {
        const int row = static_cast<int>(it.row());
        if (slot[row] < 0) continue;
        if (slot[col] >= 0)
          tf.emplace_back(slot[row], slot[col], it.value());
        else
          tc.emplace_back(slot[row], col, it.value());
      }
    }
    l_free.setFromTriplets(tf.begin(), tf.end());
    l_fixed.setFromTriplets(tc.begin(), tc.end());
  }
  Eigen::SimplicialLLT<SparseMatrix> cholesky;
  if (nfree > 0) {
    cholesky.compute(l_free);
    if (cholesky.info() != Eigen::Success)
      throw FactorizationError("ARAP: Cholesky factorization failed");
  }

  ArapResult result;
  auto rotations = fit_cell_rotations(cells, current);
  double energy = cell_energy(cells, current, rotations);
  result.energy_trace.push_back(energy);

  Vertices fixed_values = Vertices::Zero(nv, 3);
  for (std::size_t k = 0; k < fixed.size(); ++k)
    fixed_values.row(fixed[k]) =
        constraints.target_positions.row(static_cast<Eigen::Index>(k));
  const Eigen::MatrixXd fixed_rhs = l_fixed * fixed_values;

  for (int iter = 0; iter < constraints.max_iterations && nfree > 0; ++iter) {
    // Global step: L v = sum_f sum_(i,j) w (e_i - e_j) Rf (r_i - r_j), with
    // Rf the mean rotation of the face's three cells.
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(nfree, 3);
    for (int f = 0; f < mesh.num_faces(); ++f) {
      const Eigen::Matrix3d mean_rotation =
          (rotations[mesh.faces(f, 0)] + rotations[mesh.faces(f, 1)] +
           rotations[mesh.faces(f, 2)]) / 3.0;
      for_each_edge(cells, f, [&](int i, int j, double w) {
        const Eigen::RowVector3d term =
            (w * mean_rotation * (mesh.vertices.row(i) - mesh.vertices.row(j)).transpose())
                .transpose();
        if (slot[i] >= 0) rhs.row(slot[i]) += term;
        if (slot[j] >= 0) rhs.row(slot[j]) -= term;
      });
    }
    rhs -= fixed_rhs;
    Eigen::MatrixXd x = cholesky.solve(rhs);
    x += cholesky.solve(Eigen::MatrixXd(rhs - l_free * x));
    for (int k = 0; k < nfree; ++k) current.row(free_vertices[k]) = x.row(k);

    // Local step.
    rotations = fit_cell_rotations(cells, current);
    const double next = cell_energy(cells, current, rotations);
    result.energy_trace.push_back(next);
    result.iterations = iter + 1;
    const double change = std::abs(energy - next);
    energy = next;
    if (change < constraints.tolerance) break;
  }

  result.vertices = std::move(current);
  result.energy = energy;
  return result;
}

}  // namespace apap
