#include "apap/operators.hpp"

#include <Eigen/Geometry>
#include <cmath>

#include "apap/error.hpp"

namespace apap {

SparseMatrix SparseOperatorSet::mass_matrix() const {
  SparseMatrix m(mass.size(), mass.size());
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(mass.size()));
  for (Eigen::Index i = 0; i < mass.size(); ++i)
    triplets.emplace_back(static_cast<int>(i), static_cast<int>(i), mass[i]);
  m.setFromTriplets(triplets.begin(), triplets.end());
  return m;
}

SparseOperatorSet build_operators(const TexturedMesh& mesh) {
  validate(mesh);
  const int nv = mesh.num_vertices();
  const int nf = mesh.num_faces();

  std::vector<Eigen::Triplet<double>> grad_triplets;
  std::vector<Eigen::Triplet<double>> lap_triplets;
  grad_triplets.reserve(static_cast<std::size_t>(nf) * 9);
  lap_triplets.reserve(static_cast<std::size_t>(nf) * 12);
  Eigen::VectorXd mass(3 * nf);

  for (int f = 0; f < nf; ++f) {
    const int idx[3] = {mesh.faces(f, 0), mesh.faces(f, 1), mesh.faces(f, 2)};
    const Eigen::Vector3d p[3] = {mesh.vertices.row(idx[0]).transpose(),
                                  mesh.vertices.row(idx[1]).transpose(),
                                  mesh.vertices.row(idx[2]).transpose()};
    const Eigen::Vector3d area_normal = (p[1] - p[0]).cross(p[2] - p[0]);
    const double twice_area = area_normal.norm();
    if (!(0.5 * twice_area > kMinFaceArea))
      throw DegenerateFaceError(f, 0.5 * twice_area);
    const Eigen::Vector3d n = area_normal / twice_area;

    // Hat function gradient of corner k: n x (opposite edge) / (2A).
    for (int k = 0; k < 3; ++k) {
      const Eigen::Vector3d edge = p[(k + 2) % 3] - p[(k + 1) % 3];
      const Eigen::Vector3d g = n.cross(edge) / twice_area;
      for (int d = 0; d < 3; ++d)
        grad_triplets.emplace_back(3 * f + d, idx[k], g[d]);
    }
    mass.segment<3>(3 * f).setConstant(0.5 * twice_area);

    // Cotangent of the angle at corner k weighs the opposite edge.
    for (int k = 0; k < 3; ++k) {
      const int i = idx[(k + 1) % 3];
      const int j = idx[(k + 2) % 3];
      const Eigen::Vector3d a = p[(k + 1) % 3] - p[k];
      const Eigen::Vector3d b = p[(k + 2) % 3] - p[k];
      const double half_cot = 0.5 * a.dot(b) / a.cross(b).norm();
      lap_triplets.emplace_back(i, j, -half_cot);
      lap_triplets.emplace_back(j, i, -half_cot);
      lap_triplets.emplace_back(i, i, half_cot);
      lap_triplets.emplace_back(j, j, half_cot);
    }
  }

  SparseOperatorSet ops;
  ops.num_vertices = nv;
  ops.num_faces = nf;
  ops.grad.resize(3 * nf, nv);
  ops.grad.setFromTriplets(grad_triplets.begin(), grad_triplets.end());
  ops.grad.makeCompressed();
  ops.laplacian.resize(nv, nv);
  ops.laplacian.setFromTriplets(lap_triplets.begin(), lap_triplets.end());
  ops.laplacian.makeCompressed();
  ops.mass = std::move(mass);
  ops.faces = mesh.faces;
  return ops;
}

bool JacobianField::all_finite() const {
  for (const auto& m : per_face)
    if (!m.allFinite()) return false;
  return true;
}

StackedGradients JacobianField::to_stacked() const {
  StackedGradients stacked(3 * per_face.size(), 3);
  for (std::size_t f = 0; f < per_face.size(); ++f)
    stacked.block<3, 3>(static_cast<Eigen::Index>(3 * f), 0) =
        per_face[f].transpose();
  return stacked;
}

JacobianField JacobianField::from_stacked(const StackedGradients& stacked) {
  if (stacked.rows() % 3 != 0)
    throw InvalidInputError("stacked gradient rows not a multiple of 3");
  JacobianField field;
  field.per_face.resize(static_cast<std::size_t>(stacked.rows() / 3));
  for (std::size_t f = 0; f < field.per_face.size(); ++f)
    field.per_face[f] =
        stacked.block<3, 3>(static_cast<Eigen::Index>(3 * f), 0).transpose();
  return field;
}

Eigen::VectorXd JacobianField::flatten() const {
  Eigen::VectorXd flat(9 * per_face.size());
  for (std::size_t f = 0; f < per_face.size(); ++f)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        flat[static_cast<Eigen::Index>(9 * f + 3 * r + c)] = per_face[f](r, c);
  return flat;
}

JacobianField JacobianField::unflatten(const Eigen::VectorXd& flat) {
  if (flat.size() % 9 != 0)
    throw InvalidInputError("flattened Jacobian size not a multiple of 9");
  JacobianField field;
  field.per_face.resize(static_cast<std::size_t>(flat.size() / 9));
  for (std::size_t f = 0; f < field.per_face.size(); ++f)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        field.per_face[f](r, c) = flat[static_cast<Eigen::Index>(9 * f + 3 * r + c)];
  return field;
}

JacobianField jacobian_field(const SparseOperatorSet& ops,
                             const Vertices& vertices) {
  if (vertices.rows() != ops.num_vertices)
    throw InvalidInputError("vertex count does not match operators");
  const StackedGradients stacked = ops.grad * vertices;
  return JacobianField::from_stacked(stacked);
}

JacobianField jacobian_field(const TexturedMesh& mesh) {
  return jacobian_field(build_operators(mesh), mesh.vertices);
}

}  // namespace apap
