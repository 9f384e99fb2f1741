#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "apap/operators.hpp"
#include "fixtures.hpp"

namespace apap {
namespace {

// Cotangent Laplacian assembled from interior angles computed with acos, as
// an independent check of the operator code.
Eigen::MatrixXd angle_laplacian(const TexturedMesh& mesh) {
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(mesh.num_vertices(), mesh.num_vertices());
  for (int f = 0; f < mesh.num_faces(); ++f)
    for (int k = 0; k < 3; ++k) {
      const int o = mesh.faces(f, k), i = mesh.faces(f, (k + 1) % 3),
                j = mesh.faces(f, (k + 2) % 3);
      const Eigen::Vector3d a = (mesh.vertices.row(i) - mesh.vertices.row(o)).transpose();
      const Eigen::Vector3d b = (mesh.vertices.row(j) - mesh.vertices.row(o)).transpose();
      const double angle = std::acos(a.normalized().dot(b.normalized()));
      const double w = 0.5 / std::tan(angle);
      L(i, j) -= w;
      L(j, i) -= w;
      L(i, i) += w;
      L(j, j) += w;
    }
  return L;
}

class OperatorsOnRandomMeshes : public ::testing::TestWithParam<int> {};

TEST_P(OperatorsOnRandomMeshes, LaplacianIdentities) {
  const int seed = GetParam();
  const TexturedMesh mesh = seed % 2 ? testing::random_surface_mesh(80, seed)
                                     : testing::random_planar_mesh(80, seed);
  const SparseOperatorSet ops = build_operators(mesh);
  const Eigen::MatrixXd L(ops.laplacian);
  const Eigen::MatrixXd G(ops.grad);
  EXPECT_LT((L - L.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(L.rowwise().sum().cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((L - G.transpose() * ops.mass.asDiagonal() * G).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((L - angle_laplacian(mesh)).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_GT(L.diagonal().minCoeff(), 0.0);
  // Positive semi-definite.
  EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(L).eigenvalues().minCoeff(), -1e-9);
}

INSTANTIATE_TEST_SUITE_P(Seeds, OperatorsOnRandomMeshes, ::testing::Range(1, 7));

TEST(Operators, MassIsFaceAreaThreeTimes) {
  const TexturedMesh mesh = testing::height_field(5, 0.2, 1);
  const SparseOperatorSet ops = build_operators(mesh);
  ASSERT_EQ(ops.mass.size(), 3 * mesh.num_faces());
  for (int f = 0; f < mesh.num_faces(); ++f)
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(ops.mass[3 * f + k], face_area(mesh, f), 1e-15);
}

TEST(Operators, GradientOfLinearFunctionIsExactOnPlanarMesh) {
  const TexturedMesh mesh = testing::random_planar_mesh(60, 3);
  const SparseOperatorSet ops = build_operators(mesh);
  const Eigen::VectorXd f = 2.0 * mesh.vertices.col(0) - 3.0 * mesh.vertices.col(1);
  const Eigen::VectorXd g = ops.grad * f;
  for (int t = 0; t < mesh.num_faces(); ++t) {
    EXPECT_NEAR(g[3 * t + 0], 2.0, 1e-10);
    EXPECT_NEAR(g[3 * t + 1], -3.0, 1e-10);
    EXPECT_NEAR(g[3 * t + 2], 0.0, 1e-10);
  }
}

TEST(Operators, GradientIsTangentAndKillsConstants) {
  const TexturedMesh mesh = testing::uv_sphere(8, 10);
  const SparseOperatorSet ops = build_operators(mesh);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(mesh.num_vertices());
  EXPECT_LT((ops.grad * ones).cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::VectorXd g = ops.grad * mesh.vertices.col(2);
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const Eigen::Vector3d a = mesh.vertices.row(mesh.faces(f, 0)).transpose();
    const Eigen::Vector3d b = mesh.vertices.row(mesh.faces(f, 1)).transpose();
    const Eigen::Vector3d c = mesh.vertices.row(mesh.faces(f, 2)).transpose();
    const Eigen::Vector3d n = (b - a).cross(c - a).normalized();
    EXPECT_NEAR(g.segment<3>(3 * f).dot(n), 0.0, 1e-10);
  }
}

TEST(JacobianField, RestFieldIsTangentProjector) {
  const TexturedMesh mesh = testing::height_field(6, 0.3, 2);
  const JacobianField jac = jacobian_field(mesh);
  ASSERT_EQ(jac.num_faces(), mesh.num_faces());
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const Eigen::Vector3d a = mesh.vertices.row(mesh.faces(f, 0)).transpose();
    const Eigen::Vector3d b = mesh.vertices.row(mesh.faces(f, 1)).transpose();
    const Eigen::Vector3d c = mesh.vertices.row(mesh.faces(f, 2)).transpose();
    const Eigen::Vector3d n = (b - a).cross(c - a).normalized();
    const Eigen::Matrix3d expected = Eigen::Matrix3d::Identity() - n * n.transpose();
    EXPECT_LT((jac.per_face[f] - expected).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(JacobianField, MapsEdgesOfDeformedMesh) {
  // For an affine map x -> A x, each face Jacobian sends rest edges to
  // deformed edges.
  const TexturedMesh mesh = testing::random_surface_mesh(50, 9);
  const SparseOperatorSet ops = build_operators(mesh);
  Eigen::Matrix3d A;
  A << 1.2, 0.3, -0.1, 0.0, 0.8, 0.4, 0.2, -0.3, 1.1;
  const Vertices deformed = mesh.vertices * A.transpose();
  const JacobianField jac = jacobian_field(ops, deformed);
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const Eigen::Vector3d e = (mesh.vertices.row(mesh.faces(f, 1)) -
                               mesh.vertices.row(mesh.faces(f, 0))).transpose();
    const Eigen::Vector3d d = (deformed.row(mesh.faces(f, 1)) -
                               deformed.row(mesh.faces(f, 0))).transpose();
    EXPECT_LT((jac.per_face[f] * e - d).norm(), 1e-10);
  }
}

TEST(JacobianField, FlattenAndStackRoundTrip) {
  const JacobianField jac = jacobian_field(testing::random_surface_mesh(40, 2));
  const Eigen::VectorXd flat = jac.flatten();
  ASSERT_EQ(flat.size(), 9 * jac.num_faces());
  // Row-major: entry (1, 2) of face 0 is element 5.
  EXPECT_EQ(flat[5], jac.per_face[0](1, 2));
  const JacobianField back = JacobianField::unflatten(flat);
  const JacobianField stacked = JacobianField::from_stacked(jac.to_stacked());
  for (int f = 0; f < jac.num_faces(); ++f) {
    EXPECT_EQ(back.per_face[f], jac.per_face[f]);
    EXPECT_EQ(stacked.per_face[f], jac.per_face[f]);
  }
  // Stacked rows are per-face gradients, i.e. the transposed matrices.
  const Eigen::Matrix3d first_block = jac.to_stacked().topRows(3);
  EXPECT_EQ(first_block, jac.per_face[0].transpose());
  EXPECT_TRUE(jac.all_finite());
}

}  // namespace
}  // namespace apap
