#include "apap/poisson.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "apap/error.hpp"

namespace apap {

using nlohmann::json;

void DeformationSpec::validate(int num_vertices) const {
  if (handle_indices.empty()) throw InvalidInputError("spec has no handles");
  if (anchor_indices.empty()) throw InvalidInputError("spec has no anchors");
  if (handle_displacements.rows() !=
      static_cast<Eigen::Index>(handle_indices.size()))
    throw InvalidInputError("handle displacement count does not match handles");
  if (anchor_targets.rows() != 0 &&
      anchor_targets.rows() != static_cast<Eigen::Index>(anchor_indices.size()))
    throw InvalidInputError("anchor target count does not match anchors");
  std::set<int> handles;
  for (int h : handle_indices) {
    if (h < 0 || h >= num_vertices)
      throw InvalidInputError("handle index " + std::to_string(h) +
                              " out of range");
    if (!handles.insert(h).second)
      throw InvalidInputError("duplicate handle index " + std::to_string(h));
  }
  std::set<int> anchors;
  for (int a : anchor_indices) {
    if (a < 0 || a >= num_vertices)
      throw InvalidInputError("anchor index " + std::to_string(a) +
                              " out of range");
    if (handles.count(a))
      throw InvalidInputError("vertex " + std::to_string(a) +
                              " is both handle and anchor");
    if (!anchors.insert(a).second)
      throw InvalidInputError("duplicate anchor index " + std::to_string(a));
  }
  if (lambda && !(*lambda > 0.0))
    throw InvalidInputError("lambda must be positive");
}

Vertices select_rows(const Vertices& values, const std::vector<int>& indices) {
  Vertices out(static_cast<Eigen::Index>(indices.size()), 3);
  for (std::size_t i = 0; i < indices.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = values.row(indices[i]);
  return out;
}

Vertices DeformationSpec::handle_targets(const Vertices& rest) const {
  return select_rows(rest, handle_indices) + handle_displacements;
}

Vertices DeformationSpec::resolved_anchor_targets(const Vertices& rest) const {
  if (anchor_targets.rows() > 0) return anchor_targets;
  return select_rows(rest, anchor_indices);
}

namespace {

Eigen::RowVector3d parse_vec3(const json& value, const char* what) {
  if (!value.is_array() || value.size() != 3)
    throw ParseError(std::string(what) + " must be an array of 3 numbers");
  Eigen::RowVector3d out;
  for (int k = 0; k < 3; ++k) {
    if (!value[k].is_number())
      throw ParseError(std::string(what) + " must contain numbers");
    out[k] = value[k].get<double>();
  }
  return out;
}

}  // namespace

DeformationSpec parse_deformation_spec(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("deformation spec: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("handles") || !doc.contains("anchors"))
    throw ParseError("deformation spec needs 'handles' and 'anchors'");

  DeformationSpec spec;
  const auto& handles = doc.at("handles");
  const auto& anchors = doc.at("anchors");
  if (!handles.is_array() || !anchors.is_array())
    throw ParseError("'handles' and 'anchors' must be arrays");
  try {
    spec.handle_displacements.resize(static_cast<Eigen::Index>(handles.size()), 3);
    for (std::size_t i = 0; i < handles.size(); ++i) {
      spec.handle_indices.push_back(handles[i].at("index").get<int>());
      spec.handle_displacements.row(static_cast<Eigen::Index>(i)) =
          handles[i].contains("displacement")
              ? parse_vec3(handles[i]["displacement"], "displacement")
              : Eigen::RowVector3d::Zero();
    }
    const bool any_target = std::any_of(
        anchors.begin(), anchors.end(),
        [](const json& a) { return a.contains("target"); });
    const bool all_targets = std::all_of(
        anchors.begin(), anchors.end(),
        [](const json& a) { return a.contains("target"); });
    if (any_target && !all_targets)
      throw ParseError("either all anchors carry a target or none do");
    if (all_targets && !anchors.empty())
      spec.anchor_targets.resize(static_cast<Eigen::Index>(anchors.size()), 3);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      spec.anchor_indices.push_back(anchors[i].at("index").get<int>());
      if (all_targets)
        spec.anchor_targets.row(static_cast<Eigen::Index>(i)) =
            parse_vec3(anchors[i]["target"], "target");
    }
    if (doc.contains("lambda") && !doc["lambda"].is_null())
      spec.lambda = doc["lambda"].get<double>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("deformation spec: ") + e.what());
  }
  return spec;
}

DeformationSpec load_deformation_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open deformation spec " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_deformation_spec(buffer.str());
}

std::string deformation_spec_to_json(const DeformationSpec& spec) {
  json doc;
  doc["handles"] = json::array();
  for (std::size_t i = 0; i < spec.handle_indices.size(); ++i) {
    const auto d = spec.handle_displacements.row(static_cast<Eigen::Index>(i));
    doc["handles"].push_back(
        {{"index", spec.handle_indices[i]}, {"displacement", {d[0], d[1], d[2]}}});
  }
  doc["anchors"] = json::array();
  for (std::size_t i = 0; i < spec.anchor_indices.size(); ++i) {
    json anchor = {{"index", spec.anchor_indices[i]}};
    if (spec.anchor_targets.rows() > 0) {
      const auto t = spec.anchor_targets.row(static_cast<Eigen::Index>(i));
      anchor["target"] = {t[0], t[1], t[2]};
    }
    doc["anchors"].push_back(anchor);
  }
  if (spec.lambda) doc["lambda"] = *spec.lambda;
  return doc.dump(2);
}

void save_deformation_spec(const DeformationSpec& spec,
                           const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << deformation_spec_to_json(spec) << "\n";
}

namespace {

void require_constrained_components(int num_vertices, const Faces& faces,
                                    const std::vector<int>& constrained,
                                    const char* what) {
  int count = 0;
  const auto label = connected_components(num_vertices, faces, &count);
  std::vector<char> covered(count, 0);
  for (int v : constrained) covered[label[v]] = 1;
  for (int c = 0; c < count; ++c) {
    if (covered[c]) continue;
    int first = -1, size = 0;
    for (int v = 0; v < num_vertices; ++v) {
      if (label[v] != c) continue;
      if (first < 0) first = v;
      ++size;
    }
    throw FactorizationError("connected component " + std::to_string(c) +
                             " (" + std::to_string(size) +
                             " vertices, first vertex " + std::to_string(first) +
                             ") has no " + what);
  }
}

void check_indices(const std::vector<int>& indices, int num_vertices,
                   const char* what) {
  if (indices.empty())
    throw InvalidInputError(std::string("no ") + what + " given");
  std::set<int> seen;
  for (int v : indices) {
    if (v < 0 || v >= num_vertices)
      throw InvalidInputError(std::string(what) + " index " +
                              std::to_string(v) + " out of range");
    if (!seen.insert(v).second)
      throw InvalidInputError(std::string("duplicate ") + what + " index " +
                              std::to_string(v));
  }
}

}  // namespace

FactorizedSystem build_system(const SparseOperatorSet& ops,
                              const std::vector<int>& anchors, double lambda) {
  if (!(lambda > 0.0)) throw InvalidInputError("lambda must be positive");
  check_indices(anchors, ops.num_vertices, "anchor");
  require_constrained_components(ops.num_vertices, ops.faces, anchors,
                                 "anchor");

  FactorizedSystem sys;
  sys.num_vertices_ = ops.num_vertices;
  sys.num_faces_ = ops.num_faces;
  sys.lambda_ = lambda;
  sys.anchors_ = anchors;

  const SparseMatrix& L = ops.laplacian;
  SparseMatrix anchor_term(ops.num_vertices, ops.num_vertices);
  {
    std::vector<Eigen::Triplet<double>> t;
    for (int a : anchors) t.emplace_back(a, a, lambda);
    anchor_term.setFromTriplets(t.begin(), t.end());
  }
  sys.system_ = SparseMatrix(L.transpose() * L) + anchor_term;
  sys.system_.makeCompressed();

  const SparseMatrix mass = ops.mass_matrix();
  sys.rhs_operator_ = SparseMatrix(L.transpose() * SparseMatrix(ops.grad.transpose()) * mass);
  sys.rhs_operator_.makeCompressed();
  sys.rhs_operator_t_ = sys.rhs_operator_.transpose();
  sys.rhs_operator_t_.makeCompressed();

  auto cholesky = std::make_shared<Eigen::SimplicialLLT<SparseMatrix>>();
  cholesky->compute(sys.system_);
  if (cholesky->info() != Eigen::Success)
    throw FactorizationError("Cholesky factorization of the Poisson system failed");
  sys.cholesky_ = std::move(cholesky);
  return sys;
}

Eigen::MatrixXd FactorizedSystem::solve_system(const Eigen::MatrixXd& rhs) const {
  Eigen::MatrixXd x = cholesky_->solve(rhs);
  const Eigen::MatrixXd residual = rhs - system_ * x;
  x += cholesky_->solve(residual);
  return x;
}

Vertices solve(const FactorizedSystem& system, const JacobianField& jac,
               const Vertices& anchor_targets) {
  if (jac.num_faces() != system.num_faces_)
    throw InvalidInputError("Jacobian field has " +
                            std::to_string(jac.num_faces()) + " faces, system has " +
                            std::to_string(system.num_faces_));
  if (anchor_targets.rows() != static_cast<Eigen::Index>(system.anchors_.size()))
    throw InvalidInputError("anchor target count does not match anchors");

  Eigen::MatrixXd rhs = system.rhs_operator_ * jac.to_stacked();
  for (std::size_t i = 0; i < system.anchors_.size(); ++i)
    rhs.row(system.anchors_[i]) +=
        system.lambda_ * anchor_targets.row(static_cast<Eigen::Index>(i));
  return system.solve_system(rhs);
}

JacobianField solve_adjoint(const FactorizedSystem& system,
                            const Vertices& upstream_grad) {
  if (upstream_grad.rows() != system.num_vertices_)
    throw InvalidInputError("upstream gradient has " +
                            std::to_string(upstream_grad.rows()) +
                            " rows, expected " +
                            std::to_string(system.num_vertices_));
  const Eigen::MatrixXd y = system.solve_system(upstream_grad);
  const StackedGradients stacked = system.rhs_operator_t_ * y;
  return JacobianField::from_stacked(stacked);
}

Vertices solve_hard_constrained(const SparseOperatorSet& ops,
                                const JacobianField& jac,
                                const std::vector<int>& constrained,
                                const Vertices& targets) {
  const int nv = ops.num_vertices;
  check_indices(constrained, nv, "constrained vertex");
  if (targets.rows() != static_cast<Eigen::Index>(constrained.size()))
    throw InvalidInputError("target count does not match constrained vertices");
  if (jac.num_faces() != ops.num_faces)
    throw InvalidInputError("Jacobian field does not match operators");
  require_constrained_components(nv, ops.faces, constrained,
                                 "constrained vertex");

  Vertices result(nv, 3);
  std::vector<int> slot(nv, -1);
  for (std::size_t i = 0; i < constrained.size(); ++i) {
    slot[constrained[i]] = -2;
    result.row(constrained[i]) = targets.row(static_cast<Eigen::Index>(i));
  }
  std::vector<int> free_vertices;
  for (int v = 0; v < nv; ++v)
    if (slot[v] == -1) {
      slot[v] = static_cast<int>(free_vertices.size());
      free_vertices.push_back(v);
    }
  if (free_vertices.empty()) return result;

  const Eigen::MatrixXd b =
      SparseMatrix(ops.grad.transpose()) * (ops.mass.asDiagonal() * jac.to_stacked());

  SparseMatrix select_free(nv, static_cast<Eigen::Index>(free_vertices.size()));
  SparseMatrix select_fixed(nv, static_cast<Eigen::Index>(constrained.size()));
  {
    std::vector<Eigen::Triplet<double>> tf, tc;
    for (std::size_t i = 0; i < free_vertices.size(); ++i)
      tf.emplace_back(free_vertices[i], static_cast<int>(i), 1.0);
    for (std::size_t i = 0; i < constrained.size(); ++i)
      tc.emplace_back(constrained[i], static_cast<int>(i), 1.0);
    select_free.setFromTriplets(tf.begin(), tf.end());
    select_fixed.setFromTriplets(tc.begin(), tc.end());
  }
  const SparseMatrix L_free = ops.laplacian * select_free;
  const SparseMatrix L_fixed = ops.laplacian * select_fixed;
  const SparseMatrix normal = SparseMatrix(L_free.transpose()) * L_free;

  Eigen::SimplicialLLT<SparseMatrix> cholesky(normal);
  if (cholesky.info() != Eigen::Success)
    throw FactorizationError("Cholesky factorization of the constrained system failed");
  const Eigen::MatrixXd rhs =
      L_free.transpose() * (b - L_fixed * Eigen::MatrixXd(targets));
  Eigen::MatrixXd x = cholesky.solve(rhs);
  x += cholesky.solve(Eigen::MatrixXd(rhs - normal * x));
  for (std::size_t i = 0; i < free_vertices.size(); ++i)
    result.row(free_vertices[i]) = x.row(static_cast<Eigen::Index>(i));
  return result;
}

}  // namespace apap
