#include "apap/deform.hpp"

#include <Eigen/LU>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <queue>
#include <random>
#include <sstream>

#include "apap/arap.hpp"

namespace apap {

using nlohmann::json;

namespace {

const std::pair<PriorMode, const char*> kPriorNames[] = {
    {PriorMode::kNone, "none"},
    {PriorMode::kAnalytic, "analytic"},
    {PriorMode::kRemote, "remote"},
};

const std::pair<Variant, const char*> kVariantNames[] = {
    {Variant::kOurs, "ours"},
    {Variant::kArap, "arap"},
    {Variant::kLhOnly, "lh_only"},
    {Variant::kNoLora, "no_lora"},
    {Variant::kSecondOnly, "second_only"},
    {Variant::kArapInit, "arap_init"},
    {Variant::kPoissonInit, "poisson_init"},
};

std::string format_double(double value) {
  char buffer[64];
  const auto [end, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, end);
}

}  // namespace

std::string to_string(PriorMode mode) {
  for (const auto& [m, name] : kPriorNames)
    if (m == mode) return name;
  return "none";
}

std::string to_string(Variant variant) {
  for (const auto& [v, name] : kVariantNames)
    if (v == variant) return name;
  return "ours";
}

PriorMode parse_prior_mode(const std::string& text) {
  for (const auto& [m, name] : kPriorNames)
    if (text == name) return m;
  throw InvalidInputError("unknown prior mode \"" + text + "\"");
}

Variant parse_variant(const std::string& text) {
  for (const auto& [v, name] : kVariantNames)
    if (text == name) return v;
  throw InvalidInputError("unknown variant \"" + text + "\"");
}

void APAPConfig::validate() const {
  if (first_stage_iters < 0) throw InvalidInputError("first_stage_iters must be >= 0");
  if (second_stage_iters && *second_stage_iters < 0)
    throw InvalidInputError("second_stage_iters must be >= 0");
  if (!(learning_rate > 0.0)) throw InvalidInputError("learning_rate must be positive");
  if (!(lambda > 0.0)) throw InvalidInputError("lambda must be positive");
  if (!(t_min > 0.0 && t_min < t_max && t_max < 1.0))
    throw InvalidInputError("t_range must lie inside (0, 1) with t_min < t_max");
  if (!(cfg_scale >= 0.0)) throw InvalidInputError("cfg_scale must be non-negative");
  if (resolution <= 0) throw InvalidInputError("resolution must be positive");
  if (!(prior_weight > 0.0)) throw InvalidInputError("prior_weight must be positive");
  if (!(sigma_px > 0.0)) throw InvalidInputError("sigma_px must be positive");
  if (finetune_steps && *finetune_steps <= 0)
    throw InvalidInputError("finetune_steps must be positive");
  if (!(finetune_lr > 0.0)) throw InvalidInputError("finetune_lr must be positive");
  if (lora_rank <= 0) throw InvalidInputError("lora_rank must be positive");
}

int APAPConfig::resolved_second_stage_iters(bool planar) const {
  return second_stage_iters.value_or(planar ? kSecondStageIters2D : kSecondStageIters3D);
}

int APAPConfig::resolved_finetune_steps(bool planar) const {
  return finetune_steps.value_or(planar ? kFinetuneSteps2D : kFinetuneSteps3D);
}

CameraRig APAPConfig::resolved_viewpoints(bool planar) const {
  return viewpoints.value_or(planar ? CameraRig::kPlanar : CameraRig::kFourView);
}

APAPConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("config must be a JSON object");

  APAPConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "first_stage_iters") c.first_stage_iters = value.get<int>();
      else if (key == "second_stage_iters") c.second_stage_iters = value.get<int>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "lambda") c.lambda = value.get<double>();
      else if (key == "cfg_scale") c.cfg_scale = value.get<double>();
      else if (key == "t_range") {
        const auto range = value.get<std::vector<double>>();
        if (range.size() != 2) throw ParseError("t_range must have two entries");
        c.t_min = range[0];
        c.t_max = range[1];
      } else if (key == "resolution") c.resolution = value.get<int>();
      else if (key == "viewpoints") {
        const auto name = value.get<std::string>();
        if (name == "planar") c.viewpoints = CameraRig::kPlanar;
        else if (name == "four_view") c.viewpoints = CameraRig::kFourView;
        else throw ParseError("unknown viewpoints \"" + name + "\"");
      } else if (key == "seed") c.seed = value.get<std::int64_t>();
      else if (key == "prior_mode") c.prior_mode = parse_prior_mode(value.get<std::string>());
      else if (key == "prior_weight") c.prior_weight = value.get<double>();
      else if (key == "prompt") c.prompt = value.get<std::string>();
      else if (key == "weighting_mode") c.weighting_mode = value.get<std::string>();
      else if (key == "variant") c.variant = parse_variant(value.get<std::string>());
      else if (key == "endpoint") c.endpoint = value.get<std::string>();
      else if (key == "finetune_steps") c.finetune_steps = value.get<int>();
      else if (key == "finetune_lr") c.finetune_lr = value.get<double>();
      else if (key == "lora_rank") c.lora_rank = value.get<int>();
      else if (key == "sigma_px") c.sigma_px = value.get<double>();
      else throw ParseError("unknown config key \"" + key + "\"");
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("config has a field of the wrong type: ") + e.what());
  } catch (const InvalidInputError& e) {
    throw ParseError(e.what());
  }
  c.validate();
  return c;
}

APAPConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const APAPConfig& c) {
  json j = {
      {"first_stage_iters", c.first_stage_iters},
      {"learning_rate", c.learning_rate},
      {"lambda", c.lambda},
      {"cfg_scale", c.cfg_scale},
      {"t_range", {c.t_min, c.t_max}},
      {"resolution", c.resolution},
      {"seed", c.seed},
      {"prior_mode", to_string(c.prior_mode)},
      {"prior_weight", c.prior_weight},
      {"prompt", c.prompt},
      {"weighting_mode", c.weighting_mode},
      {"variant", to_string(c.variant)},
      {"endpoint", c.endpoint},
      {"finetune_lr", c.finetune_lr},
      {"lora_rank", c.lora_rank},
      {"sigma_px", c.sigma_px},
  };
  if (c.second_stage_iters) j["second_stage_iters"] = *c.second_stage_iters;
  if (c.finetune_steps) j["finetune_steps"] = *c.finetune_steps;
  if (c.viewpoints)
    j["viewpoints"] = *c.viewpoints == CameraRig::kPlanar ? "planar" : "four_view";
  return j.dump(2);
}

OptimizerState OptimizerState::zeros(Eigen::Index size) {
  OptimizerState s;
  s.first_moment = Eigen::VectorXd::Zero(size);
  s.second_moment = Eigen::VectorXd::Zero(size);
  return s;
}

bool adam_step(OptimizerState& state, Eigen::VectorXd& params,
               const Eigen::VectorXd& grad, double learning_rate) {
  if (params.size() != grad.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw InvalidInputError("ADAM shape mismatch: params " + std::to_string(params.size()) +
                            ", grad " + std::to_string(grad.size()) + ", state " +
                            std::to_string(state.first_moment.size()));
  if (!grad.allFinite()) return false;
  ++state.step;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double m_hat = state.first_moment[i] / c1;
    const double v_hat = state.second_moment[i] / c2;
    params[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
  return true;
}

HandleLoss handle_loss(const Vertices& vertices, const Vertices& rest,
                       const DeformationSpec& spec) {
  const Vertices targets = spec.handle_targets(rest);
  HandleLoss out;
  out.gradient = Vertices::Zero(vertices.rows(), 3);
  for (std::size_t k = 0; k < spec.handle_indices.size(); ++k) {
    const int v = spec.handle_indices[k];
    if (v < 0 || v >= vertices.rows())
      throw InvalidInputError("handle index " + std::to_string(v) + " out of range");
    const Eigen::RowVector3d diff = vertices.row(v) - targets.row(static_cast<Eigen::Index>(k));
    out.value += diff.squaredNorm();
    out.gradient.row(v) += 2.0 * diff;
  }
  return out;
}

void write_trace_csv(const std::vector<TraceRecord>& trace,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trace " + path.string());
  out << "iteration,handle_loss,guidance_grad_norm\n";
  for (const TraceRecord& r : trace)
    out << r.iteration << ',' << format_double(r.handle_loss) << ','
        << format_double(r.guidance_grad_norm) << '\n';
  if (!out) throw IoError("failed writing trace " + path.string());
}

namespace {

double image_norm(const Image& image) {
  double sum = 0.0;
  for (float v : image.data) sum += static_cast<double>(v) * v;
  return std::sqrt(sum);
}

bool all_finite(const Image& image) {
  for (float v : image.data)
    if (!std::isfinite(v)) return false;
  return true;
}

void check_stage_inputs(const StageInputs& in) {
  if (in.system.num_vertices() != in.mesh.num_vertices() ||
      in.system.num_faces() != in.mesh.num_faces())
    throw InvalidInputError("factorized system does not match mesh");
}

int next_iteration(const std::vector<TraceRecord>* trace) {
  return trace && !trace->empty() ? trace->back().iteration + 1 : 0;
}

}  // namespace

JacobianField first_stage(JacobianField jac, const StageInputs& in, int iterations,
                          std::vector<TraceRecord>* trace) {
  if (iterations < 0) throw InvalidInputError("iteration count must be >= 0");
  check_stage_inputs(in);
  if (iterations == 0) return jac;
  const Vertices& rest = in.mesh.vertices;
  const Vertices anchor_targets = in.spec.resolved_anchor_targets(rest);
  Eigen::VectorXd params = jac.flatten();
  OptimizerState state = OptimizerState::zeros(params.size());
  int iteration = next_iteration(trace);
  for (int it = 0; it < iterations; ++it, ++iteration) {
    const JacobianField current = JacobianField::unflatten(params);
    const Vertices v = solve(in.system, current, anchor_targets);
    const HandleLoss loss = handle_loss(v, rest, in.spec);
    const Eigen::VectorXd grad = solve_adjoint(in.system, loss.gradient).flatten();
    if (trace) trace->push_back({iteration, 1, loss.value, 0.0, {}, {}, -1});
    if (!adam_step(state, params, grad, in.config.learning_rate))
      throw NumericalError("non-finite handle gradient at iteration " +
                           std::to_string(iteration));
  }
  return JacobianField::unflatten(params);
}

JacobianField second_stage(JacobianField jac, const StageInputs& in, int iterations,
                           GuidanceProvider* guidance, const std::vector<Camera>& cameras,
                           std::vector<TraceRecord>* trace, SecondStageStats* stats,
                           const GradientObserver& observer) {
  if (iterations < 0) throw InvalidInputError("iteration count must be >= 0");
  check_stage_inputs(in);
  if (iterations == 0) return jac;
  if (guidance && cameras.empty()) throw InvalidInputError("second stage needs a camera");
  const Vertices& rest = in.mesh.vertices;
  const Vertices anchor_targets = in.spec.resolved_anchor_targets(rest);
  RenderOptions render_options;
  render_options.sigma_px = in.config.sigma_px;

  Eigen::VectorXd params = jac.flatten();
  OptimizerState state = OptimizerState::zeros(params.size());
  std::mt19937_64 rng(static_cast<std::uint64_t>(in.config.seed));
  std::uniform_int_distribution<int> pick_view(
      0, std::max(0, static_cast<int>(cameras.size()) - 1));
  int iteration = next_iteration(trace);
  for (int it = 0; it < iterations; ++it, ++iteration) {
    const JacobianField current = JacobianField::unflatten(params);
    const Vertices v = solve(in.system, current, anchor_targets);
    const HandleLoss loss = handle_loss(v, rest, in.spec);
    const JacobianField handle_part = solve_adjoint(in.system, loss.gradient);

    TraceRecord record{iteration, 2, loss.value, 0.0, {}, {}, -1};
    JacobianField guidance_part;
    guidance_part.per_face.assign(current.per_face.size(), Eigen::Matrix3d::Zero());
    if (guidance) {
      const int view = pick_view(rng);
      record.view_index = view;
      const Camera& camera = cameras[view];
      const RenderOutput render = rasterize(in.mesh, v, camera, render_options);
      GuidanceResult result;
      bool usable = true;
      try {
        result = guidance->gradient(render.image, {view, iteration});
      } catch (const NonFinitePayloadError&) {
        usable = false;
      }
      if (usable && !result.gradient.same_shape(render.image))
        throw MalformedResponseError("guidance gradient shape does not match the render");
      if (usable && !all_finite(result.gradient)) usable = false;
      if (usable) {
        record.guidance_grad_norm = image_norm(result.gradient);
        record.prior_loss = result.loss;
        record.t = result.t;
        const Vertices vertex_grad =
            rasterize_backward(render, in.mesh, v, camera, result.gradient);
        if (vertex_grad.allFinite())
          guidance_part = solve_adjoint(in.system, vertex_grad);
        else
          usable = false;
      }
      if (!usable && stats) ++stats->skipped_guidance;
    }

    const Eigen::VectorXd total = handle_part.flatten() + guidance_part.flatten();
    if (observer) observer({iteration, &handle_part, &guidance_part, &total});
    if (trace) trace->push_back(record);
    if (!adam_step(state, params, total, in.config.learning_rate))
      throw NumericalError("non-finite gradient at iteration " + std::to_string(iteration));
  }
  return JacobianField::unflatten(params);
}

std::unique_ptr<GuidanceProvider> make_guidance(const TexturedMesh& mesh,
                                                const APAPConfig& config,
                                                const std::vector<Camera>& cameras) {
  switch (config.prior_mode) {
    case PriorMode::kNone:
      return nullptr;
    case PriorMode::kAnalytic: {
      RenderOptions options;
      options.sigma_px = config.sigma_px;
      std::vector<Image> targets;
      for (const Camera& camera : cameras)
        targets.push_back(rasterize(mesh, camera, options).image);
      return std::make_unique<AnalyticL2Prior>(std::move(targets), config.prior_weight);
    }
    case PriorMode::kRemote: {
      if (config.endpoint.empty())
        throw InvalidInputError("remote prior needs a guidance endpoint");
      GuidanceContext context;
      context.prompt = config.prompt;
      context.cfg_scale = config.cfg_scale;
      context.t_min = config.t_min;
      context.t_max = config.t_max;
      context.seed = config.seed;
      context.weighting_mode = config.weighting_mode;
      return std::make_unique<RemoteSdsProvider>(config.endpoint, context);
    }
  }
  return nullptr;
}

DeformationResult deform(const TexturedMesh& mesh, const DeformationSpec& spec,
                         const APAPConfig& config, GuidanceProvider* guidance) {
  validate(mesh);
  config.validate();
  spec.validate(mesh.num_vertices());
  const bool planar = mesh.is_planar;

  DeformationResult result;
  result.config = config;
  result.mesh = mesh;

  if (config.variant == Variant::kArap) {
    const ArapResult arap = arap_deform(mesh, arap_constraints_from_spec(mesh, spec));
    result.mesh.vertices = arap.vertices;
    result.jacobians = jacobian_field(result.mesh);
    result.stage_boundary_vertices = arap.vertices;
    return result;
  }

  const std::vector<Camera> cameras =
      canonical_cameras(config.resolved_viewpoints(planar), config.resolution);
  const SparseOperatorSet ops = build_operators(mesh);
  const FactorizedSystem system =
      build_system(ops, spec.anchor_indices, spec.lambda.value_or(config.lambda));
  const StageInputs inputs{mesh, system, spec, config};
  const Vertices anchor_targets = spec.resolved_anchor_targets(mesh.vertices);

  // Stage one, or the initialization that replaces it.
  JacobianField jac = jacobian_field(ops, mesh.vertices);
  switch (config.variant) {
    case Variant::kSecondOnly:
      break;
    case Variant::kArapInit: {
      const ArapResult arap = arap_deform(mesh, arap_constraints_from_spec(mesh, spec));
      jac = jacobian_field(ops, arap.vertices);
      break;
    }
    case Variant::kPoissonInit: {
      const ArapConstraints hard = arap_constraints_from_spec(mesh, spec);
      const Vertices v = solve_hard_constrained(ops, jac, hard.constrained_indices,
                                                hard.target_positions);
      jac = jacobian_field(ops, v);
      break;
    }
    default:
      jac = first_stage(std::move(jac), inputs, config.first_stage_iters, &result.trace);
      result.first_stage_iters = config.first_stage_iters;
      break;
  }
  result.stage_boundary_vertices = solve(system, jac, anchor_targets);

  // Stage two.
  std::unique_ptr<GuidanceProvider> owned;
  GuidanceProvider* prior = nullptr;
  if (config.variant != Variant::kLhOnly) {
    if (guidance) {
      prior = guidance;
    } else {
      owned = make_guidance(mesh, config, cameras);
      prior = owned.get();
    }
  }
  const bool finetune = config.prior_mode == PriorMode::kRemote && prior &&
                        config.variant != Variant::kNoLora;
  if (finetune) {
    RenderOptions options;
    options.sigma_px = config.sigma_px;
    FinetuneRequest request;
    for (const Camera& camera : cameras)
      request.images.push_back(rasterize(mesh, camera, options).image);
    request.steps = config.resolved_finetune_steps(planar);
    request.learning_rate = config.finetune_lr;
    request.lora_rank = config.lora_rank;
    request.prompt = config.prompt;
    try {
      result.finetune = request_finetune(config.endpoint, request);
    } catch (const GuidanceError& e) {
      throw DeformationAborted(std::string("finetune failed: ") + e.what(), result.trace);
    }
    if (auto* remote = dynamic_cast<RemoteSdsProvider*>(prior))
      remote->set_adapter(result.finetune->adapter_id);
  }

  result.second_stage_iters = config.resolved_second_stage_iters(planar);
  SecondStageStats stats;
  try {
    jac = second_stage(std::move(jac), inputs, result.second_stage_iters, prior, cameras,
                       &result.trace, &stats);
  } catch (const DeformationAborted&) {
    throw;
  } catch (const GuidanceError& e) {
    throw DeformationAborted(e.what(), result.trace);
  }
  result.skipped_guidance = stats.skipped_guidance;

  result.mesh.vertices = solve(system, jac, anchor_targets);
  result.jacobians = std::move(jac);
  return result;
}

std::vector<double> geodesic_distances(const TexturedMesh& mesh,
                                       const std::vector<int>& sources) {
  const int nv = mesh.num_vertices();
  if (sources.empty()) throw InvalidInputError("geodesic distances need a source");
  std::vector<std::vector<std::pair<int, double>>> adjacency(nv);
  for (const auto& [a, b] : unique_edges(mesh.faces)) {
    const double length = (mesh.vertices.row(a) - mesh.vertices.row(b)).norm();
    adjacency[a].emplace_back(b, length);
    adjacency[b].emplace_back(a, length);
  }
  std::vector<double> dist(nv, std::numeric_limits<double>::infinity());
  using Entry = std::pair<double, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  for (int s : sources) {
    if (s < 0 || s >= nv)
      throw InvalidInputError("geodesic source " + std::to_string(s) + " out of range");
    dist[s] = 0.0;
    queue.emplace(0.0, s);
  }
  while (!queue.empty()) {
    const auto [d, v] = queue.top();
    queue.pop();
    if (d > dist[v]) continue;
    for (const auto& [w, length] : adjacency[v]) {
      const double candidate = d + length;
      if (candidate < dist[w]) {
        dist[w] = candidate;
        queue.emplace(candidate, w);
      }
    }
  }
  return dist;
}

JacobianField propagate_handle_transforms(const JacobianField& jac0,
                                          const TexturedMesh& mesh,
                                          const std::vector<int>& handle_vertices,
                                          const std::vector<Eigen::Matrix3d>& transforms,
                                          double falloff_radius) {
  if (!(falloff_radius > 0.0)) throw InvalidInputError("falloff radius must be positive");
  if (handle_vertices.size() != transforms.size())
    throw InvalidInputError("one transform per handle is required");
  if (jac0.num_faces() != mesh.num_faces())
    throw InvalidInputError("Jacobian field does not match mesh");
  for (std::size_t k = 0; k < transforms.size(); ++k)
    if (!(std::abs(transforms[k].determinant()) >= 1e-8))
      throw InvalidInputError("handle transform " + std::to_string(k) + " is singular");

  JacobianField out = jac0;
  for (std::size_t k = 0; k < transforms.size(); ++k) {
    const std::vector<double> dist = geodesic_distances(mesh, {handle_vertices[k]});
    for (int f = 0; f < mesh.num_faces(); ++f) {
      const double d = std::min({dist[mesh.faces(f, 0)], dist[mesh.faces(f, 1)],
                                 dist[mesh.faces(f, 2)]});
      const double ratio = d / falloff_radius;
      const double w = std::isfinite(ratio) ? std::exp(-ratio * ratio) : 0.0;
      if (w == 0.0) continue;
      const Eigen::Matrix3d blend =
          (1.0 - w) * Eigen::Matrix3d::Identity() + w * transforms[k];
      out.per_face[f] = blend * out.per_face[f];
    }
  }
  return out;
}

}  // namespace apap
