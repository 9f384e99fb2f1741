#include "apap_cli/cli.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>
#include <string>

#include "apap/arap.hpp"
#include "apap/bench.hpp"
#include "apap/deform.hpp"
#include "apap/error.hpp"
#include "apap/mesh.hpp"
#include "apap/poisson.hpp"
#include "apap/render.hpp"

namespace apap::cli {
namespace {

using nlohmann::json;

std::string fmt(double value) {
  char buffer[64];
  const auto [end, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, end);
}

std::string invocation_line(int argc, const char* const* argv) {
  std::string line;
  for (int i = 0; i < argc; ++i) {
    if (i) line += ' ';
    line += argv[i];
  }
  return line;
}

void write_json(const std::filesystem::path& path, const json& value) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << value.dump(2) << '\n';
}

std::optional<CameraRig> parse_rig(const std::optional<std::string>& name) {
  if (!name) return std::nullopt;
  if (*name == "planar") return CameraRig::kPlanar;
  if (*name == "four_view") return CameraRig::kFourView;
  throw InvalidInputError("unknown camera rig \"" + *name + "\"");
}

std::string resolve_endpoint(const std::optional<std::string>& flag, const std::string& config) {
  if (flag && !flag->empty()) return *flag;
  if (!config.empty()) return config;
  if (const char* env = std::getenv("APAP_GUIDANCE_ENDPOINT")) return env;
  return {};
}

/// Flags shared by commands that build an APAPConfig.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::int64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::string> prior;
  std::optional<std::string> endpoint;
  std::optional<std::string> prompt;
  std::optional<std::string> rig;
  std::optional<int> first_iters;
  std::optional<int> second_iters;
  std::optional<int> resolution;
  std::optional<double> learning_rate;
  std::optional<double> sigma;
  std::optional<double> prior_weight;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "APAPConfig JSON file");
    app->add_option("--seed", seed, "Random seed (default 0)");
    app->add_option("--variant", variant,
                    "ours | arap | lh_only | no_lora | second_only | arap_init | poisson_init");
    app->add_option("--prior", prior, "none | analytic | remote");
    app->add_option("--endpoint", endpoint, "Guidance server URL");
    app->add_option("--prompt", prompt, "Text prompt for the prior");
    app->add_option("--viewpoints", rig, "planar | four_view");
    app->add_option("--first-iters", first_iters, "First-stage iterations");
    app->add_option("--second-iters", second_iters, "Second-stage iterations");
    app->add_option("--resolution", resolution, "Render resolution in pixels");
    app->add_option("--lr", learning_rate, "ADAM learning rate");
    app->add_option("--sigma", sigma, "Soft silhouette width in pixels");
    app->add_option("--prior-weight", prior_weight, "Weight of the analytic prior");
  }

  APAPConfig resolve() const {
    APAPConfig c = config_path.empty() ? APAPConfig{} : load_config(config_path);
    if (seed) c.seed = *seed;
    if (variant) c.variant = parse_variant(*variant);
    if (prior) c.prior_mode = parse_prior_mode(*prior);
    if (prompt) c.prompt = *prompt;
    if (auto r = parse_rig(rig)) c.viewpoints = r;
    if (first_iters) c.first_stage_iters = *first_iters;
    if (second_iters) c.second_stage_iters = *second_iters;
    if (resolution) c.resolution = *resolution;
    if (learning_rate) c.learning_rate = *learning_rate;
    if (sigma) c.sigma_px = *sigma;
    if (prior_weight) c.prior_weight = *prior_weight;
    c.endpoint = resolve_endpoint(endpoint, c.endpoint);
    c.validate();
    return c;
  }
};

TexturedMesh load_input_mesh(const std::string& path, bool normalize) {
  TexturedMesh mesh = load_mesh(path);
  if (normalize && !mesh.is_planar) normalize_to_unit_cube(mesh);
  return mesh;
}

Image render_view(const TexturedMesh& mesh, const APAPConfig& config) {
  const auto cameras =
      canonical_cameras(config.resolved_viewpoints(mesh.is_planar), config.resolution);
  RenderOptions options;
  options.sigma_px = config.sigma_px;
  return rasterize(mesh, cameras.front(), options).image;
}

struct DeformArgs {
  std::string mesh, spec, output;
  bool normalize = false;
  ConfigFlags flags;
};

int cmd_deform(const DeformArgs& a, const std::string& invocation, std::ostream& out) {
  const APAPConfig config = a.flags.resolve();
  const TexturedMesh mesh = load_input_mesh(a.mesh, a.normalize);
  const DeformationSpec spec = load_deformation_spec(a.spec);
  const std::filesystem::path dir(a.output);
  std::filesystem::create_directories(dir);
  write_png(render_view(mesh, config), dir / "render_source.png");

  DeformationResult result;
  try {
    result = deform(mesh, spec, config);
  } catch (const DeformationAborted& e) {
    write_trace_csv(e.trace(), dir / "trace.csv");
    throw;
  }
  save_mesh(result.mesh, dir / "mesh.obj");
  write_trace_csv(result.trace, dir / "trace.csv");
  write_png(render_view(result.mesh, config), dir / "render_result.png");

  const double initial = handle_loss(mesh.vertices, mesh.vertices, spec).value;
  const double final_loss = handle_loss(result.mesh.vertices, mesh.vertices, spec).value;
  json meta = {
      {"invocation", invocation},
      {"config", json::parse(config_to_json(config))},
      {"seed", config.seed},
      {"variant", to_string(config.variant)},
      {"num_vertices", mesh.num_vertices()},
      {"num_faces", mesh.num_faces()},
      {"first_stage_iters", result.first_stage_iters},
      {"second_stage_iters", result.second_stage_iters},
      {"skipped_guidance", result.skipped_guidance},
      {"handle_loss_initial", initial},
      {"handle_loss_final", final_loss},
  };
  if (result.finetune) meta["adapter_id"] = result.finetune->adapter_id;
  write_json(dir / "meta.json", meta);
  out << "deform: variant=" << to_string(config.variant) << " handle_loss " << fmt(initial)
      << " -> " << fmt(final_loss) << " (" << result.trace.size() << " iterations)\n";
  return kExitOk;
}

struct ArapArgs {
  std::string mesh, spec, output;
  int max_iterations = 100;
  double tolerance = 1e-7;
};

int cmd_arap(const ArapArgs& a, std::ostream& out) {
  const TexturedMesh mesh = load_mesh(a.mesh);
  const DeformationSpec spec = load_deformation_spec(a.spec);
  ArapConstraints constraints = arap_constraints_from_spec(mesh, spec);
  constraints.max_iterations = a.max_iterations;
  constraints.tolerance = a.tolerance;
  const ArapResult result = arap_deform(mesh, constraints);
  TexturedMesh deformed = mesh;
  deformed.vertices = result.vertices;
  const std::filesystem::path dir(a.output);
  std::filesystem::create_directories(dir);
  save_mesh(deformed, dir / "mesh.obj");
  out << "arap: energy=" << fmt(result.energy) << " iterations=" << result.iterations << '\n';
  return kExitOk;
}

struct MaskArgs {
  std::string mask, image, output, spec_output;
  int samples = 800;
  std::uint64_t seed = 0;
  int pairs = 2;
  double magnitude = kHandleMagnitude;
  double radius = kRegionRadius;
};

int cmd_mesh_from_mask(const MaskArgs& a, std::ostream& out) {
  MeshFromMaskOptions options;
  options.interior_samples = a.samples;
  options.seed = a.seed;
  const TexturedMesh mesh = mesh_from_mask(load_mask(a.mask), read_png(a.image), options);
  save_mesh(mesh, a.output);
  out << "mesh-from-mask: " << mesh.num_vertices() << " vertices, " << mesh.num_faces()
      << " faces\n";
  if (!a.spec_output.empty()) {
    HandleAssignment assignment;
    assignment.n_pairs = a.pairs;
    assignment.magnitude = a.magnitude;
    const DeformationSpec spec = expand_spec(mesh, assign_handles(mesh, assignment), a.radius);
    save_deformation_spec(spec, a.spec_output);
    out << "mesh-from-mask: " << spec.handle_indices.size() << " handle and "
        << spec.anchor_indices.size() << " anchor vertices\n";
  }
  return kExitOk;
}

struct RenderArgs {
  std::string mesh, output, config_path;
  std::optional<int> resolution;
  std::optional<double> sigma;
  std::optional<std::string> rig;
  int view = 0;
};

int cmd_render(const RenderArgs& a, std::ostream& out) {
  APAPConfig config = a.config_path.empty() ? APAPConfig{} : load_config(a.config_path);
  if (a.resolution) config.resolution = *a.resolution;
  if (a.sigma) config.sigma_px = *a.sigma;
  if (auto r = parse_rig(a.rig)) config.viewpoints = r;
  config.validate();
  const TexturedMesh mesh = load_mesh(a.mesh);
  const auto cameras =
      canonical_cameras(config.resolved_viewpoints(mesh.is_planar), config.resolution);
  if (a.view < 0 || a.view >= static_cast<int>(cameras.size()))
    throw InvalidInputError("view index " + std::to_string(a.view) + " out of range");
  RenderOptions options;
  options.sigma_px = config.sigma_px;
  const RenderOutput render = rasterize(mesh, cameras[a.view], options);
  write_png(render.image, a.output);
  for (const auto& w : render.warnings) out << "render: warning: " << w << '\n';
  out << "render: wrote " << a.output << '\n';
  return kExitOk;
}

struct BenchArgs {
  std::string manifest, output, variant = "ours";
  std::optional<std::string> endpoint;
  std::optional<std::int64_t> seed;
  int workers = 1;
  bool no_resume = false;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  const Manifest manifest = load_manifest(a.manifest);
  ExperimentOptions options;
  options.variant = parse_variant(a.variant);
  options.output_dir = a.output;
  options.endpoint = resolve_endpoint(a.endpoint, manifest.config.endpoint);
  options.workers = a.workers;
  options.resume = !a.no_resume;
  options.seed = a.seed;
  const ExperimentSummary summary = run_experiment(manifest, options);
  out << "bench: " << summary.instances.size() << " instances, " << summary.failed()
      << " failed\n";
  return kExitOk;
}

int exit_code(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::kIo:
      return kExitIo;
    case ErrorCategory::kNumerical:
      return kExitNumerical;
    case ErrorCategory::kGuidance:
      return kExitGuidance;
    case ErrorCategory::kInvalidInput:
      return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Handle-based mesh deformation with Jacobian fields"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  DeformArgs deform_args;
  auto* deform_cmd = app.add_subcommand("deform", "Deform a mesh toward handle targets");
  deform_cmd->add_option("--mesh", deform_args.mesh, "Input OBJ")->required();
  deform_cmd->add_option("--spec", deform_args.spec, "Deformation spec JSON")->required();
  deform_cmd->add_option("--output", deform_args.output, "Output directory")->required();
  deform_cmd->add_flag("--normalize", deform_args.normalize,
                       "Fit 3D meshes into the unit cube before deforming");
  deform_args.flags.attach(deform_cmd);

  ArapArgs arap_args;
  auto* arap_cmd = app.add_subcommand("arap", "As-rigid-as-possible baseline");
  arap_cmd->add_option("--mesh", arap_args.mesh, "Input OBJ")->required();
  arap_cmd->add_option("--spec", arap_args.spec, "Deformation spec JSON")->required();
  arap_cmd->add_option("--output", arap_args.output, "Output directory")->required();
  arap_cmd->add_option("--max-iters", arap_args.max_iterations, "Iteration cap");
  arap_cmd->add_option("--tolerance", arap_args.tolerance, "Energy change threshold");

  MaskArgs mask_args;
  auto* mask_cmd = app.add_subcommand("mesh-from-mask", "Triangulate a foreground mask");
  mask_cmd->add_option("--mask", mask_args.mask, "Mask PNG")->required();
  mask_cmd->add_option("--image", mask_args.image, "Source image PNG (texture)")->required();
  mask_cmd->add_option("--output", mask_args.output, "Output OBJ")->required();
  mask_cmd->add_option("--samples", mask_args.samples, "Interior sample count");
  mask_cmd->add_option("--seed", mask_args.seed, "Random seed (default 0)");
  mask_cmd->add_option("--spec-output", mask_args.spec_output,
                       "Also write an assigned handle/anchor spec here");
  mask_cmd->add_option("--pairs", mask_args.pairs, "Handle/anchor pairs to assign");
  mask_cmd->add_option("--magnitude", mask_args.magnitude, "Handle displacement length");
  mask_cmd->add_option("--radius", mask_args.radius, "Region expansion radius");

  RenderArgs render_args;
  auto* render_cmd = app.add_subcommand("render", "Rasterize a mesh to PNG");
  render_cmd->add_option("--mesh", render_args.mesh, "Input OBJ")->required();
  render_cmd->add_option("--output", render_args.output, "Output PNG")->required();
  render_cmd->add_option("--config", render_args.config_path, "APAPConfig JSON file");
  render_cmd->add_option("--resolution", render_args.resolution, "Pixels per side");
  render_cmd->add_option("--sigma", render_args.sigma, "Soft silhouette width in pixels");
  render_cmd->add_option("--viewpoints", render_args.rig, "planar | four_view");
  render_cmd->add_option("--view", render_args.view, "Camera index within the rig");

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "Run a benchmark manifest");
  bench_cmd->add_option("--manifest", bench_args.manifest, "Manifest JSON")->required();
  bench_cmd->add_option("--output", bench_args.output, "Results directory")->required();
  bench_cmd->add_option("--variant", bench_args.variant, "Pipeline variant");
  bench_cmd->add_option("--endpoint", bench_args.endpoint, "Guidance server URL");
  bench_cmd->add_option("--seed", bench_args.seed, "Random seed override");
  bench_cmd->add_option("--workers", bench_args.workers, "Parallel instances");
  bench_cmd->add_flag("--no-resume", bench_args.no_resume, "Rerun finished instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (deform_cmd->parsed())
      return cmd_deform(deform_args, invocation_line(argc, argv), out);
    if (arap_cmd->parsed()) return cmd_arap(arap_args, out);
    if (mask_cmd->parsed()) return cmd_mesh_from_mask(mask_args, out);
    if (render_cmd->parsed()) return cmd_render(render_args, out);
    if (bench_cmd->parsed()) return cmd_bench(bench_args, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace apap::cli
