#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "apap/error.hpp"
#include "apap/guidance.hpp"
#include "apap/mesh.hpp"
#include "apap/operators.hpp"
#include "apap/poisson.hpp"
#include "apap/render.hpp"

namespace apap {

enum class PriorMode { kNone, kAnalytic, kRemote };

/// Pipeline variants. kArap is the baseline (no Jacobian optimization);
/// the others are ablations of the two-stage method.
enum class Variant {
  kOurs,
  kArap,
  kLhOnly,
  kNoLora,
  kSecondOnly,
  kArapInit,
  kPoissonInit,
};

std::string to_string(PriorMode mode);
std::string to_string(Variant variant);
PriorMode parse_prior_mode(const std::string& text);
Variant parse_variant(const std::string& text);

inline constexpr int kFirstStageIters = 300;
inline constexpr int kSecondStageIters2D = 700;
inline constexpr int kSecondStageIters3D = 1000;
inline constexpr double kLearningRate = 1e-3;

struct APAPConfig {
  int first_stage_iters = kFirstStageIters;
  /// Defaults to 700 for planar meshes and 1000 otherwise.
  std::optional<int> second_stage_iters;
  double learning_rate = kLearningRate;
  double lambda = kDefaultAnchorWeight;
  double cfg_scale = kDefaultCfgScale;
  double t_min = kDefaultTMin;
  double t_max = kDefaultTMax;
  int resolution = kDefaultResolution;
  /// Defaults to kPlanar for planar meshes and kFourView otherwise.
  std::optional<CameraRig> viewpoints;
  std::int64_t seed = 0;
  PriorMode prior_mode = PriorMode::kNone;
  /// Scale of the analytic prior's L2 term.
  double prior_weight = 1.0;
  std::string prompt;
  std::string weighting_mode = "constant";
  Variant variant = Variant::kOurs;
  std::string endpoint;
  /// Defaults to 60 for planar meshes and 200 otherwise.
  std::optional<int> finetune_steps;
  double finetune_lr = kFinetuneLearningRate;
  int lora_rank = kLoraRank;
  double sigma_px = 1.0;

  void validate() const;
  int resolved_second_stage_iters(bool planar) const;
  int resolved_finetune_steps(bool planar) const;
  CameraRig resolved_viewpoints(bool planar) const;
};

/// Unknown keys are rejected so typos do not silently fall back to defaults.
APAPConfig parse_config(const std::string& json_text);
APAPConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const APAPConfig& config);

struct OptimizerState {
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OptimizerState zeros(Eigen::Index size);
};

/// Bias-corrected ADAM update in place. Returns false (state untouched) when
/// the gradient has a non-finite entry. Throws on shape mismatch.
bool adam_step(OptimizerState& state, Eigen::VectorXd& params,
               const Eigen::VectorXd& grad, double learning_rate);

struct HandleLoss {
  double value = 0.0;
  Vertices gradient;  // V x 3, non-zero only on handle rows
};

/// sum_h ||v_h - t_h||^2 over the spec's handles, with t_h = rest_h + d_h.
HandleLoss handle_loss(const Vertices& vertices, const Vertices& rest,
                       const DeformationSpec& spec);

struct TraceRecord {
  int iteration = 0;
  int stage = 1;
  double handle_loss = 0.0;
  double guidance_grad_norm = 0.0;
  std::optional<double> prior_loss;
  std::optional<double> t;
  int view_index = -1;
};

void write_trace_csv(const std::vector<TraceRecord>& trace,
                     const std::filesystem::path& path);

/// Per-iteration gradient parts of the joint stage, for instrumentation.
struct GradientParts {
  int iteration = 0;
  const JacobianField* handle_part = nullptr;
  const JacobianField* guidance_part = nullptr;
  const Eigen::VectorXd* total = nullptr;  // what ADAM consumed
};
using GradientObserver = std::function<void(const GradientParts&)>;

/// Read-only inputs shared by both stages.
struct StageInputs {
  const TexturedMesh& mesh;  // rest mesh
  const FactorizedSystem& system;
  const DeformationSpec& spec;
  const APAPConfig& config;
};

/// M iterations of solve -> handle loss -> adjoint -> ADAM on the field.
JacobianField first_stage(JacobianField jac, const StageInputs& inputs, int iterations,
                          std::vector<TraceRecord>* trace = nullptr);

struct SecondStageStats {
  int skipped_guidance = 0;  // non-finite gradients zeroed
};

/// N iterations of solve -> random viewpoint -> render -> prior gradient plus
/// handle gradient -> adjoint -> ADAM. A null provider means no prior. ADAM
/// state starts fresh.
JacobianField second_stage(JacobianField jac, const StageInputs& inputs, int iterations,
                           GuidanceProvider* guidance,
                           const std::vector<Camera>& cameras,
                           std::vector<TraceRecord>* trace = nullptr,
                           SecondStageStats* stats = nullptr,
                           const GradientObserver& observer = {});

struct DeformationResult {
  TexturedMesh mesh;
  JacobianField jacobians;
  std::vector<TraceRecord> trace;
  APAPConfig config;
  /// First-stage iterations that actually ran (0 for replaced / skipped stages).
  int first_stage_iters = 0;
  int second_stage_iters = 0;
  int skipped_guidance = 0;
  std::optional<FinetuneReport> finetune;
  /// Vertices at the boundary between the stages.
  Vertices stage_boundary_vertices;
};

/// Raised when the prior fails mid-run; carries the trace so far.
class DeformationAborted : public GuidanceError {
 public:
  DeformationAborted(const std::string& what, std::vector<TraceRecord> trace)
      : GuidanceError(what), trace_(std::move(trace)) {}
  const std::vector<TraceRecord>& trace() const { return trace_; }

 private:
  std::vector<TraceRecord> trace_;
};

/// Builds the prior requested by config.prior_mode. kAnalytic targets the
/// rest-mesh render of every camera; kRemote needs config.endpoint.
std::unique_ptr<GuidanceProvider> make_guidance(const TexturedMesh& mesh,
                                                const APAPConfig& config,
                                                const std::vector<Camera>& cameras);

/// Full pipeline for config.variant. `guidance` overrides the provider built
/// from config.prior_mode when non-null.
DeformationResult deform(const TexturedMesh& mesh, const DeformationSpec& spec,
                         const APAPConfig& config,
                         GuidanceProvider* guidance = nullptr);

/// Dijkstra over the edge graph with Euclidean edge lengths; +inf where
/// unreachable.
std::vector<double> geodesic_distances(const TexturedMesh& mesh,
                                       const std::vector<int>& sources);

/// Premultiplies each face Jacobian by (1 - w) I + w T_k for every handle k in
/// order, w = exp(-(d / falloff_radius)^2), d the face's smallest vertex
/// geodesic distance to handle k.
JacobianField propagate_handle_transforms(const JacobianField& jac0,
                                          const TexturedMesh& mesh,
                                          const std::vector<int>& handle_vertices,
                                          const std::vector<Eigen::Matrix3d>& transforms,
                                          double falloff_radius);

}  // namespace apap
