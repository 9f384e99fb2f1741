#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "apap/image.hpp"

namespace apap {

inline constexpr double kDefaultCfgScale = 100.0;
inline constexpr double kDefaultTMin = 0.02;
inline constexpr double kDefaultTMax = 0.98;

/// Prompt and sampling parameters sent with every prior request.
struct GuidanceContext {
  std::string prompt;
  double cfg_scale = kDefaultCfgScale;
  double t_min = kDefaultTMin;
  double t_max = kDefaultTMax;
  std::int64_t seed = 0;
  /// Name of w(t) on the server side; "constant" means w = 1.
  std::string weighting_mode = "constant";
  /// Adapter from a previous finetune, forwarded to the server when set.
  std::optional<std::string> adapter_id;

  void validate() const;
};

struct GuidanceQuery {
  int view_index = 0;
  int iteration = 0;
};

struct GuidanceResult {
  Image gradient;  // dLoss/dImage, same shape as the input image
  std::optional<double> t;
  /// Scalar loss when the prior has one (the analytic prior does).
  std::optional<double> loss;
};

/// Image-space plausibility prior. Implementations must return a gradient of
/// exactly the input shape with finite entries, or throw a GuidanceError.
class GuidanceProvider {
 public:
  virtual ~GuidanceProvider() = default;
  virtual GuidanceResult gradient(const Image& image, const GuidanceQuery& query) = 0;
};

/// Gradient of 0.5 * weight * ||image - target||^2. With several targets the
/// query's view index selects one.
class AnalyticL2Prior : public GuidanceProvider {
 public:
  explicit AnalyticL2Prior(Image target, double weight = 1.0);
  AnalyticL2Prior(std::vector<Image> targets, double weight = 1.0);

  GuidanceResult gradient(const Image& image, const GuidanceQuery& query) override;

  const Image& target(int view_index) const;
  double weight() const { return weight_; }

 private:
  std::vector<Image> targets_;
  double weight_;
};

std::unique_ptr<GuidanceProvider> analytic_l2_prior(Image target, double weight = 1.0);

struct RemoteOptions {
  std::chrono::milliseconds connect_timeout{5000};
  std::chrono::milliseconds read_timeout{120000};
};

/// Client for the /v1/sds-grad endpoint. The per-request seed is the context
/// seed plus the iteration, so a run is reproducible against a seeded server.
class RemoteSdsProvider : public GuidanceProvider {
 public:
  RemoteSdsProvider(std::string endpoint, GuidanceContext context,
                    RemoteOptions options = {});

  GuidanceResult gradient(const Image& image, const GuidanceQuery& query) override;

  const std::string& endpoint() const { return endpoint_; }
  const GuidanceContext& context() const { return context_; }
  void set_adapter(std::optional<std::string> adapter_id);

 private:
  std::string endpoint_;
  GuidanceContext context_;
  RemoteOptions options_;
};

std::unique_ptr<GuidanceProvider> remote_sds_provider(std::string endpoint,
                                                      GuidanceContext context);

inline constexpr int kFinetuneSteps2D = 60;
inline constexpr int kFinetuneSteps3D = 200;
inline constexpr double kFinetuneLearningRate = 5e-4;
inline constexpr int kLoraRank = 16;

struct FinetuneRequest {
  std::vector<Image> images;  // all the same shape
  int steps = kFinetuneSteps2D;
  double learning_rate = kFinetuneLearningRate;
  int lora_rank = kLoraRank;
  std::string prompt;
};

struct FinetuneReport {
  std::vector<double> loss_trace;
  std::string adapter_id;
  int steps = 0;
  double learning_rate = 0.0;
  int lora_rank = 0;
};

FinetuneReport request_finetune(const std::string& endpoint,
                                const FinetuneRequest& request,
                                RemoteOptions options = {});

/// Feature vector for the k-NN quality score.
std::vector<float> request_giqa_features(const std::string& endpoint,
                                         const Image& image,
                                         RemoteOptions options = {});

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
/// Throws ParseError on characters outside the standard alphabet.
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// "http://host:port[/prefix]" -> (scheme://host:port, path prefix).
struct ParsedEndpoint {
  std::string base;
  std::string path_prefix;
};
ParsedEndpoint parse_endpoint(const std::string& endpoint);

}  // namespace apap
