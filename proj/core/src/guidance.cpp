#include "apap/guidance.hpp"

#include <httplib.h>

#include <array>
#include <cmath>
#include <nlohmann/json.hpp>

#include "apap/error.hpp"

namespace apap {

using nlohmann::json;

void GuidanceContext::validate() const {
  if (!(t_min > 0.0 && t_min < t_max && t_max < 1.0))
    throw InvalidInputError("t range must satisfy 0 < t_min < t_max < 1");
  if (!(cfg_scale >= 0.0)) throw InvalidInputError("cfg_scale must be non-negative");
  if (weighting_mode.empty()) throw InvalidInputError("weighting_mode is empty");
}

AnalyticL2Prior::AnalyticL2Prior(Image target, double weight)
    : AnalyticL2Prior(std::vector<Image>{std::move(target)}, weight) {}

AnalyticL2Prior::AnalyticL2Prior(std::vector<Image> targets, double weight)
    : targets_(std::move(targets)), weight_(weight) {
  if (targets_.empty()) throw InvalidInputError("analytic prior needs a target image");
  for (const Image& t : targets_)
    if (t.empty()) throw InvalidInputError("analytic prior target is empty");
  if (!(weight_ > 0.0) || !std::isfinite(weight_))
    throw InvalidInputError("analytic prior weight must be positive");
}

const Image& AnalyticL2Prior::target(int view_index) const {
  if (targets_.size() == 1) return targets_.front();
  if (view_index < 0 || view_index >= static_cast<int>(targets_.size()))
    throw InvalidInputError("no analytic target for view " + std::to_string(view_index));
  return targets_[view_index];
}

GuidanceResult AnalyticL2Prior::gradient(const Image& image, const GuidanceQuery& query) {
  const Image& t = target(query.view_index);
  if (!image.same_shape(t))
    throw InvalidInputError("image " + std::to_string(image.width) + "x" +
                            std::to_string(image.height) + " does not match target " +
                            std::to_string(t.width) + "x" + std::to_string(t.height));
  GuidanceResult result;
  result.gradient = Image(image.width, image.height, image.channels);
  double loss = 0.0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double diff = static_cast<double>(image.data[i]) - t.data[i];
    result.gradient.data[i] = static_cast<float>(weight_ * diff);
    loss += diff * diff;
  }
  result.loss = 0.5 * weight_ * loss;
  return result;
}

std::unique_ptr<GuidanceProvider> analytic_l2_prior(Image target, double weight) {
  return std::make_unique<AnalyticL2Prior>(std::move(target), weight);
}

namespace {

constexpr char kAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string dims(int w, int h, int c) {
  return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
}

std::string encode_image(const Image& image) {
  return base64_encode(encode_float32_le(image.data));
}

json post_json(const std::string& endpoint, const std::string& path, const json& body,
               const RemoteOptions& options) {
  const ParsedEndpoint parsed = parse_endpoint(endpoint);
  httplib::Client client(parsed.base);
  client.set_connection_timeout(options.connect_timeout);
  client.set_read_timeout(options.read_timeout);
  client.set_write_timeout(options.read_timeout);
  const std::string full_path = parsed.path_prefix + path;
  auto response = client.Post(full_path, body.dump(), "application/json");
  if (!response)
    throw TransportError("POST " + endpoint + full_path + " failed: " +
                         httplib::to_string(response.error()));
  if (response->status != 200)
    throw TransportError("POST " + endpoint + full_path + " returned HTTP " +
                         std::to_string(response->status) + ": " +
                         response->body.substr(0, 200));
  try {
    json parsed_body = json::parse(response->body);
    if (!parsed_body.is_object())
      throw MalformedResponseError(path + ": response is not a JSON object");
    return parsed_body;
  } catch (const json::parse_error& e) {
    throw MalformedResponseError(path + ": response is not valid JSON (" + e.what() + ")");
  }
}

template <typename T>
T required(const json& body, const char* key, const std::string& path) {
  const auto it = body.find(key);
  if (it == body.end())
    throw MalformedResponseError(path + ": response lacks \"" + key + "\"");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw MalformedResponseError(path + ": field \"" + key + "\" has the wrong type");
  }
}

std::vector<float> decode_payload(const std::string& b64, const std::string& what) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = base64_decode(b64);
  } catch (const ParseError& e) {
    throw MalformedResponseError(what + ": " + e.what());
  }
  if (bytes.size() % 4 != 0)
    throw MalformedResponseError(what + ": payload of " + std::to_string(bytes.size()) +
                                 " bytes is not a float32 array");
  return decode_float32_le(bytes);
}

void require_finite(const std::vector<float>& values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!std::isfinite(values[i]))
      throw NonFinitePayloadError(what + ": non-finite value at element " +
                                  std::to_string(i));
}

}  // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += kAlphabet[n & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t n = bytes[i] << 16;
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  std::array<int, 256> table;
  table.fill(-1);
  for (int i = 0; i < 64; ++i) table[static_cast<unsigned char>(kAlphabet[i])] = i;

  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  std::uint32_t buffer = 0;
  int bits = 0;
  std::size_t padding = 0;
  std::size_t symbols = 0;
  for (const char ch : text) {
    if (ch == '=') {
      ++padding;
      continue;
    }
    if (ch == '\n' || ch == '\r') continue;
    const int value = table[static_cast<unsigned char>(ch)];
    if (value < 0 || padding > 0)
      throw ParseError("invalid base64 input");
    ++symbols;
    buffer = (buffer << 6) | static_cast<std::uint32_t>(value);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((buffer >> bits) & 0xFF));
    }
  }
  if (padding > 2) throw ParseError("invalid base64 padding");
  // One trailing symbol carries only 6 bits: never a whole byte.
  if (symbols % 4 == 1) throw ParseError("truncated base64 input");
  return out;
}

ParsedEndpoint parse_endpoint(const std::string& endpoint) {
  const std::string scheme = "http://";
  if (endpoint.rfind(scheme, 0) != 0)
    throw InvalidInputError("guidance endpoint must start with http://: " + endpoint);
  const std::size_t slash = endpoint.find('/', scheme.size());
  ParsedEndpoint parsed;
  if (slash == std::string::npos) {
    parsed.base = endpoint;
  } else {
    parsed.base = endpoint.substr(0, slash);
    parsed.path_prefix = endpoint.substr(slash);
    while (!parsed.path_prefix.empty() && parsed.path_prefix.back() == '/')
      parsed.path_prefix.pop_back();
  }
  if (parsed.base.size() == scheme.size())
    throw InvalidInputError("guidance endpoint has no host: " + endpoint);
  return parsed;
}

RemoteSdsProvider::RemoteSdsProvider(std::string endpoint, GuidanceContext context,
                                     RemoteOptions options)
    : endpoint_(std::move(endpoint)), context_(std::move(context)), options_(options) {
  context_.validate();
  parse_endpoint(endpoint_);
}

void RemoteSdsProvider::set_adapter(std::optional<std::string> adapter_id) {
  context_.adapter_id = std::move(adapter_id);
}

GuidanceResult RemoteSdsProvider::gradient(const Image& image, const GuidanceQuery& query) {
  if (image.channels != 3) throw InvalidInputError("guidance images must be RGB");
  json body = {
      {"width", image.width},
      {"height", image.height},
      {"image_b64", encode_image(image)},
      {"prompt", context_.prompt},
      {"cfg_scale", context_.cfg_scale},
      {"t_min", context_.t_min},
      {"t_max", context_.t_max},
      {"weighting_mode", context_.weighting_mode},
      {"seed", context_.seed + query.iteration},
  };
  if (context_.adapter_id) body["adapter_id"] = *context_.adapter_id;

  const std::string path = "/v1/sds-grad";
  const json response = post_json(endpoint_, path, body, options_);
  const std::vector<float> values =
      decode_payload(required<std::string>(response, "grad_b64", path), path);
  if (values.size() != image.size())
    throw MalformedResponseError(
        path + ": expected gradient of " + dims(image.width, image.height, 3) + " (" +
        std::to_string(image.size()) + " floats), received " +
        std::to_string(values.size()) + " floats");
  require_finite(values, path);

  GuidanceResult result;
  result.gradient = Image(image.width, image.height, image.channels);
  result.gradient.data = values;
  const auto t = response.find("t");
  if (t != response.end()) {
    if (!t->is_number()) throw MalformedResponseError(path + ": field \"t\" is not a number");
    result.t = t->get<double>();
  }
  return result;
}

std::unique_ptr<GuidanceProvider> remote_sds_provider(std::string endpoint,
                                                      GuidanceContext context) {
  return std::make_unique<RemoteSdsProvider>(std::move(endpoint), std::move(context));
}

FinetuneReport request_finetune(const std::string& endpoint,
                                const FinetuneRequest& request, RemoteOptions options) {
  if (request.images.empty()) throw InvalidInputError("finetune needs at least one image");
  if (request.steps <= 0) throw InvalidInputError("finetune steps must be positive");
  if (!(request.learning_rate > 0.0))
    throw InvalidInputError("finetune learning rate must be positive");
  if (request.lora_rank <= 0) throw InvalidInputError("LoRA rank must be positive");
  const Image& first = request.images.front();
  json images = json::array();
  for (const Image& img : request.images) {
    if (!img.same_shape(first) || img.channels != 3)
      throw InvalidInputError("finetune images must share one RGB shape");
    images.push_back(encode_image(img));
  }
  const json body = {
      {"images_b64", std::move(images)}, {"width", first.width},
      {"height", first.height},          {"steps", request.steps},
      {"lr", request.learning_rate},     {"lora_rank", request.lora_rank},
      {"prompt", request.prompt},
  };
  const std::string path = "/v1/finetune";
  const json response = post_json(endpoint, path, body, options);

  FinetuneReport report;
  report.loss_trace = required<std::vector<double>>(response, "loss_trace", path);
  report.adapter_id = required<std::string>(response, "adapter_id", path);
  for (double v : report.loss_trace)
    if (!std::isfinite(v)) throw NonFinitePayloadError(path + ": non-finite loss in trace");
  report.steps = request.steps;
  report.learning_rate = request.learning_rate;
  report.lora_rank = request.lora_rank;
  if (const auto rank = response.find("lora_rank"); rank != response.end()) {
    if (!rank->is_number_integer() || rank->get<int>() != request.lora_rank)
      throw MalformedResponseError(path + ": server reports a different LoRA rank");
  }
  return report;
}

std::vector<float> request_giqa_features(const std::string& endpoint, const Image& image,
                                         RemoteOptions options) {
  if (image.channels != 3) throw InvalidInputError("feature images must be RGB");
  const json body = {{"image_b64", encode_image(image)},
                     {"width", image.width},
                     {"height", image.height}};
  const std::string path = "/v1/giqa-features";
  const json response = post_json(endpoint, path, body, options);
  const int dim = required<int>(response, "dim", path);
  std::vector<float> features =
      decode_payload(required<std::string>(response, "features_b64", path), path);
  if (dim <= 0 || static_cast<std::size_t>(dim) != features.size())
    throw MalformedResponseError(path + ": expected " + std::to_string(dim) +
                                 " features, received " + std::to_string(features.size()));
  require_finite(features, path);
  return features;
}

}  // namespace apap
