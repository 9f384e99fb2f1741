#include "stub_server.hpp"

#include <httplib.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "apap/guidance.hpp"
#include "apap/image.hpp"

namespace apap::testing {
namespace {

using nlohmann::json;

std::string encode(const std::vector<float>& values) {
  return base64_encode(encode_float32_le(values));
}

void reply(httplib::Response& res, const json& body) {
  res.set_content(body.dump(), "application/json");
}

}  // namespace

StubServer::StubServer() : server_(std::make_unique<httplib::Server>()) {
  server_->Post("/v1/sds-grad", [this](const httplib::Request& req, httplib::Response& res) {
    const int index = sds_requests_++;
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      res.status = 400;
      reply(res, {{"error", "invalid JSON"}});
      return;
    }
    {
      std::lock_guard<std::mutex> lock(mutex_);
      last_sds_ = body;
    }
    const Mode mode = fail_after_ >= 0 && index >= fail_after_ ? Mode::kHttpError : mode_.load();
    if (!body.contains("width") || !body.contains("height")) {
      res.status = 400;
      reply(res, {{"error", "missing width/height"}});
      return;
    }
    const std::size_t count = static_cast<std::size_t>(body["width"].get<int>()) *
                              body["height"].get<int>() * 3;
    std::vector<float> grad(count, mode == Mode::kConstant ? constant_.load() : 0.0f);
    const double t_min = body.value("t_min", 0.02), t_max = body.value("t_max", 0.98);
    std::mt19937_64 rng(body.value("seed", std::int64_t{0}));
    const double t = std::uniform_real_distribution<double>(t_min, t_max)(rng);
    switch (mode) {
      case Mode::kZero:
      case Mode::kConstant:
        reply(res, {{"grad_b64", encode(grad)}, {"t", t}});
        return;
      case Mode::kNonFinite:
        grad[count / 2] = std::numeric_limits<float>::quiet_NaN();
        reply(res, {{"grad_b64", encode(grad)}, {"t", t}});
        return;
      case Mode::kWrongShape:
        grad.pop_back();
        reply(res, {{"grad_b64", encode(grad)}, {"t", t}});
        return;
      case Mode::kBadBase64:
        reply(res, {{"grad_b64", "!!not base64!!"}, {"t", t}});
        return;
      case Mode::kMalformedJson:
        res.set_content("{\"grad_b64\": ", "application/json");
        return;
      case Mode::kMissingField:
        reply(res, {{"t", t}});
        return;
      case Mode::kHttpError:
        res.status = 500;
        reply(res, {{"error", "stub failure"}});
        return;
    }
  });

  server_->Post("/v1/finetune", [this](const httplib::Request& req, httplib::Response& res) {
    ++finetune_requests_;
    const json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.contains("images_b64") || !body.contains("steps")) {
      res.status = 400;
      reply(res, {{"error", "bad finetune request"}});
      return;
    }
    const int steps = body["steps"].get<int>();
    std::vector<double> losses;
    for (int i = 0; i < steps; ++i) losses.push_back(1.0 / (1.0 + 0.1 * i));
    reply(res, {{"loss_trace", losses},
                {"adapter_id", "stub-adapter-" + std::to_string(finetune_requests_.load())},
                {"lora_rank", body.value("lora_rank", 16)}});
  });

  server_->Post("/v1/giqa-features", [this](const httplib::Request& req, httplib::Response& res) {
    ++feature_requests_;
    const json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.contains("image_b64")) {
      res.status = 400;
      reply(res, {{"error", "bad feature request"}});
      return;
    }
    // Features depend only on the image bytes: seeded by a hash of them.
    const std::string& image = body["image_b64"].get_ref<const std::string&>();
    std::mt19937_64 rng(std::hash<std::string>{}(image));
    std::normal_distribution<float> normal;
    std::vector<float> features(kFeatureDim);
    for (float& f : features) f = normal(rng);
    reply(res, {{"features_b64", encode(features)}, {"dim", kFeatureDim}});
  });

  port_ = server_->bind_to_any_port("127.0.0.1");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

StubServer::~StubServer() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string StubServer::endpoint() const {
  return "http://127.0.0.1:" + std::to_string(port_);
}

nlohmann::json StubServer::last_sds_request() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return last_sds_;
}

}  // namespace apap::testing
