#include "wbrec/service.hpp"

#include <cstdlib>

#include "httplib.h"
#include "json.hpp"

namespace wbrec {

using nlohmann::json;

void ServiceConfig::apply_env_overrides() {
  if (const char* v = std::getenv("WBREC_HOST")) host = v;
  if (const char* v = std::getenv("WBREC_PORT")) {
    try {
      port = std::stoi(v);
    } catch (const std::exception&) {
      throw InvalidArgument(std::string("WBREC_PORT is not an integer: ") + v);
    }
  }
  if (const char* v = std::getenv("WBREC_MODEL")) model_path = v;
  if (const char* v = std::getenv("WBREC_INDEX")) index_path = v;
  if (const char* v = std::getenv("WBREC_POSTPROCESS")) post_process_path = v;
}

RecommendationService::RecommendationService(ServiceConfig config) : config_(std::move(config)) {}

RecommendationService::~RecommendationService() { stop(); }

void RecommendationService::load() {
  auto require = [](const std::filesystem::path& path, std::string_view what) {
    if (path.empty()) throw StartupError(std::string(what) + " path is not set");
    if (!std::filesystem::exists(path)) {
      throw StartupError(std::string(what) + " file not found: " + path.string());
    }
  };
  require(config_.model_path, "model");
  require(config_.index_path, "index");

  auto model = std::make_unique<TripleModel>();
  try {
    *model = load_model(config_.model_path);
  } catch (const std::exception& e) {
    throw StartupError("failed to load model " + config_.model_path.string() + ": " + e.what());
  }
  auto index = std::make_unique<CatalogIndex>();
  try {
    *index = CatalogIndex::load(config_.index_path);
  } catch (const std::exception& e) {
    throw StartupError("failed to load index " + config_.index_path.string() + ": " + e.what());
  }
  if (index->layout() != CatalogLayout::symmetric) {
    throw StartupError("index " + config_.index_path.string() + " uses the asymmetric layout; serving needs symmetric");
  }
  PostProcessConfig post;
  if (config_.post_process_path) {
    require(*config_.post_process_path, "post-process config");
    try {
      post = load_post_process_config(*config_.post_process_path, model->vocabulary.items);
    } catch (const std::exception& e) {
      throw StartupError("failed to load post-process config " + config_.post_process_path->string() + ": " +
                         e.what());
    }
  }

  RecommendConfig rc;
  rc.anchor_threshold = config_.anchor_threshold;
  rc.seed = config_.seed;
  rc.ef_search = config_.ef_search;
  std::unique_ptr<Recommender> recommender;
  try {
    recommender = std::make_unique<Recommender>(*model, *index, rc, std::move(post));
  } catch (const std::exception& e) {
    throw StartupError("index " + config_.index_path.string() + " does not match model " +
                       config_.model_path.string() + ": " + e.what());
  }
  model_ = std::move(model);
  index_ = std::move(index);
  recommender_ = std::move(recommender);
  ready_.store(true, std::memory_order_release);
}

HttpResult RecommendationService::handle_health() const {
  json body;
  if (!ready()) {
    body["status"] = "loading";
    return {503, body.dump()};
  }
  body["status"] = "ready";
  body["n"] = model_->item_count();
  body["m"] = model_->user_count();
  body["d"] = model_->dim();
  body["backend"] = std::string(to_string(index_->backend()));
  body["requests"] = requests_.load();
  body["failures"] = failures_.load();
  return {200, body.dump()};
}

namespace {

HttpResult error_result(int status, std::string_view message) {
  json body;
  body["error"] = message;
  return {status, body.dump()};
}

}  // namespace

HttpResult RecommendationService::handle_recommend(std::string_view text) const {
  const auto started = std::chrono::steady_clock::now();
  requests_.fetch_add(1, std::memory_order_relaxed);
  if (!ready()) return error_result(503, "service is loading");

  json request;
  try {
    request = json::parse(text);
  } catch (const json::parse_error&) {
    return error_result(400, "request body is not valid JSON");
  }
  if (!request.is_object()) return error_result(400, "request body must be a JSON object");
  if (!request.contains("basket") || !request["basket"].is_array()) {
    return error_result(400, "\"basket\" must be an array of item id strings");
  }
  std::size_t k = config_.default_k;
  if (request.contains("k") && !request["k"].is_null()) {
    const auto& kv = request["k"];
    if (!kv.is_number_integer()) return error_result(400, "\"k\" must be an integer");
    const auto value = kv.get<long long>();
    if (value < 1 || value > static_cast<long long>(config_.max_k)) {
      return error_result(400, "\"k\" must lie in [1, " + std::to_string(config_.max_k) + "]");
    }
    k = static_cast<std::size_t>(value);
  }
  std::optional<std::string> user_id;
  if (request.contains("user_id") && !request["user_id"].is_null()) {
    if (!request["user_id"].is_string()) return error_result(400, "\"user_id\" must be a string");
    user_id = request["user_id"].get<std::string>();
  }

  try {
    BasketContext ctx;
    ctx.k = k;
    if (user_id) {
      if (auto u = model_->vocabulary.users.find(*user_id)) ctx.user = *u;
    }
    json unknown = json::array();
    for (const auto& entry : request["basket"]) {
      if (!entry.is_string()) return error_result(400, "\"basket\" entries must be strings");
      const auto name = entry.get<std::string>();
      if (auto id = model_->vocabulary.items.find(name)) {
        ctx.items.push_back(*id);
      } else {
        unknown.push_back(name);
      }
    }

    std::uint64_t seed = config_.seed;
    if (config_.seed_mode == SeedMode::per_request) {
      seed ^= 0x9e3779b97f4a7c15ULL * (request_counter_.fetch_add(1) + 1) ^
              static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count());
    }
    const RecommendationSet result = recommender_->recommend(ctx, seed);

    json response;
    json items = json::array();
    for (const auto& e : result.entries) {
      items.push_back({{"item_id", model_->vocabulary.items.external(e.item)}, {"score", e.score}});
    }
    response["items"] = std::move(items);
    response["flags"] = {{"fallback", result.fallback}, {"unknown_items", std::move(unknown)}};
    const std::chrono::duration<double, std::milli> took = std::chrono::steady_clock::now() - started;
    response["latency_ms"] = took.count();
    return {200, response.dump()};
  } catch (const std::exception&) {
    failures_.fetch_add(1, std::memory_order_relaxed);
    return error_result(500, "internal error");
  }
}

void RecommendationService::start() {
  if (server_) throw Error("service already started");
  server_ = std::make_unique<httplib::Server>();
  auto& srv = *server_;
  const auto timeout = config_.request_timeout;
  srv.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                       (timeout.count() % 1000) * 1000);
  srv.set_write_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                        (timeout.count() % 1000) * 1000);
  srv.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    const auto r = handle_health();
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });
  srv.Post("/v1/recommendations", [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = handle_recommend(req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });

  if (config_.port == 0) {
    bound_port_ = srv.bind_to_any_port(config_.host);
  } else {
    bound_port_ = srv.bind_to_port(config_.host, config_.port) ? config_.port : -1;
  }
  if (bound_port_ < 0) {
    server_.reset();
    throw StartupError("cannot bind " + config_.host + ":" + std::to_string(config_.port));
  }
  listener_ = std::thread([&srv] { srv.listen_after_bind(); });
  // stop() is a no-op until the accept loop runs.
  srv.wait_until_ready();
  try {
    load();
  } catch (...) {
    stop();
    throw;
  }
}

void RecommendationService::stop() {
  if (server_) server_->stop();
  if (listener_.joinable()) listener_.join();
  server_.reset();
}

void RecommendationService::wait() {
  if (listener_.joinable()) listener_.join();
}

}  // namespace wbrec
