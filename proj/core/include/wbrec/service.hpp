#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

#include "wbrec/index.hpp"
#include "wbrec/model.hpp"
#include "wbrec/recommend.hpp"

namespace httplib {
class Server;
}

namespace wbrec {

enum class SeedMode { fixed, per_request };

struct ServiceConfig {
  std::filesystem::path model_path;
  std::filesystem::path index_path;
  std::optional<std::filesystem::path> post_process_path;
  std::string host = "127.0.0.1";
  int port = 8080;  ///< 0 picks a free port
  std::size_t default_k = 10;
  std::size_t max_k = 500;
  std::size_t anchor_threshold = 6;
  SeedMode seed_mode = SeedMode::fixed;
  std::uint64_t seed = 7;
  std::chrono::milliseconds request_timeout{5000};
  std::optional<std::uint32_t> ef_search;

  /// WBREC_HOST, WBREC_PORT, WBREC_MODEL, WBREC_INDEX, WBREC_POSTPROCESS.
  void apply_env_overrides();
};

class StartupError : public Error {
 public:
  using Error::Error;
};

struct HttpResult {
  int status = 200;
  std::string body;
};

/// Online inference engine: loads the embedding store and catalog index
/// once, then answers recommendation requests concurrently. Model and index
/// are never mutated after load; updating them requires a restart.
class RecommendationService {
 public:
  explicit RecommendationService(ServiceConfig config);
  ~RecommendationService();

  RecommendationService(const RecommendationService&) = delete;
  RecommendationService& operator=(const RecommendationService&) = delete;

  /// Loads model, index and post-processing rules. Throws StartupError
  /// naming the failing path.
  void load();
  bool ready() const { return ready_.load(std::memory_order_acquire); }

  /// GET /v1/health
  HttpResult handle_health() const;
  /// POST /v1/recommendations
  HttpResult handle_recommend(std::string_view body) const;

  /// Binds the listener, serves in a background thread, then loads the
  /// artifacts. Health reports "loading" until load completes. On load
  /// failure the listener is stopped and StartupError propagates.
  void start();
  void stop();
  /// Blocks until the listener exits.
  void wait();
  int port() const { return bound_port_; }

  const ServiceConfig& config() const { return config_; }

 private:
  ServiceConfig config_;
  std::unique_ptr<TripleModel> model_;
  std::unique_ptr<CatalogIndex> index_;
  std::unique_ptr<Recommender> recommender_;
  std::atomic<bool> ready_{false};
  mutable std::atomic<std::uint64_t> requests_{0};
  mutable std::atomic<std::uint64_t> failures_{0};
  mutable std::atomic<std::uint64_t> request_counter_{0};
  std::unique_ptr<httplib::Server> server_;
  std::thread listener_;
  int bound_port_ = 0;
};

}  // namespace wbrec
