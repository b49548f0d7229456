#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "ecvl/metrics.hpp"
#include "ecvl/training.hpp"

namespace ecvl {

struct UpstreamConfig {
    std::string url;  // http://host:port/path
    double timeout_s = 30.0;
};

enum class GatewayMode { Proxy, DryRun };
enum class FallbackPolicy { Edge, Cloud, Error };
enum class FsyncPolicy { Never, EveryLine, OnBatch };

struct GatewayConfig {
    std::string listen = "127.0.0.1:8080";
    std::optional<UpstreamConfig> edge_upstream;
    std::optional<UpstreamConfig> cloud_upstream;
    std::optional<UpstreamConfig> embed_text;
    std::optional<UpstreamConfig> embed_image;
    std::string model_path;
    GatewayMode mode = GatewayMode::DryRun;
    FallbackPolicy fallback = FallbackPolicy::Edge;
    std::string log_path;  // empty disables the decision log
    FsyncPolicy log_fsync = FsyncPolicy::OnBatch;
    std::size_t log_queue = 4096;
    unsigned threads = 8;

    void validate() const;
    std::string listen_host() const;
    int listen_port() const;
};

/// Flat key = value lines ('#' comments, optional quotes, optional [section]
/// headers that prefix keys as "section.key").
GatewayConfig parse_gateway_config(std::string_view text);
/// Reads `path` (or $ECVL_CONFIG when `path` is empty); $ECVL_MODEL overrides model_path.
GatewayConfig load_gateway_config(const std::string& path);

std::string_view mode_name(GatewayMode m);
std::string_view fallback_name(FallbackPolicy f);

struct RouteRequest {
    std::string query_text;
    std::string input_text;
    std::optional<std::string> image_b64;
    std::optional<ImageMeta> image_meta;
    std::optional<double> tau_override;
};

/// Throws RangeError on a malformed body.
RouteRequest parse_route_request(std::string_view body);

struct RouteDecisionResponse {
    Route decision = Route::Cloud;
    double p = 0.0;
    double tau = 0.0;
    double router_overhead_s = 0.0;
    std::optional<double> upstream_latency_s;
    std::optional<std::string> answer;
    std::optional<int64_t> tokens_out;
    bool degraded = false;
    std::optional<std::string> fallback;  // cause, e.g. "cloud_timeout"
};

std::string to_json(const RouteDecisionResponse& response);

// ---------------------------------------------------------------------------
// Upstreams

struct UpstreamFailure : std::runtime_error {
    bool timeout;
    UpstreamFailure(const std::string& what, bool is_timeout) : std::runtime_error(what), timeout(is_timeout) {}
};

struct InferenceReply {
    std::string text;
    std::optional<int64_t> tokens_out;
};

class InferenceUpstream {
public:
    virtual ~InferenceUpstream() = default;
    /// Throws UpstreamFailure.
    virtual InferenceReply infer(const std::string& query, const std::optional<std::string>& image_b64) = 0;
};

class EmbedUpstream {
public:
    virtual ~EmbedUpstream() = default;
    /// Exactly one of text / image_b64 is set. Throws UpstreamFailure.
    virtual std::vector<float> embed(const std::optional<std::string>& text,
                                     const std::optional<std::string>& image_b64) = 0;
};

std::unique_ptr<InferenceUpstream> make_http_inference(const UpstreamConfig& config);
std::unique_ptr<EmbedUpstream> make_http_embed(const UpstreamConfig& config);

struct Upstreams {
    std::shared_ptr<InferenceUpstream> edge;
    std::shared_ptr<InferenceUpstream> cloud;
    std::shared_ptr<EmbedUpstream> embed_text;
    std::shared_ptr<EmbedUpstream> embed_image;
};

Upstreams make_http_upstreams(const GatewayConfig& config);

// ---------------------------------------------------------------------------
// Decision log

struct DecisionLogEntry {
    uint64_t seq = 0;
    std::string timestamp;  // ISO-8601 UTC
    std::string query_digest;
    Route decision = Route::Cloud;
    double p = 0.0;
    double tau = 0.0;
    double router_overhead_s = 0.0;
    std::optional<double> upstream_latency_s;
    bool degraded = false;
    std::optional<std::string> fallback;
};

std::string to_json_line(const DecisionLogEntry& entry);
DecisionLogEntry parse_log_line(std::string_view line);

/// Single writer thread behind a bounded queue; append() blocks while the queue is full.
class DecisionLog {
public:
    DecisionLog(const std::string& path, FsyncPolicy fsync, std::size_t capacity);
    ~DecisionLog();
    DecisionLog(const DecisionLog&) = delete;
    DecisionLog& operator=(const DecisionLog&) = delete;

    void append(DecisionLogEntry entry);
    /// Blocks until everything appended so far is written.
    void flush();

private:
    void run();

    int fd_ = -1;
    FsyncPolicy fsync_;
    std::size_t capacity_;
    std::mutex mu_;
    std::condition_variable not_full_, not_empty_, drained_;
    std::deque<std::string> queue_;
    uint64_t enqueued_ = 0, written_ = 0;
    bool stop_ = false;
    std::thread writer_;
};

/// Reads a decision log. A truncated final line is skipped with a warning; a bad line elsewhere is a DataError.
std::vector<DecisionLogEntry> replay_decision_log(const std::string& path, std::vector<std::string>* warnings = nullptr);

/// Decisions suitable for compute_metrics (score 0, latency = upstream latency or 0).
std::vector<Decision> log_decisions(std::span<const DecisionLogEntry> entries);

/// Lowercase hex SHA-256.
std::string content_digest(std::string_view bytes);

// ---------------------------------------------------------------------------
// Gateway

struct MetricsSnapshot {
    uint64_t requests_total = 0;
    uint64_t edge_routed = 0;
    uint64_t cloud_routed = 0;
    uint64_t fallbacks = 0;
    uint64_t degraded_requests = 0;
    uint64_t errored = 0;
    uint64_t in_flight = 0;
    std::array<uint64_t, 10> p_buckets{};  // [0,0.1), ..., [0.9,1.0]
    double overhead_p50_s = 0.0;
    double overhead_p90_s = 0.0;
    double overhead_p99_s = 0.0;
    double overhead_max_s = 0.0;
};

std::string format_metrics(const MetricsSnapshot& snapshot);

struct HttpResult {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

class Gateway {
public:
    /// Loads config.model_path; a load failure leaves the gateway not ready instead of throwing.
    Gateway(GatewayConfig config, Upstreams upstreams);
    Gateway(GatewayConfig config, std::shared_ptr<const RouterState> state, Upstreams upstreams);
    ~Gateway();

    bool ready() const { return state_ != nullptr; }
    const std::string& load_error() const { return load_error_; }

    /// Typed path; throws RangeError (bad request) or std::runtime_error (not ready / upstream failure with fallback=error).
    RouteDecisionResponse route(const RouteRequest& request, std::chrono::steady_clock::time_point started);

    HttpResult handle_route(std::string_view body);
    HttpResult healthz() const;
    HttpResult metrics() const;
    MetricsSnapshot metrics_snapshot() const;

    /// Blocks serving HTTP until stop().
    void serve();
    void stop();
    /// Port actually bound (after serve() has started listening).
    int bound_port() const { return bound_port_.load(); }
    void wait_listening() const;
    void flush_log();

private:
    struct Features {
        FeatureBundle bundle;
        bool degraded = false;
    };
    Features features(const RouteRequest& request) const;
    void record_overhead(double seconds);

    GatewayConfig config_;
    Upstreams upstreams_;
    std::shared_ptr<const RouterState> state_;
    std::string load_error_;
    uint32_t checksum_ = 0;
    std::chrono::steady_clock::time_point started_;

    std::atomic<uint64_t> requests_total_{0}, edge_routed_{0}, cloud_routed_{0}, fallbacks_{0}, degraded_{0},
        errored_{0}, in_flight_{0}, seq_{0};
    std::array<std::atomic<uint64_t>, 10> p_buckets_{};
    mutable std::mutex overhead_mu_;
    std::vector<double> overhead_ring_;
    std::size_t overhead_next_ = 0;

    std::unique_ptr<DecisionLog> log_;
    struct Server;
    std::unique_ptr<Server> server_;
    std::atomic<int> bound_port_{0};
};

}  // namespace ecvl
