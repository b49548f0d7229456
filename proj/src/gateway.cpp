#include "ecvl/gateway.hpp"

#include <fcntl.h>
#include <openssl/sha.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "ecvl/error.hpp"

namespace ecvl {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string unquote(const std::string& v) {
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) return v.substr(1, v.size() - 2);
    return v;
}

double parse_positive(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || !std::isfinite(x)) throw RangeError("config: " + key + " must be a number");
    return x;
}

struct ParsedUrl {
    std::string origin;  // scheme://host:port
    std::string path;
};

ParsedUrl split_url(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos || url.compare(0, scheme, "http") != 0)
        throw RangeError("upstream url must start with http://: " + url);
    const auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

std::string iso_now() {
    const auto now = std::chrono::system_clock::now();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count();
    const std::time_t secs = static_cast<std::time_t>(ms / 1000);
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms % 1000));
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

}  // namespace

// ---------------------------------------------------------------------------
// Config

void GatewayConfig::validate() const {
    (void)listen_port();
    for (const auto* u : {&edge_upstream, &cloud_upstream, &embed_text, &embed_image}) {
        if (!*u) continue;
        if (!((*u)->timeout_s > 0.0)) throw RangeError("config: upstream timeouts must be > 0");
        split_url((*u)->url);
    }
    if (mode == GatewayMode::Proxy && (!edge_upstream || !cloud_upstream))
        throw RangeError("config: proxy mode needs edge_upstream and cloud_upstream");
    if (log_queue == 0) throw RangeError("config: log_queue must be >= 1");
    if (threads == 0) throw RangeError("config: threads must be >= 1");
}

std::string GatewayConfig::listen_host() const {
    const auto colon = listen.rfind(':');
    return colon == std::string::npos ? listen : listen.substr(0, colon);
}

int GatewayConfig::listen_port() const {
    const auto colon = listen.rfind(':');
    if (colon == std::string::npos) throw RangeError("config: listen must be host:port");
    const std::string p = listen.substr(colon + 1);
    const double v = parse_positive("listen port", p);
    if (v < 0 || v > 65535 || v != std::floor(v)) throw RangeError("config: listen port out of range");
    return static_cast<int>(v);
}

std::string_view mode_name(GatewayMode m) { return m == GatewayMode::Proxy ? "proxy" : "dry_run"; }

std::string_view fallback_name(FallbackPolicy f) {
    switch (f) {
        case FallbackPolicy::Edge: return "edge";
        case FallbackPolicy::Cloud: return "cloud";
        case FallbackPolicy::Error: return "error";
    }
    return "edge";
}

GatewayConfig parse_gateway_config(std::string_view text) {
    GatewayConfig c;
    std::istringstream in{std::string(text)};
    std::string line, section;
    int lineno = 0;
    auto upstream = [&](std::optional<UpstreamConfig>& slot) -> UpstreamConfig& {
        if (!slot) slot = UpstreamConfig{};
        return *slot;
    };
    while (std::getline(in, line)) {
        ++lineno;
        std::string l = line;
        bool in_quote = false;
        for (std::size_t i = 0; i < l.size(); ++i) {
            if (l[i] == '"') in_quote = !in_quote;
            if (l[i] == '#' && !in_quote) {
                l.resize(i);
                break;
            }
        }
        l = trim(l);
        if (l.empty()) continue;
        if (l.front() == '[') {
            if (l.back() != ']') throw RangeError("config line " + std::to_string(lineno) + ": bad section header");
            section = trim(std::string_view(l).substr(1, l.size() - 2));
            continue;
        }
        const auto eq = l.find('=');
        if (eq == std::string::npos) throw RangeError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(std::string_view(l).substr(0, eq));
        const std::string val = unquote(trim(std::string_view(l).substr(eq + 1)));
        if (!section.empty()) key = section + "." + key;
        std::replace(key.begin(), key.end(), '.', '_');

        if (key == "listen") c.listen = val;
        else if (key == "model_path") c.model_path = val;
        else if (key == "log_path") c.log_path = val;
        else if (key == "mode") {
            if (val == "proxy") c.mode = GatewayMode::Proxy;
            else if (val == "dry_run" || val == "dry-run") c.mode = GatewayMode::DryRun;
            else throw RangeError("config: mode must be proxy|dry_run");
        } else if (key == "fallback") {
            if (val == "edge") c.fallback = FallbackPolicy::Edge;
            else if (val == "cloud") c.fallback = FallbackPolicy::Cloud;
            else if (val == "error") c.fallback = FallbackPolicy::Error;
            else throw RangeError("config: fallback must be edge|cloud|error");
        } else if (key == "log_fsync") {
            if (val == "never") c.log_fsync = FsyncPolicy::Never;
            else if (val == "line") c.log_fsync = FsyncPolicy::EveryLine;
            else if (val == "batch") c.log_fsync = FsyncPolicy::OnBatch;
            else throw RangeError("config: log_fsync must be never|line|batch");
        } else if (key == "log_queue") c.log_queue = static_cast<std::size_t>(parse_positive(key, val));
        else if (key == "threads") c.threads = static_cast<unsigned>(parse_positive(key, val));
        else if (key == "edge_upstream" || key == "edge_upstream_url") upstream(c.edge_upstream).url = val;
        else if (key == "edge_upstream_timeout") upstream(c.edge_upstream).timeout_s = parse_positive(key, val);
        else if (key == "cloud_upstream" || key == "cloud_upstream_url") upstream(c.cloud_upstream).url = val;
        else if (key == "cloud_upstream_timeout") upstream(c.cloud_upstream).timeout_s = parse_positive(key, val);
        else if (key == "embed_text" || key == "embed_text_url") upstream(c.embed_text).url = val;
        else if (key == "embed_text_timeout") upstream(c.embed_text).timeout_s = parse_positive(key, val);
        else if (key == "embed_image" || key == "embed_image_url") upstream(c.embed_image).url = val;
        else if (key == "embed_image_timeout") upstream(c.embed_image).timeout_s = parse_positive(key, val);
        else throw RangeError("config line " + std::to_string(lineno) + ": unknown key " + key);
    }
    for (auto* u : {&c.edge_upstream, &c.cloud_upstream, &c.embed_text, &c.embed_image})
        if (*u && (*u)->url.empty()) throw RangeError("config: upstream timeout given without a url");
    c.validate();
    return c;
}

GatewayConfig load_gateway_config(const std::string& path) {
    std::string p = path;
    if (const char* env = std::getenv("ECVL_CONFIG"); env && *env) p = env;
    GatewayConfig c = p.empty() ? GatewayConfig{} : parse_gateway_config(read_file(p));
    if (const char* env = std::getenv("ECVL_MODEL"); env && *env) c.model_path = env;
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Requests / responses

RouteRequest parse_route_request(std::string_view body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error& e) {
        throw RangeError(std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw RangeError("request body must be a JSON object");
    RouteRequest r;
    if (!j.contains("query_text") || !j["query_text"].is_string()) throw RangeError("query_text (string) is required");
    r.query_text = j["query_text"].get<std::string>();
    if (j.contains("input_text") && !j["input_text"].is_null()) {
        if (!j["input_text"].is_string()) throw RangeError("input_text must be a string");
        r.input_text = j["input_text"].get<std::string>();
    }
    if (j.contains("image_b64") && !j["image_b64"].is_null()) {
        if (!j["image_b64"].is_string()) throw RangeError("image_b64 must be a string");
        r.image_b64 = j["image_b64"].get<std::string>();
    }
    if (j.contains("image") && !j["image"].is_null()) {
        const json& im = j["image"];
        if (im.is_string()) {
            r.image_b64 = im.get<std::string>();
        } else if (im.is_object()) {
            auto dim = [&](const char* k) {
                if (!im.contains(k) || !im[k].is_number_integer()) throw RangeError(std::string("image.") + k + " must be an integer");
                return im[k].get<int>();
            };
            r.image_meta = ImageMeta{dim("width"), dim("height"), dim("channels"), std::nullopt};
            if (r.image_meta->width <= 0 || r.image_meta->height <= 0) throw RangeError("image dimensions must be positive");
        } else {
            throw RangeError("image must be a base64 string or {width,height,channels}");
        }
    }
    if (j.contains("scenario_override") && !j["scenario_override"].is_null()) {
        const json& t = j["scenario_override"];
        if (!t.is_number()) throw RangeError("scenario_override must be a number");
        const double tau = t.get<double>();
        if (!(tau >= 0.0 && tau <= 1.0)) throw RangeError("scenario_override must lie in [0,1]");
        r.tau_override = tau;
    }
    return r;
}

std::string to_json(const RouteDecisionResponse& r) {
    json j = json::object();
    j["decision"] = route_name(r.decision);
    j["p"] = r.p;
    j["tau"] = r.tau;
    j["router_overhead"] = r.router_overhead_s;
    if (r.upstream_latency_s) j["upstream_latency"] = *r.upstream_latency_s;
    if (r.answer) j["answer"] = *r.answer;
    if (r.tokens_out) j["tokens_out"] = *r.tokens_out;
    j["degraded"] = r.degraded ? 1 : 0;
    if (r.fallback) j["fallback"] = *r.fallback;
    return j.dump();
}

// ---------------------------------------------------------------------------
// HTTP upstreams

namespace {

json post_json(const UpstreamConfig& cfg, const json& body) {
    const ParsedUrl u = split_url(cfg.url);
    httplib::Client cli(u.origin);
    const auto secs = static_cast<time_t>(cfg.timeout_s);
    const auto usecs = static_cast<time_t>((cfg.timeout_s - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    auto res = cli.Post(u.path, body.dump(), "application/json");
    if (!res) {
        const auto err = res.error();
        const bool timeout = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout;
        throw UpstreamFailure(cfg.url + ": " + httplib::to_string(err), timeout);
    }
    if (res->status < 200 || res->status >= 300)
        throw UpstreamFailure(cfg.url + ": HTTP " + std::to_string(res->status), false);
    try {
        return json::parse(res->body);
    } catch (const json::parse_error&) {
        throw UpstreamFailure(cfg.url + ": response is not JSON", false);
    }
}

class HttpInference final : public InferenceUpstream {
public:
    explicit HttpInference(UpstreamConfig c) : cfg_(std::move(c)) {}
    InferenceReply infer(const std::string& query, const std::optional<std::string>& image_b64) override {
        json body{{"query", query}};
        if (image_b64) body["image_b64"] = *image_b64;
        const json r = post_json(cfg_, body);
        if (!r.is_object() || !r.contains("text") || !r["text"].is_string())
            throw UpstreamFailure(cfg_.url + ": response lacks text", false);
        InferenceReply out{r["text"].get<std::string>(), std::nullopt};
        if (r.contains("tokens_out") && r["tokens_out"].is_number_integer()) out.tokens_out = r["tokens_out"].get<int64_t>();
        return out;
    }

private:
    UpstreamConfig cfg_;
};

class HttpEmbed final : public EmbedUpstream {
public:
    explicit HttpEmbed(UpstreamConfig c) : cfg_(std::move(c)) {}
    std::vector<float> embed(const std::optional<std::string>& text, const std::optional<std::string>& image_b64) override {
        json body = json::object();
        if (text) body["text"] = *text;
        if (image_b64) body["image_b64"] = *image_b64;
        const json r = post_json(cfg_, body);
        if (!r.is_object() || !r.contains("vector") || !r["vector"].is_array())
            throw UpstreamFailure(cfg_.url + ": response lacks vector", false);
        std::vector<float> v;
        v.reserve(r["vector"].size());
        for (const auto& x : r["vector"]) {
            if (!x.is_number()) throw UpstreamFailure(cfg_.url + ": non-numeric vector entry", false);
            const double d = x.get<double>();
            if (!std::isfinite(d)) throw UpstreamFailure(cfg_.url + ": non-finite vector entry", false);
            v.push_back(static_cast<float>(d));
        }
        return v;
    }

private:
    UpstreamConfig cfg_;
};

}  // namespace

std::unique_ptr<InferenceUpstream> make_http_inference(const UpstreamConfig& config) {
    return std::make_unique<HttpInference>(config);
}

std::unique_ptr<EmbedUpstream> make_http_embed(const UpstreamConfig& config) { return std::make_unique<HttpEmbed>(config); }

Upstreams make_http_upstreams(const GatewayConfig& c) {
    Upstreams u;
    if (c.edge_upstream) u.edge = make_http_inference(*c.edge_upstream);
    if (c.cloud_upstream) u.cloud = make_http_inference(*c.cloud_upstream);
    if (c.embed_text) u.embed_text = make_http_embed(*c.embed_text);
    if (c.embed_image) u.embed_image = make_http_embed(*c.embed_image);
    return u;
}

// ---------------------------------------------------------------------------
// Decision log

std::string content_digest(std::string_view bytes) {
    unsigned char md[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), md);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * SHA256_DIGEST_LENGTH);
    for (unsigned char c : md) {
        out += hex[c >> 4];
        out += hex[c & 15];
    }
    return out;
}

std::string to_json_line(const DecisionLogEntry& e) {
    json j = json::object();
    j["seq"] = e.seq;
    j["ts"] = e.timestamp;
    j["query_digest"] = e.query_digest;
    j["decision"] = route_name(e.decision);
    j["p"] = e.p;
    j["tau"] = e.tau;
    j["router_overhead"] = e.router_overhead_s;
    j["upstream_latency"] = e.upstream_latency_s ? json(*e.upstream_latency_s) : json(nullptr);
    j["degraded"] = e.degraded ? 1 : 0;
    j["fallback"] = e.fallback ? json(*e.fallback) : json(nullptr);
    return j.dump();
}

DecisionLogEntry parse_log_line(std::string_view line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("malformed log line: ") + e.what());
    }
    try {
        DecisionLogEntry e;
        e.seq = j.at("seq").get<uint64_t>();
        e.timestamp = j.at("ts").get<std::string>();
        e.query_digest = j.at("query_digest").get<std::string>();
        const std::string d = j.at("decision").get<std::string>();
        if (d != "edge" && d != "cloud") throw DataError("log decision must be edge|cloud");
        e.decision = d == "edge" ? Route::Edge : Route::Cloud;
        e.p = j.at("p").get<double>();
        e.tau = j.at("tau").get<double>();
        e.router_overhead_s = j.at("router_overhead").get<double>();
        if (!j.at("upstream_latency").is_null()) e.upstream_latency_s = j["upstream_latency"].get<double>();
        e.degraded = j.at("degraded").get<int>() != 0;
        if (!j.at("fallback").is_null()) e.fallback = j["fallback"].get<std::string>();
        return e;
    } catch (const json::exception& ex) {
        throw DataError(std::string("log line violates schema: ") + ex.what());
    }
}

DecisionLog::DecisionLog(const std::string& path, FsyncPolicy fsync, std::size_t capacity)
    : fsync_(fsync), capacity_(capacity) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw std::runtime_error("cannot open decision log " + path + ": " + std::strerror(errno));
    writer_ = std::thread([this] { run(); });
}

DecisionLog::~DecisionLog() {
    {
        std::lock_guard lk(mu_);
        stop_ = true;
    }
    not_empty_.notify_all();
    writer_.join();
    if (fsync_ != FsyncPolicy::Never) ::fsync(fd_);
    ::close(fd_);
}

void DecisionLog::append(DecisionLogEntry entry) {
    std::string line = to_json_line(entry) + "\n";
    std::unique_lock lk(mu_);
    not_full_.wait(lk, [&] { return queue_.size() < capacity_; });
    queue_.push_back(std::move(line));
    ++enqueued_;
    not_empty_.notify_one();
}

void DecisionLog::flush() {
    std::unique_lock lk(mu_);
    const uint64_t target = enqueued_;
    drained_.wait(lk, [&] { return written_ >= target; });
}

void DecisionLog::run() {
    auto write_all = [&](const std::string& s) {
        std::size_t off = 0;
        while (off < s.size()) {
            const ssize_t n = ::write(fd_, s.data() + off, s.size() - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                std::fprintf(stderr, "decision log write failed: %s\n", std::strerror(errno));
                return;
            }
            off += static_cast<std::size_t>(n);
        }
    };
    std::unique_lock lk(mu_);
    for (;;) {
        not_empty_.wait(lk, [&] { return stop_ || !queue_.empty(); });
        if (queue_.empty() && stop_) return;
        std::deque<std::string> batch;
        batch.swap(queue_);
        not_full_.notify_all();
        lk.unlock();
        if (fsync_ == FsyncPolicy::EveryLine) {
            for (const auto& line : batch) {
                write_all(line);
                ::fsync(fd_);
            }
        } else {
            std::string joined;
            for (const auto& line : batch) joined += line;
            write_all(joined);
            if (fsync_ == FsyncPolicy::OnBatch) ::fsync(fd_);
        }
        lk.lock();
        written_ += batch.size();
        drained_.notify_all();
    }
}

std::vector<DecisionLogEntry> replay_decision_log(const std::string& path, std::vector<std::string>* warnings) {
    const std::string text = read_file(path);
    std::vector<DecisionLogEntry> out;
    std::size_t pos = 0;
    int lineno = 0;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        const bool last = nl == std::string::npos;
        const std::string_view line(text.data() + pos, (last ? text.size() : nl) - pos);
        ++lineno;
        pos = last ? text.size() : nl + 1;
        if (trim(line).empty()) continue;
        try {
            out.push_back(parse_log_line(line));
        } catch (const DataError& e) {
            if (last) {
                if (warnings) warnings->push_back("line " + std::to_string(lineno) + ": skipping truncated final line");
                break;
            }
            throw DataError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<Decision> log_decisions(std::span<const DecisionLogEntry> entries) {
    std::vector<Decision> out;
    out.reserve(entries.size());
    for (const auto& e : entries)
        out.push_back({e.query_digest + "#" + std::to_string(e.seq), e.decision, e.p, 0.0, e.upstream_latency_s.value_or(0.0)});
    return out;
}

// ---------------------------------------------------------------------------
// Gateway

namespace {
constexpr std::size_t kOverheadWindow = 1 << 16;

double quantile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}
}  // namespace

std::string format_metrics(const MetricsSnapshot& s) {
    std::ostringstream o;
    o << "requests_total=" << s.requests_total << "\n"
      << "edge_routed=" << s.edge_routed << "\n"
      << "cloud_routed=" << s.cloud_routed << "\n"
      << "fallbacks=" << s.fallbacks << "\n"
      << "degraded_requests=" << s.degraded_requests << "\n"
      << "errored=" << s.errored << "\n"
      << "in_flight=" << s.in_flight << "\n";
    for (std::size_t i = 0; i < s.p_buckets.size(); ++i) {
        char key[32];
        std::snprintf(key, sizeof key, "p_bucket_%.1f_%.1f", static_cast<double>(i) / 10.0, static_cast<double>(i + 1) / 10.0);
        o << key << "=" << s.p_buckets[i] << "\n";
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "router_overhead_p50_s=%.6f\nrouter_overhead_p90_s=%.6f\n", s.overhead_p50_s,
                  s.overhead_p90_s);
    o << buf;
    std::snprintf(buf, sizeof buf, "router_overhead_p99_s=%.6f\nrouter_overhead_max_s=%.6f\n", s.overhead_p99_s,
                  s.overhead_max_s);
    o << buf;
    return o.str();
}

struct Gateway::Server {
    httplib::Server http;
};

Gateway::Gateway(GatewayConfig config, Upstreams upstreams)
    : config_(std::move(config)), upstreams_(std::move(upstreams)), started_(Clock::now()) {
    config_.validate();
    try {
        if (config_.model_path.empty()) throw std::runtime_error("no model_path configured");
        state_ = std::make_shared<const RouterState>(load_state(config_.model_path));
        checksum_ = state_checksum(*state_);
    } catch (const std::exception& e) {
        state_.reset();
        load_error_ = e.what();
    }
    if (!config_.log_path.empty()) log_ = std::make_unique<DecisionLog>(config_.log_path, config_.log_fsync, config_.log_queue);
    server_ = std::make_unique<Server>();
}

Gateway::Gateway(GatewayConfig config, std::shared_ptr<const RouterState> state, Upstreams upstreams)
    : config_(std::move(config)), upstreams_(std::move(upstreams)), state_(std::move(state)), started_(Clock::now()) {
    config_.validate();
    if (state_) checksum_ = state_checksum(*state_);
    else load_error_ = "no model";
    if (!config_.log_path.empty()) log_ = std::make_unique<DecisionLog>(config_.log_path, config_.log_fsync, config_.log_queue);
    server_ = std::make_unique<Server>();
}

Gateway::~Gateway() { stop(); }

Gateway::Features Gateway::features(const RouteRequest& req) const {
    const RouterState& st = *state_;
    const Architecture& arch = st.model.arch();
    ResponseRecord rec;
    rec.query_id = "request";
    rec.query_text = req.query_text;
    rec.input_text = req.input_text;
    if (req.image_b64) {
        const auto bytes = base64_decode(*req.image_b64);
        const ImageStats s = image_stats_from_bytes(bytes, "image_b64");
        rec.image = ImageMeta{s.width, s.height, s.channels, std::nullopt};
    } else if (req.image_meta) {
        rec.image = req.image_meta;
    }

    EmbeddingTable text{Modality::Text, arch.text_dim, {}};
    EmbeddingTable image{Modality::Image, arch.image_dim, {}};
    bool degraded = false;
    if (st.mask.text) {
        bool got = false;
        if (upstreams_.embed_text && arch.text_dim > 0) {
            try {
                auto v = upstreams_.embed_text->embed(stats_text(rec), std::nullopt);
                if (v.size() == arch.text_dim) {
                    text.rows.emplace(rec.query_id, std::move(v));
                    got = true;
                }
            } catch (const UpstreamFailure&) {
            }
        }
        degraded |= !got;
    }
    if (st.mask.image && rec.image) {
        bool got = false;
        if (upstreams_.embed_image && req.image_b64 && arch.image_dim > 0) {
            try {
                auto v = upstreams_.embed_image->embed(std::nullopt, req.image_b64);
                if (v.size() == arch.image_dim) {
                    image.rows.emplace(rec.query_id, std::move(v));
                    got = true;
                }
            } catch (const UpstreamFailure&) {
            }
        }
        degraded |= !got;
    }
    // no embedding at all means the statistics-only path, which is degraded even for a 001 model
    if (text.rows.empty() && image.rows.empty()) degraded = true;
    FeatureBundle b = assemble(rec, EmbeddingTables{&text, &image}, st.normalizer, st.mask);
    return {std::move(b), degraded};
}

void Gateway::record_overhead(double seconds) {
    std::lock_guard lk(overhead_mu_);
    if (overhead_ring_.size() < kOverheadWindow) {
        overhead_ring_.push_back(seconds);
    } else {
        overhead_ring_[overhead_next_] = seconds;
        overhead_next_ = (overhead_next_ + 1) % kOverheadWindow;
    }
}

RouteDecisionResponse Gateway::route(const RouteRequest& req, Clock::time_point started) {
    if (!state_) throw std::runtime_error("model not loaded: " + load_error_);
    Features f = features(req);
    RouteDecisionResponse r;
    r.p = state_->model.predict(f.bundle);
    r.tau = req.tau_override.value_or(state_->tau);
    r.decision = threshold_route(r.p, r.tau);
    r.degraded = f.degraded;
    r.router_overhead_s = seconds_since(started);
    record_overhead(r.router_overhead_s);
    p_buckets_[std::min<std::size_t>(static_cast<std::size_t>(r.p * 10.0), 9)].fetch_add(1);

    if (config_.mode == GatewayMode::Proxy) {
        const std::string query = req.input_text.empty() ? req.query_text : req.query_text + "\n" + req.input_text;
        auto call = [&](Route target) {
            InferenceUpstream* up = target == Route::Edge ? upstreams_.edge.get() : upstreams_.cloud.get();
            if (!up) throw UpstreamFailure(std::string(route_name(target)) + " upstream not configured", false);
            const auto t0 = Clock::now();
            InferenceReply reply = up->infer(query, req.image_b64);
            r.upstream_latency_s = seconds_since(t0);
            r.answer = std::move(reply.text);
            r.tokens_out = reply.tokens_out;
        };
        try {
            call(r.decision);
        } catch (const UpstreamFailure& e) {
            const std::string cause = std::string(route_name(r.decision)) + (e.timeout ? "_timeout" : "_error");
            const Route failed = r.decision;
            if (config_.fallback == FallbackPolicy::Error ||
                (config_.fallback == FallbackPolicy::Edge ? Route::Edge : Route::Cloud) == failed)
                throw UpstreamFailure("upstream failure (" + cause + "): " + e.what(), e.timeout);
            r.decision = config_.fallback == FallbackPolicy::Edge ? Route::Edge : Route::Cloud;
            r.fallback = cause;
            fallbacks_.fetch_add(1);
            call(r.decision);  // a second failure propagates as UpstreamFailure
        }
    }

    if (log_) {
        DecisionLogEntry e;
        e.seq = seq_.fetch_add(1);
        e.timestamp = iso_now();
        std::string content = req.query_text;
        content += '\x1f';
        content += req.input_text;
        content += '\x1f';
        if (req.image_b64) content += *req.image_b64;
        else if (req.image_meta)
            content += std::to_string(req.image_meta->width) + "x" + std::to_string(req.image_meta->height) + "x" +
                       std::to_string(req.image_meta->channels);
        e.query_digest = content_digest(content);
        e.decision = r.decision;
        e.p = r.p;
        e.tau = r.tau;
        e.router_overhead_s = r.router_overhead_s;
        e.upstream_latency_s = r.upstream_latency_s;
        e.degraded = r.degraded;
        e.fallback = r.fallback;
        log_->append(std::move(e));
    }
    if (r.degraded) degraded_.fetch_add(1);
    (r.decision == Route::Edge ? edge_routed_ : cloud_routed_).fetch_add(1);
    return r;
}

HttpResult Gateway::handle_route(std::string_view body) {
    const auto started = Clock::now();
    requests_total_.fetch_add(1);
    in_flight_.fetch_add(1);
    struct Done {
        std::atomic<uint64_t>& n;
        ~Done() { n.fetch_sub(1); }
    } done{in_flight_};
    auto fail = [&](int status, const std::string& msg) {
        errored_.fetch_add(1);
        return HttpResult{status, json{{"error", msg}}.dump()};
    };
    if (!state_) return fail(503, "model not loaded: " + load_error_);
    RouteRequest req;
    try {
        req = parse_route_request(body);
        return {200, to_json(route(req, started))};
    } catch (const RangeError& e) {
        return fail(400, e.what());
    } catch (const std::invalid_argument& e) {
        return fail(400, e.what());
    } catch (const DataError& e) {  // undecodable image payload
        return fail(400, e.what());
    } catch (const UpstreamFailure& e) {
        return fail(e.timeout ? 504 : 502, e.what());
    } catch (const std::exception& e) {
        return fail(500, e.what());
    }
}

HttpResult Gateway::healthz() const {
    json j = json::object();
    const double uptime = seconds_since(started_);
    if (!state_) {
        j["status"] = "not-ready";
        j["error"] = load_error_;
        j["uptime_s"] = uptime;
        return {503, j.dump()};
    }
    char crc[16];
    std::snprintf(crc, sizeof crc, "%08x", checksum_);
    j["status"] = "ok";
    j["model_checksum"] = crc;
    j["tau"] = state_->tau;
    j["uptime_s"] = uptime;
    j["mode"] = mode_name(config_.mode);
    return {200, j.dump()};
}

MetricsSnapshot Gateway::metrics_snapshot() const {
    MetricsSnapshot s;
    // routed counters first so the identity routed + in_flight + errored <= total holds on a live snapshot
    s.edge_routed = edge_routed_.load();
    s.cloud_routed = cloud_routed_.load();
    s.errored = errored_.load();
    s.fallbacks = fallbacks_.load();
    s.degraded_requests = degraded_.load();
    s.in_flight = in_flight_.load();
    s.requests_total = requests_total_.load();
    for (std::size_t i = 0; i < s.p_buckets.size(); ++i) s.p_buckets[i] = p_buckets_[i].load();
    std::vector<double> window;
    {
        std::lock_guard lk(overhead_mu_);
        window = overhead_ring_;
    }
    if (!window.empty()) {
        s.overhead_p50_s = quantile(window, 0.50);
        s.overhead_p90_s = quantile(window, 0.90);
        s.overhead_p99_s = quantile(window, 0.99);
        s.overhead_max_s = *std::max_element(window.begin(), window.end());
    }
    return s;
}

HttpResult Gateway::metrics() const { return {200, format_metrics(metrics_snapshot()), "text/plain"}; }

void Gateway::serve() {
    auto& http = server_->http;
    const unsigned n = config_.threads;
    http.new_task_queue = [n] { return new httplib::ThreadPool(n); };
    auto reply = [](httplib::Response& res, const HttpResult& r) {
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    http.Post("/v1/route", [this, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, handle_route(req.body));
    });
    http.Get("/healthz", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, healthz()); });
    http.Get("/metrics", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, metrics()); });

    const std::string host = config_.listen_host();
    const int port = config_.listen_port();
    int bound = port;
    if (port == 0) {
        bound = http.bind_to_any_port(host);
        if (bound < 0) throw std::runtime_error("cannot bind " + host);
    } else if (!http.bind_to_port(host, port)) {
        throw std::runtime_error("cannot bind " + config_.listen);
    }
    bound_port_.store(bound);
    http.listen_after_bind();
}

void Gateway::wait_listening() const {
    while (bound_port_.load() == 0 || !server_->http.is_running())
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
}

void Gateway::stop() {
    if (server_) server_->http.stop();
}

void Gateway::flush_log() {
    if (log_) log_->flush();
}

}  // namespace ecvl
