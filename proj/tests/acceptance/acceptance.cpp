// Acceptance harness: one PASS/FAIL line per criterion.
//
//   acceptance [criterion ...]     (no arguments runs all of them)
//
// Exit status is 0 only when every requested criterion passes.

#include <httplib.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>
#include <vector>

#include <json.hpp>

#include "ecvl/evaluation.hpp"
#include "ecvl/gateway.hpp"
#include "ecvl/labeling.hpp"
#include "ecvl/metrics.hpp"
#include "ecvl/rng.hpp"
#include "ecvl/router_net.hpp"
#include "ecvl/synthgen.hpp"
#include "ecvl/training.hpp"

using namespace ecvl;

namespace {

// Pinned tolerances and budgets.
constexpr double kRcsTolerance = 0.001;
constexpr double kMinTestAcc = 0.95;
constexpr double kGradRelErr = 1e-4;
constexpr double kOverheadP99 = 0.005;  // seconds
constexpr std::size_t kGatewayRequests = 1000;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "ecvl-accept-XXXXXX").string();
        path = mkdtemp(tmpl.data());
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<PairRecord> pairs_of(const SynthData& d) {
    return pair_view(d.dataset.records, "edge-small", "cloud-large").pairs;
}

// ---------------------------------------------------------------------------

struct PublishedRow {
    const char* table;
    const char* row;
    double apsp, ca, ail;
    std::array<double, 3> rcs;
};

// (APSP, CA, AIL) -> (RCS1, RCS2, RCS3) as printed
const PublishedRow kPublished[] = {
    {"38B/1B", "router", 0.506, 0.824, 4.53, {0.685, 0.601, 0.582}},
    {"38B/1B", "gbdt", 0.518, 0.631, 5.38, {0.680, 0.596, 0.577}},
    {"38B/1B", "mlp", 0.515, 0.645, 4.41, {0.678, 0.594, 0.575}},
    {"38B/1B", "mf", 0.503, 0.439, 4.49, {0.643, 0.551, 0.540}},
    {"38B/1B", "large", 0.549, 0.000, 7.44, {0.652, 0.542, 0.538}},
    {"38B/1B", "small", 0.456, 1.000, 0.94, {0.646, 0.575, 0.554}},
    {"8B/1B", "router", 0.483, 0.910, 1.34, {0.669, 0.591, 0.572}},
    {"8B/1B", "gbdt", 0.478, 0.941, 1.29, {0.666, 0.589, 0.570}},
    {"8B/1B", "mlp", 0.485, 0.873, 1.24, {0.668, 0.589, 0.570}},
    {"8B/1B", "mf", 0.469, 0.800, 1.18, {0.642, 0.564, 0.547}},
    {"8B/1B", "large", 0.529, 0.000, 1.63, {0.633, 0.527, 0.527}},
    {"8B/1B", "small", 0.456, 1.000, 0.94, {0.646, 0.575, 0.554}},
    {"38B/8B", "router", 0.533, 0.982, 1.77, {0.736, 0.649, 0.629}},
    {"38B/8B", "gbdt", 0.534, 0.965, 1.86, {0.735, 0.648, 0.628}},
    {"38B/8B", "mlp", 0.534, 0.887, 2.30, {0.727, 0.638, 0.619}},
    {"38B/8B", "mf", 0.529, 1.000, 1.63, {0.733, 0.647, 0.627}},
    {"38B/8B", "large", 0.549, 0.000, 7.44, {0.652, 0.542, 0.538}},
    {"38B/8B", "small", 0.529, 1.000, 1.63, {0.733, 0.647, 0.627}},
    {"ablation", "full", 0.5064, 0.8241, 4.5331, {0.6855, 0.6008, 0.5820}},
    {"ablation", "w.o. text", 0.5079, 0.6720, 4.9529, {0.6718, 0.5836, 0.5767}},
    {"ablation", "w.o. image", 0.5174, 0.5496, 4.7378, {0.6711, 0.5786, 0.5653}},
    {"ablation", "w.o. statistic", 0.5150, 0.6567, 5.1550, {0.6785, 0.5886, 0.5729}},
    {"ablation", "only text", 0.5152, 0.5710, 5.0925, {0.6702, 0.5786, 0.5647}},
    {"ablation", "only image", 0.5174, 0.5807, 4.9666, {0.6740, 0.5821, 0.5680}},
    {"ablation", "only statistic", 0.4894, 0.9032, 4.4539, {0.6732, 0.5933, 0.5730}},
    {"ablation", "random", 0.4980, 0.5000, 4.1653, {0.6434, 0.5538, 0.5418}},
    {"ablation", "all-at-large", 0.5492, 0.0000, 7.4391, {0.6516, 0.5418, 0.5380}},
    {"ablation", "all-at-small", 0.4557, 1.0000, 0.9359, {0.6459, 0.5748, 0.5543}},
};

Outcome rcs_identity() {
    const auto presets = scenario_presets();
    std::size_t cells = 0;
    std::vector<std::string> bad;
    for (const auto& row : kPublished) {
        for (std::size_t s = 0; s < 3; ++s) {
            ++cells;
            const double got = rcs_combine(row.apsp, row.ca, row.ail, presets[s]);
            if (std::abs(got - row.rcs[s]) > kRcsTolerance)
                bad.push_back(fmt("%s %s %s published %.4f computed %.4f", row.table, row.row,
                                  presets[s].name.c_str(), row.rcs[s], got));
        }
    }
    std::string detail = fmt("%zu/%zu cells within %.3f", cells - bad.size(), cells, kRcsTolerance);
    for (const auto& b : bad) detail += "; " + b;
    return {bad.empty(), detail};
}

// ---------------------------------------------------------------------------

// Case table written out independently of the library rule.
uint8_t brute_label(int e, int c, int m) {
    if (c < m) return 1;  // cloud misses the bar anyway
    if (e >= m) return 1;  // both meet it
    return 0;
}

Outcome labeling_oracle() {
    std::size_t mismatches = 0, soft_mismatches = 0, n = 0;
    for (int e = 1; e <= 10; ++e)
        for (int c = 1; c <= 10; ++c)
            for (int m = 1; m <= 10; ++m) {
                ++n;
                mismatches += label_proposed(e, c, m) != brute_label(e, c, m);
                soft_mismatches += apply_strategy(WinSoftRule{0.0}, e, c) != apply_strategy(WinHardRule{}, e, c);
            }
    return {mismatches == 0 && soft_mismatches == 0,
            fmt("%zu triples, %zu proposed mismatches, %zu win-soft(0)/win-hard mismatches", n, mismatches,
                soft_mismatches)};
}

// ---------------------------------------------------------------------------

Outcome calibration_oracle() {
    Rng rng(2024);
    const auto grid = tau_grid();
    std::size_t mismatches = 0, checks = 0;
    for (int f = 0; f < 50; ++f) {
        SynthSpec spec;
        spec.n_records = 1 + rng.below(200);
        spec.seed = 100 + f;
        spec.cloud_slower = f % 3 != 0;
        const auto d = generate(spec);
        const auto pairs = pairs_of(d);
        // half the fixtures put p exactly on grid points to exercise ties
        std::vector<double> p;
        for (std::size_t i = 0; i < pairs.size(); ++i)
            p.push_back(f % 2 ? grid[rng.below(grid.size())] : rng.uniform());
        for (const auto& s : scenario_presets(4.0 + f % 4)) {
            ++checks;
            const auto a = grid_search_tau(p, pairs, s);
            const auto b = oracle_best_tau(p, pairs, s, grid);
            mismatches += a.tau != b.tau || a.rcs != b.rcs;
        }
    }
    return {mismatches == 0, fmt("%zu searches over 50 fixtures, %zu mismatches", checks, mismatches)};
}

// ---------------------------------------------------------------------------

Architecture small_mlp(uint32_t text_dim, uint32_t image_dim) {
    Architecture a;
    a.variant = Variant::Mlp;
    a.text_dim = text_dim;
    a.image_dim = image_dim;
    a.mlp_hidden = {32, 32};
    a.dropout = 0.0;
    return a;
}

Outcome monotonicity() {
    std::size_t violations = 0;
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        SynthSpec spec;
        spec.n_records = 300;
        spec.seed = seed;
        spec.cloud_slower = true;
        const auto d = generate(spec);
        const auto pairs = pairs_of(d);
        std::vector<StatsVector> rows;
        for (const auto& pr : pairs) rows.push_back(raw_stats(*pr.record));
        const Normalizer norm = fit_normalizer(rows);
        const EmbeddingTables tables{&d.text, &d.image};
        const auto bundles = build_bundles(pairs, tables, norm, ModalityMask{});

        // scores from a briefly trained router
        const auto labels = label_dataset(pairs, ProposedRule{spec.mes}).labels;
        LabeledSet train_set{bundles, align_labels(pairs, labels)};
        ValidationSet valid_set{bundles, pairs};
        TrainConfig cfg;
        cfg.epochs = 2;
        cfg.seed = seed;
        const RouterState state =
            train(small_mlp(spec.k_text, spec.k_image), train_set, valid_set, cfg, scenario_preset("rcs1"));
        const auto p = state.model.predict(bundles);

        double prev_ca = 2.0, prev_ail = -1.0;
        for (double tau : tau_grid()) {
            const auto decisions = route_by_threshold(p, pairs, tau);
            const auto m = compute_metrics(decisions, {}, spec.mes, {});
            violations += m.ca > prev_ca;
            violations += m.ail < prev_ail;
            prev_ca = m.ca;
            prev_ail = m.ail;
        }
    }
    return {violations == 0, fmt("20 seeds x 21 thresholds, %zu violations", violations)};
}

// ---------------------------------------------------------------------------

double worst_gradient_error() {
    Rng rng(10);
    double worst = 0.0;
    for (Variant v : {Variant::Transformer, Variant::Mlp, Variant::BilinearMF}) {
        Architecture a;
        a.variant = v;
        a.text_dim = 5;
        a.image_dim = 4;
        a.model_dim = 8;
        a.layers = 2;
        a.heads = 2;
        a.ffn_dim = 16;
        a.dropout = 0.0;
        a.mlp_hidden = {8, 6};
        a.mf_rank = 3;
        RouterNet<double> net(a, 6);
        const std::size_t rows = 6, width = a.input_dim();
        std::vector<double> x(rows * width);
        for (auto& v2 : x) v2 = rng.uniform(-1.0, 1.0);
        std::vector<uint8_t> labels;
        for (std::size_t i = 0; i < rows; ++i) labels.push_back(static_cast<uint8_t>(i % 2));
        net.zero_grad();
        net.loss_and_grad(x, labels, nullptr);
        for (auto& t : net.params()) {
            const std::size_t stride = std::max<std::size_t>(1, t.size() / 7);
            for (std::size_t i = 0; i < t.size(); i += stride) {
                const double h = 1e-5, saved = t.value[i];
                t.value[i] = saved + h;
                const double lp = net.loss(x, labels);
                t.value[i] = saved - h;
                const double lm = net.loss(x, labels);
                t.value[i] = saved;
                const double num = (lp - lm) / (2 * h);
                worst = std::max(worst, std::abs(num - t.grad[i]) / std::max(1e-6, std::abs(num) + std::abs(t.grad[i])));
            }
        }
    }
    return worst;
}

ExperimentData experiment(const SynthData& d, const SynthSpec& spec, uint64_t seed) {
    const auto pairs = pairs_of(d);
    const auto labels = label_dataset(pairs, ProposedRule{spec.mes}).labels;
    const auto bits = align_labels(pairs, labels);
    const auto split = stratified_split(pairs, bits, SplitRatios{}, seed);
    ExperimentData data;
    std::vector<StatsVector> rows;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        switch (split.by_query.at(pairs[i].query_id())) {
            case Split::Train:
                data.train.push_back(pairs[i]);
                data.train_labels.push_back(bits[i]);
                rows.push_back(raw_stats(*pairs[i].record));
                break;
            case Split::Valid: data.valid.push_back(pairs[i]); break;
            case Split::Test:
                data.test.push_back(pairs[i]);
                data.test_labels.push_back(labels[i]);
                break;
        }
    }
    data.tables = {&d.text, &d.image};
    data.normalizer = fit_normalizer(rows);
    return data;
}

Outcome learning_check() {
    const auto spec = SynthSpec::parse("n=2000,margin=1.0,signal=separable,seed=7");
    const auto d = generate(spec);
    const auto data = experiment(d, spec, 7);
    Architecture arch;  // default transformer
    arch.text_dim = spec.k_text;
    arch.image_dim = spec.k_image;
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 7;
    cfg.threads = std::max(1u, std::thread::hardware_concurrency());
    const ModalityMask mask{};
    const auto rows = ablation_run(data, std::span(&mask, 1), arch, cfg, scenario_preset("rcs1", spec.mes));
    // router, random, all-large, all-small
    const double acc = rows[0].acc.value_or(0.0);
    const double router = *rows[0].rcs_for("rcs1");
    const double large = *rows[2].rcs_for("rcs1"), small = *rows[3].rcs_for("rcs1");
    const double grad = worst_gradient_error();
    const bool pass = acc >= kMinTestAcc && router >= std::max(large, small) && grad <= kGradRelErr;
    return {pass, fmt("test acc %.4f (>= %.2f), rcs1 router %.4f vs all-large %.4f all-small %.4f, "
                      "gradient rel err %.2e (<= %.0e), n_test %zu",
                      acc, kMinTestAcc, router, large, small, grad, kGradRelErr, rows[0].n)};
}

// ---------------------------------------------------------------------------

Outcome mes_sweep_shape() {
    SynthSpec spec;
    spec.n_records = 1000;
    spec.case_b_fraction = 0.15;
    spec.seed = 11;
    const auto d = generate(spec);
    const auto pairs = pairs_of(d);

    std::vector<double> mes_values;
    for (int m = 1; m <= 10; ++m) mes_values.push_back(m);
    // routing straight from the labels keeps the sweep about the data, not a model
    const PolicyBuilder oracle = [&](std::span<const uint8_t> labels, const ScenarioConfig& s) {
        std::vector<double> p(labels.begin(), labels.end());
        const auto best = grid_search_tau(p, pairs, s);
        return PolicyOutcome{route_by_threshold(p, pairs, best.tau), best.tau, best.rcs};
    };
    const auto rows = mes_sweep(
        pairs, [](double mes) { return LabelStrategy{ProposedRule{mes}}; }, mes_values, scenario_preset("rcs1"),
        oracle);

    bool monotone = true;
    std::string curve;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i > 0 && rows[i].failure_rate < rows[i - 1].failure_rate) monotone = false;
        if (rows[i].failure_rate != failure_rate(pairs, rows[i].mes)) monotone = false;
        curve += fmt("%s%.0f:%.3f", i ? " " : "", rows[i].mes, rows[i].failure_rate);
    }
    const bool zero_at_one = rows.front().failure_rate == 0.0;
    const bool climbs = rows.back().failure_rate > rows[rows.size() / 2].failure_rate;
    return {monotone && zero_at_one && climbs, "failure_rate by mes " + curve};
}

// ---------------------------------------------------------------------------

struct StubUpstream : InferenceUpstream {
    std::atomic<int> calls{0};
    InferenceReply infer(const std::string& q, const std::optional<std::string>&) override {
        ++calls;
        return {q, 1};
    }
};

Outcome gateway() {
    // statistics-only router at the default transformer size
    const auto spec = SynthSpec::parse("n=400,seed=5");
    const auto d = generate(spec);
    auto data = experiment(d, spec, 5);
    Architecture arch;
    arch.text_dim = spec.k_text;
    arch.image_dim = spec.k_image;
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 5;
    const ModalityMask mask = ModalityMask::parse("001");
    LabeledSet train_set{build_bundles(data.train, data.tables, data.normalizer, mask), data.train_labels};
    ValidationSet valid_set{build_bundles(data.valid, data.tables, data.normalizer, mask), data.valid};
    auto state = std::make_shared<RouterState>(train(arch, train_set, valid_set, cfg, scenario_preset("rcs1")));
    state->normalizer = data.normalizer;
    state->mask = mask;

    TempDir dir;
    GatewayConfig c;
    c.listen = "127.0.0.1:0";
    c.mode = GatewayMode::DryRun;
    c.threads = 8;
    c.log_path = dir / "decisions.jsonl";
    auto edge = std::make_shared<StubUpstream>(), cloud = std::make_shared<StubUpstream>();
    Gateway g(c, state, Upstreams{edge, cloud, nullptr, nullptr});

    std::vector<std::string> bodies;
    for (int i = 0; i < 10; ++i) {
        std::string q = "how many items";
        for (int w = 0; w < i * 7; ++w) q += w % 3 ? " word" : " 42!";
        bodies.push_back(nlohmann::json{{"query_text", q}}.dump());
    }
    // reference decisions, one at a time on a separate instance without a log
    GatewayConfig quiet = c;
    quiet.log_path.clear();
    Gateway ref(quiet, state, Upstreams{edge, cloud, nullptr, nullptr});
    auto key = [](const std::string& body) {
        const auto j = nlohmann::json::parse(body);
        return j.at("decision").get<std::string>() + fmt("/%.17g", j.at("p").get<double>());
    };
    std::vector<std::string> expected;
    for (const auto& b : bodies) {
        const auto r = ref.handle_route(b);
        if (r.status != 200) return {false, "reference request failed: " + r.body};
        expected.push_back(key(r.body));
    }
    // uncontended overhead, reported for context only
    for (std::size_t i = 0; i < kGatewayRequests; ++i) ref.handle_route(bodies[i % bodies.size()]);
    const double sequential_p99 = ref.metrics_snapshot().overhead_p99_s;

    std::thread server([&] { g.serve(); });
    g.wait_listening();
    constexpr unsigned kClients = 16;
    std::atomic<std::size_t> mismatched{0}, failed{0};
    std::vector<std::thread> clients;
    for (unsigned t = 0; t < kClients; ++t)
        clients.emplace_back([&, t] {
            httplib::Client cli("127.0.0.1", g.bound_port());
            for (std::size_t i = t; i < kGatewayRequests; i += kClients) {
                const auto res = cli.Post("/v1/route", bodies[i % bodies.size()], "application/json");
                if (!res || res->status != 200) {
                    ++failed;
                    continue;
                }
                if (key(res->body) != expected[i % bodies.size()]) ++mismatched;
            }
        });
    for (auto& t : clients) t.join();
    g.stop();
    server.join();
    g.flush_log();

    const auto m = g.metrics_snapshot();
    const auto log = replay_decision_log(c.log_path);
    std::size_t log_edge = 0;
    for (const auto& e : log) log_edge += e.decision == Route::Edge;
    const bool accounting = m.requests_total == kGatewayRequests && m.edge_routed + m.cloud_routed == m.requests_total &&
                            m.errored == 0 && m.in_flight == 0 && edge->calls == 0 && cloud->calls == 0 &&
                            log.size() == kGatewayRequests && log_edge == m.edge_routed;
    const bool pass = accounting && failed == 0 && mismatched == 0 && m.overhead_p99_s < kOverheadP99;
    return {pass, fmt("requests %llu = edge %llu + cloud %llu, upstream calls %d, failed %zu, "
                      "nondeterministic %zu, log lines %zu, overhead p50 %.3f ms p99 %.3f ms (< %.0f ms); "
                      "%u clients on %u cores, sequential p99 %.3f ms",
                      static_cast<unsigned long long>(m.requests_total), static_cast<unsigned long long>(m.edge_routed),
                      static_cast<unsigned long long>(m.cloud_routed), edge->calls + cloud->calls, failed.load(),
                      mismatched.load(), log.size(), m.overhead_p50_s * 1e3, m.overhead_p99_s * 1e3,
                      kOverheadP99 * 1e3, kClients, std::thread::hardware_concurrency(), sequential_p99 * 1e3)};
}

// ---------------------------------------------------------------------------

int run_cli(const std::string& args, std::string* out = nullptr) {
    const std::string cmd = std::string(ECVL_CLI) + " " + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return -1;
    std::array<char, 4096> buf;
    std::string text;
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) text.append(buf.data(), n);
    const int status = pclose(p);
    if (out) *out = text;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Runs the whole pipeline in `dir`; returns the failing step or "".
std::string pipeline(const std::string& dir) {
    const std::string data = " --in " + dir + "/records.jsonl --edge edge-small --cloud cloud-large";
    const std::string emb = " --text-emb " + dir + "/text.emb --image-emb " + dir + "/image.emb";
    const std::string all = data + " --labels " + dir + "/labels.jsonl --split " + dir + "/split.jsonl" + emb;
    const std::vector<std::pair<std::string, std::string>> steps{
        {"synth", "synth --spec n=600,seed=21 --out-dir " + dir},
        {"label", "label" + data + " --strategy proposed:mes=6 --out " + dir + "/labels.jsonl"},
        {"split", "split" + data + " --labels " + dir + "/labels.jsonl --seed 21 --out " + dir + "/split.jsonl"},
        {"train", "train" + all + " --seed 21 --out " + dir + "/model.bin"},
        {"calibrate", "calibrate" + data + " --split " + dir + "/split.jsonl" + emb + " --model " + dir +
                          "/model.bin --scenario rcs2"},
        {"evaluate", "evaluate" + all + " --model " + dir +
                         "/model.bin --policy router --policy all-large --policy all-small --policy random:p=0.5 "
                         "--format json --out " +
                         dir + "/report.json"},
        {"report", "report --in " + dir + "/report.json --format csv --out " + dir + "/report.csv"},
    };
    for (const auto& [name, args] : steps) {
        std::string out;
        if (run_cli(args, &out) != 0) return name + ": " + out;
    }
    return "";
}

Outcome e2e_determinism() {
    TempDir a, b;
    for (const auto* d : {&a, &b})
        if (const auto err = pipeline(d->path.string()); !err.empty()) return {false, "pipeline failed at " + err};
    bool same = true;
    std::string detail;
    for (const char* f : {"labels.jsonl", "split.jsonl", "model.bin", "report.json", "report.csv"}) {
        const bool eq = slurp(a / f) == slurp(b / f);
        same = same && eq;
        detail += fmt("%s%s %s", detail.empty() ? "" : ", ", f, eq ? "identical" : "DIFFERS");
    }
    if (slurp(a / "report.json").empty()) return {false, "empty report"};
    return {same, detail};
}

struct Criterion {
    const char* name;
    std::function<Outcome()> run;
};

const Criterion kCriteria[] = {
    {"rcs_identity", rcs_identity},       {"labeling_oracle", labeling_oracle},
    {"calibration_oracle", calibration_oracle}, {"monotonicity", monotonicity},
    {"learning_check", learning_check},   {"mes_sweep_shape", mes_sweep_shape},
    {"gateway", gateway},                 {"e2e_determinism", e2e_determinism},
};

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> wanted(argv + 1, argv + argc);
    bool all_pass = true;
    for (const auto& w : wanted)
        if (std::none_of(std::begin(kCriteria), std::end(kCriteria), [&](const Criterion& c) { return w == c.name; })) {
            std::fprintf(stderr, "unknown criterion: %s\n", w.c_str());
            return 1;
        }
    for (const auto& c : kCriteria) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.name) == wanted.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %s (%.1fs): %s\n", o.pass ? "PASS" : "FAIL", c.name, secs, o.detail.c_str());
        std::fflush(stdout);
        all_pass = all_pass && o.pass;
    }
    return all_pass ? 0 : 1;
}
