#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "ecvl/error.hpp"
#include "ecvl/evaluation.hpp"
#include "ecvl/gateway.hpp"
#include "ecvl/kernels.hpp"
#include "ecvl/synthgen.hpp"

using namespace ecvl;

namespace {

void warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

struct DataOpts {
    std::string in;
    std::string labels;
    std::string split;
    std::string edge;
    std::string cloud;
    std::string text_emb;
    std::string image_emb;
};

void add_data_opts(CLI::App* cmd, DataOpts& o, bool labels, bool split, bool embeddings, bool from_model = false) {
    cmd->add_option("--in", o.in, "response-score records (JSONL)")->required();
    const std::string fallback = from_model ? " (defaults to the one stored in --model)" : "";
    cmd->add_option("--edge", o.edge, "edge model name" + fallback);
    cmd->add_option("--cloud", o.cloud, "cloud model name" + fallback);
    if (labels) cmd->add_option("--labels", o.labels, "label file from `label`");
    if (split) cmd->add_option("--split", o.split, "split file from `split`");
    if (embeddings) {
        cmd->add_option("--text-emb", o.text_emb, "text embedding file");
        cmd->add_option("--image-emb", o.image_emb, "image embedding file");
    }
}

struct Loaded {
    Dataset dataset;
    PairView view;
    std::vector<RoutingLabel> labels;
    std::optional<SplitAssignment> split;
    std::optional<EmbeddingTable> text, image;

    EmbeddingTables tables() const { return {text ? &*text : nullptr, image ? &*image : nullptr}; }

    /// All pairs when no split file was given.
    std::vector<PairRecord> partition(Split s) const {
        if (!split) return view.pairs;
        std::vector<PairRecord> out;
        for (const auto& p : view.pairs) {
            const auto it = split->by_query.find(p.query_id());
            if (it == split->by_query.end()) throw DataError("query " + p.query_id() + " has no split assignment");
            if (it->second == s) out.push_back(p);
        }
        return out;
    }
};

EmbeddingTable load_table(const std::string& path, Modality m) {
    EmbeddingTable t = load_embeddings(path, m);
    if (t.modality != m)
        throw DataError(path + ": expected a " + std::string(m == Modality::Text ? "text" : "image") + " embedding file");
    return t;
}

Loaded load(const DataOpts& o, bool need_labels, bool need_split) {
    if (o.edge.empty() || o.cloud.empty()) throw RangeError("--edge and --cloud are required");
    Loaded L;
    L.dataset = load_dataset(o.in);
    L.view = pair_view(L.dataset.records, o.edge, o.cloud);
    if (L.view.skipped > 0) warn(std::to_string(L.view.skipped) + " records lack one of the two models and are skipped");
    if (!o.labels.empty()) L.labels = load_labels(o.labels);
    else if (need_labels) throw RangeError("--labels is required");
    if (!o.split.empty()) L.split = load_split(o.split);
    else if (need_split) throw RangeError("--split is required");
    if (!o.text_emb.empty()) L.text = load_table(o.text_emb, Modality::Text);
    if (!o.image_emb.empty()) L.image = load_table(o.image_emb, Modality::Image);
    return L;
}

Normalizer fit_on(std::span<const PairRecord> pairs) {
    std::vector<StatsVector> rows;
    for (const auto& p : pairs) rows.push_back(raw_stats(*p.record));
    return fit_normalizer(rows);
}

struct ScenarioOpts {
    std::string preset = "rcs1";
    std::string weights;  // "alpha,beta,gamma"
    double mes = 6.0;
};

void add_scenario_opts(CLI::App* cmd, ScenarioOpts& o) {
    cmd->add_option("--scenario", o.preset, "rcs1 | rcs2 | rcs3");
    cmd->add_option("--weights", o.weights, "custom alpha,beta,gamma (overrides --scenario)");
    cmd->add_option("--mes", o.mes, "minimal expectation score");
}

ScenarioConfig resolve_scenario(const ScenarioOpts& o) {
    if (o.weights.empty()) return scenario_preset(o.preset, o.mes);
    std::string w = o.weights;
    std::replace(w.begin(), w.end(), ',', ' ');
    std::istringstream in(w);
    ScenarioConfig s{"custom", o.mes, 0, 0, 0};
    std::string rest;
    if (!(in >> s.alpha >> s.beta >> s.gamma) || (in >> rest)) throw RangeError("--weights must be alpha,beta,gamma");
    s.validate();
    return s;
}

struct ModelOpts {
    std::string variant = "transformer";
    std::string mask = "111";
    uint32_t epochs = 50;
    uint32_t batch_size = 64;
    double lr = 1e-3;
    uint64_t seed = 0;
    uint32_t model_dim = 256;
    uint32_t layers = 2;
    uint32_t heads = 4;
    uint32_t ffn_dim = 512;
    double dropout = 0.3;
    uint32_t mf_rank = 16;
};

void add_model_opts(CLI::App* cmd, ModelOpts& o) {
    cmd->add_option("--variant", o.variant, "transformer | mlp | mf");
    cmd->add_option("--mask", o.mask, "modality mask bits (text,image,stats)");
    cmd->add_option("--epochs", o.epochs, "training epochs");
    cmd->add_option("--batch-size", o.batch_size, "mini-batch size");
    cmd->add_option("--lr", o.lr, "peak learning rate");
    cmd->add_option("--seed", o.seed, "training seed");
    cmd->add_option("--model-dim", o.model_dim, "shared projection width");
    cmd->add_option("--layers", o.layers, "transformer encoder layers");
    cmd->add_option("--heads", o.heads, "attention heads");
    cmd->add_option("--ffn-dim", o.ffn_dim, "feed-forward width");
    cmd->add_option("--dropout", o.dropout, "dropout rate");
    cmd->add_option("--mf-rank", o.mf_rank, "bilinear rank for the mf variant");
}

Architecture make_arch(const ModelOpts& o, const Loaded& L) {
    Architecture a;
    a.variant = parse_variant(o.variant);
    a.text_dim = L.text ? L.text->dim : 0;
    a.image_dim = L.image ? L.image->dim : 0;
    a.model_dim = o.model_dim;
    a.layers = o.layers;
    a.heads = o.heads;
    a.ffn_dim = o.ffn_dim;
    a.dropout = o.dropout;
    a.mf_rank = o.mf_rank;
    a.validate();
    return a;
}

TrainConfig make_train_config(const ModelOpts& o, unsigned threads) {
    TrainConfig c;
    c.epochs = o.epochs;
    c.batch_size = o.batch_size;
    c.peak_learning_rate = o.lr;
    c.seed = o.seed;
    c.threads = threads;
    c.validate();
    return c;
}

std::vector<uint8_t> bits_for(std::span<const PairRecord> pairs, std::span<const RoutingLabel> labels) {
    return align_labels(pairs, labels);
}

void write_output(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-") std::cout << content;
    else write_file_atomic(path, content);
}

// ---------------------------------------------------------------------------

int cmd_ingest(const DataOpts& o) {
    const Dataset ds = load_dataset(o.in);
    std::map<std::string, std::size_t> sources, models;
    std::size_t with_image = 0;
    for (const auto& r : ds.records) {
        ++sources[r->source_dataset];
        for (const auto& [name, _] : r->outcomes) ++models[name];
        if (r->image) ++with_image;
    }
    std::printf("records=%zu\nwith_image=%zu\n", ds.records.size(), with_image);
    for (const auto& [s, n] : sources) std::printf("source[%s]=%zu\n", s.c_str(), n);
    for (const auto& [m, n] : models) std::printf("model[%s]=%zu\n", m.c_str(), n);
    if (!o.edge.empty() && !o.cloud.empty()) {
        const PairView v = pair_view(ds.records, o.edge, o.cloud);
        std::printf("pairs=%zu\nskipped=%zu\n", v.pairs.size(), v.skipped);
    }
    return 0;
}

int cmd_label(const DataOpts& o, const std::string& strategy_text, const std::string& out) {
    const LabelStrategy strategy = parse_strategy(strategy_text);
    const Loaded L = load(o, false, false);
    const LabelingResult r = label_dataset(L.view.pairs, strategy);
    if (r.degenerate) warn("all labels are equal; a classifier trained on them is degenerate");
    save_labels(r.labels, out);
    std::printf("labels=%zu\npositive_rate=%.4f\nstrategy=%s\n", r.labels.size(), r.positive_rate,
                describe(strategy).c_str());
    return 0;
}

int cmd_split(const DataOpts& o, const std::string& ratios_text, uint64_t seed, const std::string& out) {
    const SplitRatios ratios = parse_ratios(ratios_text);
    const Loaded L = load(o, true, false);
    const auto bits = bits_for(L.view.pairs, L.labels);
    const SplitAssignment s = stratified_split(L.view.pairs, bits, ratios, seed);
    for (Split p : {Split::Train, Split::Valid, Split::Test})
        if (s.count(p) == 0) warn(std::string(split_name(p)) + " split is empty");
    save_split(s, out);
    std::printf("train=%zu\nvalid=%zu\ntest=%zu\n", s.count(Split::Train), s.count(Split::Valid), s.count(Split::Test));
    return 0;
}

int cmd_train(const DataOpts& o, const ModelOpts& m, const ScenarioOpts& so, unsigned threads, const std::string& out) {
    const Loaded L = load(o, true, true);
    const ScenarioConfig scenario = resolve_scenario(so);
    const ModalityMask mask = ModalityMask::parse(m.mask);
    const Architecture arch = make_arch(m, L);
    const TrainConfig cfg = make_train_config(m, threads);

    const auto train_pairs = L.partition(Split::Train);
    const auto valid_pairs = L.partition(Split::Valid);
    if (train_pairs.empty() || valid_pairs.empty()) throw DataError("train and valid splits must be non-empty");
    const Normalizer norm = fit_on(train_pairs);
    AssemblyCounters counters;
    LabeledSet train_set{build_bundles(train_pairs, L.tables(), norm, mask, &counters), bits_for(train_pairs, L.labels)};
    ValidationSet valid_set{build_bundles(valid_pairs, L.tables(), norm, mask, &counters), valid_pairs};
    if (counters.missing_text + counters.missing_image > 0)
        warn("missing embeddings: text=" + std::to_string(counters.missing_text) +
             " image=" + std::to_string(counters.missing_image));

    std::vector<std::string> warnings;
    RouterState state = train(arch, train_set, valid_set, cfg, scenario, &warnings);
    for (const auto& w : warnings) warn(w);
    state.normalizer = norm;
    state.mask = mask;
    state.edge_model = o.edge;
    state.cloud_model = o.cloud;
    state.strategy = L.labels.empty() ? std::string() : describe(L.labels.front().strategy);
    save_state(state, out);

    double best = state.history.empty() ? 0.0 : state.history.front().rcs;
    for (const auto& e : state.history) best = std::max(best, e.rcs);
    std::printf("variant=%s\nparameters=%zu\ntau=%.2f\nvalid_rcs=%.4f\nscenario=%s\n", variant_name(arch.variant).data(),
                state.model.parameter_count(), state.tau, best, scenario.name.c_str());
    return 0;
}

void fill_pair_names(DataOpts& o, const RouterState& st) {
    if (o.edge.empty()) o.edge = st.edge_model;
    if (o.cloud.empty()) o.cloud = st.cloud_model;
}

int cmd_calibrate(DataOpts o, const std::string& model, const ScenarioOpts& so, bool scenario_given, unsigned threads,
                  std::string out) {
    RouterState state = load_state(model);
    fill_pair_names(o, state);
    const Loaded L = load(o, false, true);
    if (scenario_given) state.scenario = resolve_scenario(so);
    const auto valid_pairs = L.partition(Split::Valid);
    if (valid_pairs.empty()) throw DataError("valid split is empty");
    ValidationSet valid{build_bundles(valid_pairs, L.tables(), state.normalizer, state.mask), valid_pairs};
    const TauChoice c = calibrate(state, valid, threads);
    if (out.empty()) out = model;
    save_state(state, out);
    std::printf("tau=%.2f\nrcs=%.4f\nscenario=%s\n", c.tau, c.rcs, state.scenario.name.c_str());
    return 0;
}

int cmd_evaluate(DataOpts o, std::vector<std::string> policies, const std::string& model, const std::string& partition,
                 double mes, uint64_t seed, unsigned threads, const std::string& format, const std::string& out) {
    const ReportFormat fmt = parse_report_format(format);
    std::shared_ptr<RouterState> state;
    if (!model.empty()) {
        state = std::make_shared<RouterState>(load_state(model));
        fill_pair_names(o, *state);
    }
    if (policies.empty()) policies.push_back(state ? "router" : "all-large");
    const Loaded L = load(o, false, false);
    const auto pairs = L.partition(parse_split(partition));
    if (pairs.empty()) throw DataError(partition + " split is empty");
    std::vector<RoutingLabel> labels;
    if (!L.labels.empty()) {
        std::set<std::string> ids;
        for (const auto& p : pairs) ids.insert(p.query_id());
        for (const auto& l : L.labels)
            if (ids.count(l.query_id)) labels.push_back(l);
    }
    std::vector<MetricsReport> reports;
    for (const auto& name : policies) {
        if (name == "router") {
            if (!state) throw RangeError("--policy router needs --model");
            const auto bundles = build_bundles(pairs, L.tables(), state->normalizer, state->mask);
            reports.push_back(evaluate_policy(RouterPolicy{state, threads}, pairs, bundles, labels, mes));
        } else {
            reports.push_back(evaluate_policy(parse_baseline_policy(name, seed), pairs, {}, labels, mes));
        }
    }
    write_output(out, format_report(reports, fmt));
    return 0;
}

int cmd_sweep(DataOpts o, double from, double to, double step, const std::string& policy, const ModelOpts& m,
              const ScenarioOpts& so, unsigned threads, const std::string& out) {
    if (!(step > 0.0) || from > to) throw RangeError("sweep needs from <= to and step > 0");
    const Loaded L = load(o, false, policy == "router");
    const auto pairs = L.partition(Split::Test);
    if (pairs.empty()) throw DataError("no pairs to sweep");
    std::vector<double> mes_values;
    for (int i = 0;; ++i) {
        const double v = from + step * i;
        if (v > to + 1e-9) break;
        mes_values.push_back(v);
    }
    ScenarioConfig base = resolve_scenario(so);
    auto family = [](double mes) -> LabelStrategy { return ProposedRule{mes}; };

    auto finish = [&](std::vector<Decision> decisions, const ScenarioConfig& s) {
        const ScenarioConfig only[1] = {s};
        const MetricsReport r = compute_metrics(decisions, {}, s.mes, only);
        return PolicyOutcome{std::move(decisions), 0.0, r.rcs.front().value};
    };

    PolicyBuilder builder;
    if (policy == "oracle") {
        builder = [&](std::span<const uint8_t> labels, const ScenarioConfig& s) {
            std::vector<Decision> d;
            for (std::size_t i = 0; i < pairs.size(); ++i)
                d.push_back(realize(pairs[i], labels[i] ? Route::Edge : Route::Cloud));
            return finish(std::move(d), s);
        };
    } else if (policy == "router") {
        builder = [&](std::span<const uint8_t>, const ScenarioConfig& s) {
            const auto train_pairs = L.partition(Split::Train);
            const auto valid_pairs = L.partition(Split::Valid);
            const Normalizer norm = fit_on(train_pairs);
            const ModalityMask mask = ModalityMask::parse(m.mask);
            const auto relabeled = label_dataset(train_pairs, ProposedRule{s.mes});
            std::vector<uint8_t> bits;
            for (const auto& l : relabeled.labels) bits.push_back(l.label);
            LabeledSet train_set{build_bundles(train_pairs, L.tables(), norm, mask), bits};
            ValidationSet valid_set{build_bundles(valid_pairs, L.tables(), norm, mask), valid_pairs};
            auto state = std::make_shared<RouterState>(
                train(make_arch(m, L), train_set, valid_set, make_train_config(m, threads), s));
            state->normalizer = norm;
            state->mask = mask;
            const auto bundles = build_bundles(pairs, L.tables(), norm, mask);
            PolicyOutcome r = finish(route_dataset(RouterPolicy{state, threads}, pairs, bundles), s);
            r.tau_star = state->tau;
            return r;
        };
    } else {
        const RoutingPolicy p = parse_baseline_policy(policy, m.seed);
        builder = [&, p](std::span<const uint8_t>, const ScenarioConfig& s) { return finish(route_dataset(p, pairs), s); };
    }
    const auto rows = mes_sweep(pairs, family, mes_values, base, builder);
    write_output(out, format_sweep_csv(rows));
    return 0;
}

int cmd_ablate(const DataOpts& o, const ModelOpts& m, const ScenarioOpts& so, const std::string& masks_text,
               unsigned threads, const std::string& format, const std::string& out) {
    const ReportFormat fmt = parse_report_format(format);
    const Loaded L = load(o, true, true);
    std::vector<ModalityMask> masks;
    std::string list = masks_text;
    std::replace(list.begin(), list.end(), ',', ' ');
    std::istringstream in(list);
    for (std::string bits; in >> bits;) masks.push_back(ModalityMask::parse(bits));

    ExperimentData data;
    data.train = L.partition(Split::Train);
    data.valid = L.partition(Split::Valid);
    data.test = L.partition(Split::Test);
    if (data.train.empty() || data.valid.empty() || data.test.empty()) throw DataError("all three splits must be non-empty");
    data.train_labels = bits_for(data.train, L.labels);
    std::set<std::string> test_ids;
    for (const auto& p : data.test) test_ids.insert(p.query_id());
    for (const auto& l : L.labels)
        if (test_ids.count(l.query_id)) data.test_labels.push_back(l);
    data.tables = L.tables();
    data.normalizer = fit_on(data.train);
    const auto reports = ablation_run(data, masks, make_arch(m, L), make_train_config(m, threads), resolve_scenario(so));
    write_output(out, format_report(reports, fmt));
    return 0;
}

int cmd_synth(const std::string& spec_text, const std::string& out_dir) {
    const SynthSpec spec = SynthSpec::parse(spec_text);
    const SynthData d = generate(spec);
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    save_dataset(d.dataset, (dir / "records.jsonl").string());
    save_embeddings(d.text, (dir / "text.emb").string());
    save_embeddings(d.image, (dir / "image.emb").string());
    std::size_t pos = 0;
    for (auto l : d.planted_labels) pos += l;
    std::printf("records=%zu\nedge=%s\ncloud=%s\nplanted_positive_rate=%.4f\ndir=%s\n", d.dataset.records.size(),
                spec.edge_name.c_str(), spec.cloud_name.c_str(),
                static_cast<double>(pos) / static_cast<double>(d.planted_labels.size()), out_dir.c_str());
    return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& format, const std::string& out) {
    const ReportFormat fmt = parse_report_format(format);
    std::vector<MetricsReport> all;
    for (const auto& path : inputs) {
        auto r = load_report(path);
        all.insert(all.end(), r.begin(), r.end());
    }
    write_output(out, format_report(all, fmt));
    return 0;
}

int cmd_replay(const std::string& path) {
    std::vector<std::string> warnings;
    const auto entries = replay_decision_log(path, &warnings);
    for (const auto& w : warnings) warn(w);
    std::size_t edge = 0, fallbacks = 0, degraded = 0;
    for (const auto& e : entries) {
        edge += e.decision == Route::Edge;
        fallbacks += e.fallback.has_value();
        degraded += e.degraded;
    }
    std::printf("requests=%zu\nedge_routed=%zu\ncloud_routed=%zu\nfallbacks=%zu\ndegraded=%zu\n", entries.size(), edge,
                entries.size() - edge, fallbacks, degraded);
    if (!entries.empty()) {
        const auto decisions = log_decisions(entries);
        const MetricsReport r = compute_metrics(decisions, {}, 6.0, {});
        std::printf("ca=%.4f\n", r.ca);
    }
    return 0;
}

int cmd_serve(const std::string& config_path, const std::string& model, const std::string& listen,
              const std::string& mode, const std::string& log_path) {
    GatewayConfig cfg = load_gateway_config(config_path);
    if (!model.empty()) cfg.model_path = model;
    if (!listen.empty()) cfg.listen = listen;
    if (!log_path.empty()) cfg.log_path = log_path;
    if (mode == "proxy") cfg.mode = GatewayMode::Proxy;
    else if (mode == "dry_run" || mode == "dry-run") cfg.mode = GatewayMode::DryRun;
    else if (!mode.empty()) throw RangeError("--mode must be proxy|dry_run");
    cfg.validate();

    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    Gateway gw(cfg, make_http_upstreams(cfg));
    if (!gw.ready()) warn("model not loaded (" + gw.load_error() + "); /healthz reports not-ready");
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&set, &sig);
        gw.stop();
    });
    std::thread announce([&] {
        gw.wait_listening();
        std::fprintf(stderr, "listening on %s:%d (%s)\n", cfg.listen_host().c_str(), gw.bound_port(),
                     mode_name(cfg.mode).data());
    });
    try {
        gw.serve();
    } catch (...) {
        pthread_kill(waiter.native_handle(), SIGTERM);
        waiter.join();
        announce.detach();
        throw;
    }
    waiter.join();
    announce.join();
    gw.flush_log();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Edge/cloud VLM routing toolkit"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "help for every subcommand");

    unsigned threads = default_threads();
    app.add_option("--threads", threads, "worker threads (results do not depend on it)")
        ->envname("ECVL_THREADS")
        ->check(CLI::PositiveNumber);

    DataOpts data;
    ModelOpts model_opts;
    ScenarioOpts scenario;
    std::string out, strategy = "proposed:mes=6", ratios = "60:20:20", model, partition = "test", format = "csv";
    std::string spec, out_dir = "synth", masks = "111,011,101,110,001", policy_one = "oracle";
    std::string config, listen, mode, log_path, log_in;
    std::vector<std::string> policies, inputs;
    uint64_t seed = 0;
    double mes = 6.0, from = 1, to = 9, step = 1;

    auto* ingest = app.add_subcommand("ingest", "validate a record file and print statistics");
    ingest->add_option("--in", data.in, "response-score records (JSONL)")->required();
    ingest->add_option("--edge", data.edge, "edge model name");
    ingest->add_option("--cloud", data.cloud, "cloud model name");

    auto* label = app.add_subcommand("label", "derive routing labels");
    add_data_opts(label, data, false, false, false);
    label->add_option("--strategy", strategy, "proposed:mes=6 | win-hard | win-soft:k=1");
    label->add_option("--out", out, "label file")->required();

    auto* split = app.add_subcommand("split", "stratified train/valid/test split");
    add_data_opts(split, data, true, false, false);
    split->add_option("--ratios", ratios, "train:valid:test");
    split->add_option("--seed", seed, "shuffle seed");
    split->add_option("--out", out, "split file")->required();

    auto* train_cmd = app.add_subcommand("train", "train a router and pick tau on the valid split");
    add_data_opts(train_cmd, data, true, true, true);
    add_model_opts(train_cmd, model_opts);
    add_scenario_opts(train_cmd, scenario);
    train_cmd->add_option("--out", out, "model file")->required();

    auto* calibrate_cmd = app.add_subcommand("calibrate", "re-run the tau grid search for a saved model");
    add_data_opts(calibrate_cmd, data, false, true, true, true);
    calibrate_cmd->add_option("--model", model, "model file")->required();
    add_scenario_opts(calibrate_cmd, scenario);
    calibrate_cmd->add_option("--out", out, "output model file (default: overwrite --model)");

    auto* evaluate = app.add_subcommand("evaluate", "score routing policies on a split");
    add_data_opts(evaluate, data, true, true, true, true);
    evaluate->add_option("--policy", policies, "router | all-large | all-small | random:p=0.5 (repeatable)");
    evaluate->add_option("--model", model, "model file for the router policy");
    evaluate->add_option("--partition", partition, "train | valid | test");
    evaluate->add_option("--mes", mes, "minimal expectation score");
    evaluate->add_option("--seed", seed, "seed for the random policy");
    evaluate->add_option("--format", format, "csv | json");
    evaluate->add_option("--out", out, "report file (default: stdout)");

    auto* sweep = app.add_subcommand("sweep-mes", "failure rate and routing shape across MES values");
    add_data_opts(sweep, data, false, true, true);
    sweep->add_option("--from", from, "first MES");
    sweep->add_option("--to", to, "last MES");
    sweep->add_option("--step", step, "MES step");
    sweep->add_option("--policy", policy_one, "oracle | router | all-large | all-small | random:p=0.5");
    add_model_opts(sweep, model_opts);
    add_scenario_opts(sweep, scenario);
    sweep->add_option("--out", out, "CSV output (default: stdout)");

    auto* ablate = app.add_subcommand("ablate", "modality ablation");
    add_data_opts(ablate, data, true, true, true);
    add_model_opts(ablate, model_opts);
    add_scenario_opts(ablate, scenario);
    ablate->add_option("--masks", masks, "comma-separated modality masks");
    ablate->add_option("--format", format, "csv | json");
    ablate->add_option("--out", out, "report file (default: stdout)");

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset with embeddings");
    synth->add_option("--spec", spec, "overrides, e.g. n=2000,margin=1.0,signal=separable,seed=1");
    synth->add_option("--out-dir", out_dir, "output directory");

    auto* serve = app.add_subcommand("serve", "run the routing gateway");
    serve->add_option("--config", config, "gateway config file ($ECVL_CONFIG overrides)");
    serve->add_option("--model", model, "model file (overrides config; $ECVL_MODEL overrides both)");
    serve->add_option("--listen", listen, "host:port (overrides config)");
    serve->add_option("--mode", mode, "proxy | dry_run (overrides config)");
    serve->add_option("--log", log_path, "decision log path (overrides config)");

    auto* report = app.add_subcommand("report", "merge JSON reports and re-emit them");
    report->add_option("--in", inputs, "JSON report files")->required();
    report->add_option("--format", format, "csv | json");
    report->add_option("--out", out, "output file (default: stdout)");

    auto* replay = app.add_subcommand("replay-log", "summarize a gateway decision log");
    replay->add_option("--in", log_in, "decision log")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*ingest) return cmd_ingest(data);
        if (*label) return cmd_label(data, strategy, out);
        if (*split) return cmd_split(data, ratios, seed, out);
        if (*train_cmd) return cmd_train(data, model_opts, scenario, threads, out);
        if (*calibrate_cmd)
            return cmd_calibrate(data, model, scenario,
                                 calibrate_cmd->count("--scenario") + calibrate_cmd->count("--weights") +
                                         calibrate_cmd->count("--mes") > 0,
                                 threads, out);
        if (*evaluate) return cmd_evaluate(data, policies, model, partition, mes, seed, threads, format, out);
        if (*sweep) return cmd_sweep(data, from, to, step, policy_one, model_opts, scenario, threads, out);
        if (*ablate) return cmd_ablate(data, model_opts, scenario, masks, threads, format, out);
        if (*synth) return cmd_synth(spec, out_dir);
        if (*serve) return cmd_serve(config, model, listen, mode, log_path);
        if (*report) return cmd_report(inputs, format, out);
        if (*replay) return cmd_replay(log_in);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
