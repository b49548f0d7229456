#include "ecvl/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include <json.hpp>

#include "ecvl/error.hpp"

namespace ecvl {

RoutingPolicy parse_baseline_policy(std::string_view text, uint64_t seed) {
    if (text == "all-large") return AllLargePolicy{};
    if (text == "all-small") return AllSmallPolicy{};
    if (text == "random") return RandomPolicy{0.5, seed};
    if (text.starts_with("random:p=")) {
        const std::string num(text.substr(9));
        std::size_t used = 0;
        double p = -1.0;
        try {
            p = std::stod(num, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != num.size() || !(p >= 0.0 && p <= 1.0)) throw RangeError("random policy needs p in [0,1]");
        return RandomPolicy{p, seed};
    }
    throw RangeError("unknown policy '" + std::string(text) + "' (expected router|all-large|all-small|random:p=X)");
}

std::string policy_name(const RoutingPolicy& policy) {
    return std::visit(
        [](const auto& p) -> std::string {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, RouterPolicy>) {
                return "router[" + std::string(variant_name(p.state->model.arch().variant)) + "," + p.state->mask.str() +
                       "]";
            } else if constexpr (std::is_same_v<P, AllLargePolicy>) {
                return "all-large";
            } else if constexpr (std::is_same_v<P, AllSmallPolicy>) {
                return "all-small";
            } else {
                char buf[48];
                std::snprintf(buf, sizeof buf, "random:p=%g", p.p_edge);
                return buf;
            }
        },
        policy);
}

std::vector<Decision> route_dataset(const RoutingPolicy& policy, std::span<const PairRecord> pairs,
                                    std::span<const FeatureBundle> bundles) {
    std::vector<Decision> out;
    out.reserve(pairs.size());
    if (const auto* router = std::get_if<RouterPolicy>(&policy)) {
        std::map<std::string_view, const FeatureBundle*> by_id;
        for (const auto& b : bundles) by_id.emplace(b.query_id, &b);
        std::vector<FeatureBundle> ordered;
        ordered.reserve(pairs.size());
        std::string missing;
        std::size_t n_missing = 0;
        for (const auto& p : pairs) {
            auto it = by_id.find(p.query_id());
            if (it == by_id.end()) {
                if (n_missing++ < 10) missing += (missing.empty() ? "" : ", ") + p.query_id();
                continue;
            }
            ordered.push_back(*it->second);
        }
        if (n_missing > 0)
            throw DataError("missing feature bundles for " + std::to_string(n_missing) + " queries: " + missing +
                            (n_missing > 10 ? ", ..." : ""));
        const auto p = router->state->model.predict(ordered, router->threads);
        return route_by_threshold(p, pairs, router->state->tau);
    }
    if (std::holds_alternative<AllLargePolicy>(policy)) {
        for (const auto& p : pairs) out.push_back(realize(p, Route::Cloud));
    } else if (std::holds_alternative<AllSmallPolicy>(policy)) {
        for (const auto& p : pairs) out.push_back(realize(p, Route::Edge));
    } else {
        const auto& r = std::get<RandomPolicy>(policy);
        if (!(r.p_edge >= 0.0 && r.p_edge <= 1.0)) throw RangeError("random policy needs p in [0,1]");
        Rng rng(r.seed);
        for (const auto& p : pairs) out.push_back(realize(p, rng.uniform() < r.p_edge ? Route::Edge : Route::Cloud));
    }
    return out;
}

std::vector<FeatureBundle> build_bundles(std::span<const PairRecord> pairs, const EmbeddingTables& tables,
                                         const Normalizer& normalizer, ModalityMask mask, AssemblyCounters* counters) {
    std::vector<FeatureBundle> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(assemble(*p.record, tables, normalizer, mask, counters));
    return out;
}

MetricsReport evaluate_policy(const RoutingPolicy& policy, std::span<const PairRecord> pairs,
                              std::span<const FeatureBundle> bundles, std::span<const RoutingLabel> labels, double mes) {
    const auto decisions = route_dataset(policy, pairs, bundles);
    const auto presets = scenario_presets(mes);
    MetricsReport r = compute_metrics(decisions, labels, mes, presets);
    attach_pair_metrics(r, decisions, pairs);
    r.policy = policy_name(policy);
    return r;
}

double failure_rate(std::span<const PairRecord> pairs, double mes) {
    if (pairs.empty()) throw DataError("failure rate of an empty set");
    std::size_t failed = 0;
    for (const auto& p : pairs) failed += std::max(p.edge.score, p.cloud.score) < mes ? 1 : 0;
    return static_cast<double>(failed) / static_cast<double>(pairs.size());
}

std::vector<SweepRow> mes_sweep(std::span<const PairRecord> pairs,
                                const std::function<LabelStrategy(double)>& strategy_family,
                                std::span<const double> mes_values, const ScenarioConfig& base_scenario,
                                const PolicyBuilder& build_policy) {
    std::vector<SweepRow> rows;
    for (double mes : mes_values) {
        if (!(mes >= 1.0 && mes <= 10.0)) throw RangeError("mes values must lie in [1,10]");
        ScenarioConfig scenario = base_scenario;
        scenario.mes = mes;
        const auto labeled = label_dataset(pairs, strategy_family(mes));
        std::vector<uint8_t> bits;
        bits.reserve(labeled.labels.size());
        for (const auto& l : labeled.labels) bits.push_back(l.label);
        const PolicyOutcome outcome = build_policy(bits, scenario);
        const ScenarioConfig only[1] = {scenario};
        const MetricsReport m = compute_metrics(outcome.decisions, {}, mes, only);
        rows.push_back({mes, failure_rate(pairs, mes), m.ca, m.apsp, outcome.tau_star, outcome.rcs_star});
    }
    return rows;
}

namespace {

std::string fixed4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v == 0.0 ? 0.0 : v);  // no "-0.0000"
    if (std::string_view(buf) == "-0.0000") return "0.0000";
    return buf;
}

std::string opt4(const std::optional<double>& v) { return v ? fixed4(*v) : std::string(); }

std::string count(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.0f", v);
    return buf;
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

nlohmann::json json_number(const std::string& formatted) {
    if (formatted.empty()) return nullptr;
    return std::stod(formatted);
}

}  // namespace

std::string format_sweep_csv(std::span<const SweepRow> rows) {
    std::string out = "mes,failure_rate,ca,apsp,tau_star,rcs_star\n";
    for (const auto& r : rows) {
        out += fixed4(r.mes) + "," + fixed4(r.failure_rate) + "," + fixed4(r.ca) + "," + fixed4(r.apsp) + "," +
               fixed4(r.tau_star) + "," + fixed4(r.rcs_star) + "\n";
    }
    return out;
}

std::vector<MetricsReport> ablation_run(const ExperimentData& data, std::span<const ModalityMask> masks,
                                        const Architecture& arch, const TrainConfig& config,
                                        const ScenarioConfig& scenario) {
    if (masks.empty()) throw RangeError("ablation needs at least one mask");
    std::vector<MetricsReport> rows;
    for (const ModalityMask& mask : masks) {
        LabeledSet train_set{build_bundles(data.train, data.tables, data.normalizer, mask), data.train_labels};
        ValidationSet valid_set{build_bundles(data.valid, data.tables, data.normalizer, mask), data.valid};
        auto state = std::make_shared<RouterState>(train(arch, train_set, valid_set, config, scenario));
        state->normalizer = data.normalizer;
        state->mask = mask;
        const auto test_bundles = build_bundles(data.test, data.tables, data.normalizer, mask);
        MetricsReport r = evaluate_policy(RouterPolicy{state, config.threads}, data.test, test_bundles,
                                          data.test_labels, scenario.mes);
        r.policy = "router[" + mask.str() + "]";
        rows.push_back(std::move(r));
    }
    for (const RoutingPolicy& baseline :
         {RoutingPolicy{RandomPolicy{0.5, config.seed}}, RoutingPolicy{AllLargePolicy{}}, RoutingPolicy{AllSmallPolicy{}}})
        rows.push_back(evaluate_policy(baseline, data.test, {}, data.test_labels, scenario.mes));
    return rows;
}

ReportFormat parse_report_format(std::string_view text) {
    if (text == "csv") return ReportFormat::Csv;
    if (text == "json") return ReportFormat::Json;
    throw RangeError("report format must be csv or json");
}

std::string format_report(std::span<const MetricsReport> reports, ReportFormat format) {
    if (reports.empty()) throw DataError("cannot emit an empty report list");
    struct Row {
        std::string policy, apsp, ca, ail, rcs1, rcs2, rcs3, acc, pgr, tokens, time, n;
    };
    std::vector<Row> rows;
    for (const auto& r : reports) {
        rows.push_back({r.policy, fixed4(r.apsp), fixed4(r.ca), fixed4(r.ail), opt4(r.rcs_for("rcs1")),
                        opt4(r.rcs_for("rcs2")), opt4(r.rcs_for("rcs3")), opt4(r.acc), opt4(r.pgr),
                        r.token_saving ? count(*r.token_saving) : std::string(), opt4(r.time_saving),
                        std::to_string(r.n)});
    }
    if (format == ReportFormat::Csv) {
        std::string out = "policy,apsp,ca,ail_s,rcs1,rcs2,rcs3,acc,pgr,token_saving,time_saving,n\n";
        for (const auto& r : rows)
            out += csv_escape(r.policy) + "," + r.apsp + "," + r.ca + "," + r.ail + "," + r.rcs1 + "," + r.rcs2 + "," +
                   r.rcs3 + "," + r.acc + "," + r.pgr + "," + r.tokens + "," + r.time + "," + r.n + "\n";
        return out;
    }
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json o;
        o["policy"] = r.policy;
        o["apsp"] = json_number(r.apsp);
        o["ca"] = json_number(r.ca);
        o["ail_s"] = json_number(r.ail);
        o["rcs1"] = json_number(r.rcs1);
        o["rcs2"] = json_number(r.rcs2);
        o["rcs3"] = json_number(r.rcs3);
        o["acc"] = json_number(r.acc);
        o["pgr"] = json_number(r.pgr);
        o["token_saving"] = json_number(r.tokens);
        o["time_saving"] = json_number(r.time);
        o["n"] = std::stoull(r.n);
        arr.push_back(std::move(o));
    }
    return arr.dump(2) + "\n";
}

void emit_report(std::span<const MetricsReport> reports, const std::string& path, ReportFormat format) {
    write_file_atomic(path, format_report(reports, format));
}

std::vector<MetricsReport> load_report(const std::string& path) {
    std::vector<MetricsReport> out;
    try {
        const auto arr = nlohmann::json::parse(read_file(path));
        if (!arr.is_array()) throw DataError("report must be a JSON array");
        for (const auto& o : arr) {
            MetricsReport r;
            r.policy = o.at("policy").get<std::string>();
            r.apsp = o.at("apsp").get<double>();
            r.ca = o.at("ca").get<double>();
            r.ail = o.at("ail_s").get<double>();
            for (const char* key : {"rcs1", "rcs2", "rcs3"})
                if (!o.at(key).is_null()) r.rcs.push_back({key, o.at(key).get<double>()});
            auto opt = [&](const char* key) -> std::optional<double> {
                if (!o.contains(key) || o.at(key).is_null()) return std::nullopt;
                return o.at(key).get<double>();
            };
            r.acc = opt("acc");
            r.pgr = opt("pgr");
            r.token_saving = opt("token_saving");
            r.time_saving = opt("time_saving");
            r.n = o.at("n").get<std::size_t>();
            out.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
    return out;
}

}  // namespace ecvl
