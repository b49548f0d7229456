#include "ecvl/synthgen.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "ecvl/error.hpp"
#include "ecvl/labeling.hpp"
#include "ecvl/rng.hpp"

namespace ecvl {

void SynthSpec::validate() const {
    if (n_records < 1) throw RangeError("synth: n_records must be >= 1");
    if (k_text < 1 || k_image < 1) throw RangeError("synth: embedding dims must be >= 1");
    if (!(p_flip >= 0.0 && p_flip <= 0.5)) throw RangeError("synth: p_flip must lie in [0, 0.5]");
    if (!(margin > 0.0)) throw RangeError("synth: margin must be > 0");
    if (!(mes >= 1.0 && mes <= 10.0)) throw RangeError("synth: mes must lie in [1,10]");
    if (!(case_b_fraction >= 0.0 && case_b_fraction <= 1.0)) throw RangeError("synth: case_b must lie in [0,1]");
    if (!(image_fraction >= 0.0 && image_fraction <= 1.0)) throw RangeError("synth: image_fraction must lie in [0,1]");
    if (sources.empty()) throw RangeError("synth: need at least one source");
    if (edge_name == cloud_name) throw RangeError("synth: model names must differ");
}

SynthSpec SynthSpec::parse(std::string_view overrides) {
    SynthSpec s;
    std::string text(overrides);
    for (char& c : text)
        if (c == ',' || c == ';') c = ' ';
    std::istringstream in(text);
    std::string kv;
    while (in >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw RangeError("synth spec entries must be key=value: " + kv);
        const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        auto num = [&] {
            std::size_t used = 0;
            double v = 0;
            try {
                v = std::stod(val, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != val.size()) throw RangeError("synth spec: bad number for " + key);
            return v;
        };
        if (key == "n") s.n_records = static_cast<std::size_t>(num());
        else if (key == "k_text") s.k_text = static_cast<uint32_t>(num());
        else if (key == "k_image") s.k_image = static_cast<uint32_t>(num());
        else if (key == "signal") {
            if (val == "separable") s.signal = SignalKind::Separable;
            else if (val == "noisy") s.signal = SignalKind::Noisy;
            else if (val == "adversarial") s.signal = SignalKind::Adversarial;
            else throw RangeError("synth spec: signal must be separable|noisy|adversarial");
        } else if (key == "margin") s.margin = num();
        else if (key == "p_flip") s.p_flip = num();
        else if (key == "noise") s.noise = num();
        else if (key == "mes") s.mes = num();
        else if (key == "case_b") s.case_b_fraction = num();
        else if (key == "image_fraction") s.image_fraction = num();
        else if (key == "cloud_gap") s.cloud_gap = num();
        else if (key == "edge_latency") s.edge_latency_mean = num();
        else if (key == "cloud_latency") s.cloud_latency_mean = num();
        else if (key == "cloud_slower") s.cloud_slower = num() != 0.0;
        else if (key == "tokens") s.tokens = num() != 0.0;
        else if (key == "seed") s.seed = static_cast<uint64_t>(num());
        else if (key == "edge") s.edge_name = val;
        else if (key == "cloud") s.cloud_name = val;
        else throw RangeError("synth spec: unknown key " + key);
    }
    s.validate();
    return s;
}

namespace {

std::vector<double> unit_direction(Rng& rng, uint32_t dim) {
    std::vector<double> u(dim);
    double norm = 0.0;
    while (norm < 1e-6) {
        norm = 0.0;
        for (auto& x : u) {
            x = rng.normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
    }
    for (auto& x : u) x /= norm;
    return u;
}

// sign * margin * u plus noise with its u-component removed, so the projection onto u is exactly sign * margin.
std::vector<float> planted_embedding(Rng& rng, const std::vector<double>& u, double sign, double margin, double noise) {
    std::vector<double> e(u.size());
    double along = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        e[i] = noise * rng.normal();
        along += e[i] * u[i];
    }
    std::vector<float> out(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) out[i] = static_cast<float>(e[i] - along * u[i] + sign * margin * u[i]);
    return out;
}

int clamp_score(long v) { return static_cast<int>(std::clamp(v, 1L, 10L)); }

const char* const kWords[] = {"what", "is", "shown", "in", "the", "image", "chart", "describe", "count", "objects",
                              "table", "value", "explain", "why", "diagram", "compare", "left", "right", "color",
                              "text", "read", "answer", "question", "total", "graph"};

std::string make_query(Rng& rng, std::size_t words, std::size_t numbers, std::size_t punct) {
    std::string q;
    for (std::size_t i = 0; i < words; ++i) {
        if (!q.empty()) q += ' ';
        q += kWords[rng.below(std::size(kWords))];
    }
    for (std::size_t i = 0; i < numbers; ++i) q += " " + std::to_string(rng.below(1000));
    for (std::size_t i = 0; i < punct; ++i) q += "?!,;:"[rng.below(5)];
    return q;
}

}  // namespace

SynthData generate(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Rng dir_rng(mix_seed(spec.seed, 0xD1));
    const auto u_text = unit_direction(dir_rng, spec.k_text);
    const auto u_image = unit_direction(dir_rng, spec.k_image);

    SynthData out;
    out.text = {Modality::Text, spec.k_text, {}};
    out.image = {Modality::Image, spec.k_image, {}};
    const int mes_ceil = static_cast<int>(std::ceil(spec.mes));
    // uniform with the requested standard deviation
    auto spread = [&](double mean, double sd) { return mean + sd * std::sqrt(3.0) * (2.0 * rng.uniform() - 1.0); };

    for (std::size_t i = 0; i < spec.n_records; ++i) {
        auto rec = std::make_shared<ResponseRecord>();
        char id[32];
        std::snprintf(id, sizeof id, "syn-%06zu", i);
        rec->query_id = id;
        rec->source_dataset = spec.sources[rng.below(spec.sources.size())];

        int edge = 0, cloud = 0;
        double difficulty = 0.0;
        if (mes_ceil > 1 && rng.bernoulli(spec.case_b_fraction)) {
            // both models miss the floor
            cloud = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(mes_ceil - 1)));
            edge = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(cloud)));
            difficulty = 1.0 - (cloud - 1) / 9.0 * 0.2;
        } else {
            difficulty = rng.uniform();
            edge = clamp_score(std::lround(10.0 - 9.0 * difficulty) + static_cast<long>(rng.below(3)) - 1);
            cloud = clamp_score(edge + static_cast<long>(rng.below(static_cast<uint64_t>(spec.cloud_gap) + 1)));
        }
        const uint8_t label = label_proposed(edge, cloud, spec.mes);

        double sign = label ? 1.0 : -1.0;
        if (spec.signal == SignalKind::Noisy && rng.bernoulli(spec.p_flip)) sign = -sign;
        if (spec.signal == SignalKind::Adversarial) sign = 0.0;

        const bool has_image = rng.bernoulli(spec.image_fraction);
        // statistics carry the same sign: short, plain, small-image queries are the edge-friendly ones
        const bool easy = sign > 0.0 || (sign == 0.0 && rng.bernoulli(0.5));
        const std::size_t words = easy ? 4 + rng.below(8) : 18 + rng.below(10);
        const std::size_t numbers = easy ? rng.below(2) : 2 + rng.below(3);
        rec->query_text = make_query(rng, words, numbers, easy ? 1 : 3);
        if (has_image) {
            const int w = easy ? 224 + static_cast<int>(rng.below(400)) : 900 + static_cast<int>(rng.below(700));
            const int h = easy ? 224 + static_cast<int>(rng.below(300)) : 700 + static_cast<int>(rng.below(500));
            rec->image = ImageMeta{w, h, rng.bernoulli(0.1) ? 1 : 3, std::nullopt};
        }

        ModelOutcome eo{spec.edge_name, static_cast<double>(edge),
                        std::max(0.05, spread(spec.edge_latency_mean, spec.edge_latency_std)), std::nullopt};
        ModelOutcome co{spec.cloud_name, static_cast<double>(cloud),
                        std::max(0.05, spread(spec.cloud_latency_mean, spec.cloud_latency_std)), std::nullopt};
        if (spec.cloud_slower && co.latency_s < eo.latency_s) co.latency_s = eo.latency_s + 0.01;
        if (spec.tokens) {
            eo.tokens_out = 20 + static_cast<int64_t>(rng.below(200));
            co.tokens_out = 40 + static_cast<int64_t>(rng.below(300));
        }
        // round-trip latencies through the JSON text precision we write
        rec->outcomes.emplace(eo.model_name, eo);
        rec->outcomes.emplace(co.model_name, co);

        out.text.rows.emplace(rec->query_id, planted_embedding(rng, u_text, sign, spec.margin, spec.noise));
        if (has_image)
            out.image.rows.emplace(rec->query_id, planted_embedding(rng, u_image, sign, spec.margin, spec.noise));

        out.difficulty.push_back(difficulty);
        out.planted_labels.push_back(label);
        out.dataset.records.push_back(std::move(rec));
    }
    return out;
}

TauChoice oracle_best_tau(std::span<const double> p, std::span<const PairRecord> pairs, const ScenarioConfig& scenario,
                          std::span<const double> grid) {
    if (grid.empty()) throw RangeError("oracle grid must be non-empty");
    if (pairs.empty() || p.size() != pairs.size()) throw RangeError("oracle needs aligned, non-empty inputs");
    const double n = static_cast<double>(pairs.size());
    TauChoice best{grid[0], -std::numeric_limits<double>::infinity()};
    bool first = true;
    for (double tau : grid) {
        std::size_t ok = 0, edge = 0;
        double latency = 0.0;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const bool to_edge = p[i] >= tau;
            const ModelOutcome& o = to_edge ? pairs[i].edge : pairs[i].cloud;
            if (o.score >= scenario.mes) ++ok;
            if (to_edge) ++edge;
            latency += o.latency_s;
        }
        const double rcs = scenario.alpha * (static_cast<double>(ok) / n) + scenario.beta * (static_cast<double>(edge) / n) -
                           scenario.gamma * (latency / n);
        if (first || rcs > best.rcs || (rcs == best.rcs && tau > best.tau)) {
            best = {tau, rcs};
            first = false;
        }
    }
    return best;
}

}  // namespace ecvl
