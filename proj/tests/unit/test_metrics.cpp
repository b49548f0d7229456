#include <doctest.h>

#include <cmath>

#include "ecvl/error.hpp"
#include "ecvl/metrics.hpp"
#include "ecvl/rng.hpp"
#include "helpers.hpp"

using namespace ecvl;

namespace {

Decision dec(const std::string& id, Route r, double score, double lat) {
    Decision d;
    d.query_id = id;
    d.chosen = r;
    d.realized_score = score;
    d.realized_latency = lat;
    return d;
}

RoutingLabel lab(const std::string& id, int bit) { return {id, static_cast<uint8_t>(bit), ProposedRule{6}}; }

// RCS of a threshold at tau, recomputed from first principles.
double rcs_at(const std::vector<double>& p, const std::vector<PairRecord>& pairs, double tau, const ScenarioConfig& s) {
    double ok = 0, edge = 0, lat = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const bool e = p[i] >= tau;
        const auto& o = e ? pairs[i].edge : pairs[i].cloud;
        ok += o.score >= s.mes;
        edge += e;
        lat += o.latency_s;
    }
    const double n = static_cast<double>(p.size());
    return s.alpha * ok / n + s.beta * edge / n - s.gamma * lat / n;
}

TauChoice enumerate(const std::vector<double>& p, const std::vector<PairRecord>& pairs, const ScenarioConfig& s) {
    TauChoice best{-1, -1e300};
    for (int i = 0; i <= 20; ++i) {
        const double tau = i / 20.0;
        const double v = rcs_at(p, pairs, tau, s);
        if (v >= best.rcs) best = {tau, v};
    }
    return best;
}

std::vector<PairRecord> random_pairs(Rng& rng, std::size_t n, bool cloud_slower = false) {
    std::vector<PairRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        const double el = rng.uniform(0.2, 3.0);
        const double cl = cloud_slower ? el + rng.uniform(0.0, 5.0) : rng.uniform(0.2, 8.0);
        out.push_back(testing::pair("r" + std::to_string(i), 1 + static_cast<double>(rng.below(10)),
                                    1 + static_cast<double>(rng.below(10)), el, cl));
    }
    return out;
}

}  // namespace

TEST_CASE("compute_metrics examples") {
    const ScenarioConfig presets[] = {scenario_preset("rcs1")};
    std::vector<Decision> d{dec("a", Route::Edge, 7, 1), dec("b", Route::Cloud, 5, 3), dec("c", Route::Edge, 6, 2)};
    const auto m = compute_metrics(d, {}, 6, presets);
    CHECK(m.apsp == doctest::Approx(2.0 / 3.0));
    CHECK(m.ca == doctest::Approx(2.0 / 3.0));
    CHECK(m.ail == doctest::Approx(2.0));
    CHECK(m.n == 3);
    CHECK(*m.rcs_for("rcs1") == doctest::Approx(1.2 * 2 / 3 + 0.1 * 2 / 3 - 0.001 * 2));
    CHECK_FALSE(m.rcs_for("rcs9"));
    CHECK_FALSE(m.acc);

    std::vector<Decision> edge_only{dec("a", Route::Edge, 1, 1), dec("b", Route::Edge, 1, 1)};
    CHECK(compute_metrics(edge_only, {}, 6, presets).ca == 1.0);

    std::vector<Decision> five;
    std::vector<RoutingLabel> labels;
    for (int i = 0; i < 5; ++i) {
        five.push_back(dec(std::to_string(i), Route::Edge, 5, 1));
        labels.push_back(lab(std::to_string(i), i == 4 ? 0 : 1));
    }
    CHECK(*compute_metrics(five, labels, 6, presets).acc == doctest::Approx(0.8));
    labels.pop_back();
    CHECK_THROWS_AS(compute_metrics(five, labels, 6, presets), DataError);
    CHECK_THROWS_AS(compute_metrics({}, {}, 6, presets), DataError);
}

TEST_CASE("rcs_combine examples") {
    CHECK(std::abs(rcs_combine(0.506, 0.824, 4.53, 1.2, 0.1, 0.001) - 0.685) <= 0.001);
    CHECK(std::abs(rcs_combine(0.4557, 1.0, 0.9359, scenario_preset("rcs2")) - 0.5748) <= 0.0001);
    for (const auto& s : scenario_presets()) CHECK(rcs_combine(0, 0, 0, s) == 0.0);
    // no clamping
    CHECK(rcs_combine(0, 0, 1000, 1, 1, 1) == -1000.0);
}

TEST_CASE("rcs linearity and scaling") {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const double a = rng.uniform(), c = rng.uniform(), l = rng.uniform(0, 10);
        const double al = rng.uniform(0, 2), be = rng.uniform(0, 2), ga = rng.uniform(0, 0.01);
        const double k = rng.uniform(0.1, 5);
        const double base = rcs_combine(a, c, l, al, be, ga);
        CHECK(rcs_combine(a, c, l, k * al, k * be, k * ga) == doctest::Approx(k * base));
        // additivity in apsp
        const double a2 = rng.uniform();
        CHECK(rcs_combine(a + a2, c, l, al, be, ga) == doctest::Approx(base + al * a2));
        CHECK(rcs_combine(a, c, l + 1, al, be, ga) == doctest::Approx(base - ga));
    }
    // argmax over policies survives a common positive scaling
    const double pols[][3] = {{0.5, 0.8, 4.5}, {0.55, 0.0, 7.4}, {0.45, 1.0, 0.9}, {0.52, 0.6, 5.0}};
    for (double k : {0.5, 2.0, 10.0}) {
        int arg1 = 0, arg2 = 0;
        for (int i = 1; i < 4; ++i) {
            if (rcs_combine(pols[i][0], pols[i][1], pols[i][2], 1.2, 0.1, 0.001) >
                rcs_combine(pols[arg1][0], pols[arg1][1], pols[arg1][2], 1.2, 0.1, 0.001))
                arg1 = i;
            if (rcs_combine(pols[i][0], pols[i][1], pols[i][2], 1.2 * k, 0.1 * k, 0.001 * k) >
                rcs_combine(pols[arg2][0], pols[arg2][1], pols[arg2][2], 1.2 * k, 0.1 * k, 0.001 * k))
                arg2 = i;
        }
        CHECK(arg1 == arg2);
    }
}

TEST_CASE("pgr") {
    CHECK(*pgr(7, 6, 8) == doctest::Approx(0.5));
    CHECK(*pgr(8, 6, 8) == 1.0);
    CHECK(*pgr(6, 6, 8) == 0.0);
    CHECK_FALSE(pgr(7, 6, 6));
}

TEST_CASE("savings") {
    auto a = testing::pair("a", 5, 9, 1.0, 4.5);
    a.edge.tokens_out = 40;
    a.cloud.tokens_out = 100;
    auto b = testing::pair("b", 5, 9, 2.0, 3.0);
    b.edge.tokens_out = 10;
    b.cloud.tokens_out = 15;
    std::vector<PairRecord> pairs{a, b};
    auto s = savings(std::vector<Decision>{realize(a, Route::Edge), realize(b, Route::Cloud)}, pairs);
    CHECK(*s.tokens == 60.0);
    CHECK(s.time_s == doctest::Approx(3.5));
    s = savings(std::vector<Decision>{realize(a, Route::Cloud), realize(b, Route::Cloud)}, pairs);
    CHECK(*s.tokens == 0.0);
    CHECK(s.time_s == 0.0);
    // tokens unknown on one side -> absent
    pairs[1].edge.tokens_out.reset();
    CHECK_FALSE(savings(std::vector<Decision>{realize(a, Route::Edge)}, pairs).tokens);

    // all-edge on a random set against a direct sum
    Rng rng(2);
    auto many = random_pairs(rng, 100);
    double want_t = 0, want_tok = 0;
    std::vector<Decision> all_edge;
    for (auto& p : many) {
        p.edge.tokens_out = static_cast<int64_t>(rng.below(300));
        p.cloud.tokens_out = static_cast<int64_t>(rng.below(300));
        want_t += p.cloud.latency_s - p.edge.latency_s;
        want_tok += static_cast<double>(*p.cloud.tokens_out - *p.edge.tokens_out);
        all_edge.push_back(realize(p, Route::Edge));
    }
    s = savings(all_edge, many);
    CHECK(s.time_s == doctest::Approx(want_t));
    CHECK(*s.tokens == want_tok);
}

TEST_CASE("attach_pair_metrics") {
    std::vector<PairRecord> pairs{testing::pair("a", 6, 8), testing::pair("b", 6, 8)};
    std::vector<Decision> d{realize(pairs[0], Route::Edge), realize(pairs[1], Route::Cloud)};
    const ScenarioConfig s[] = {scenario_preset("rcs1")};
    auto m = compute_metrics(d, {}, 6, s);
    attach_pair_metrics(m, d, pairs);
    CHECK(*m.pgr == doctest::Approx(0.5));
    CHECK(*m.time_saving == doctest::Approx(3.0));
    CHECK_FALSE(m.token_saving);
}

TEST_CASE("threshold routing") {
    CHECK(threshold_route(0.9, 0.85) == Route::Edge);
    CHECK(threshold_route(0.85, 0.85) == Route::Edge);
    CHECK(threshold_route(0.2, 0.85) == Route::Cloud);
    const auto pr = testing::pair("a", 3, 9, 1.0, 4.0);
    const auto e = realize(pr, Route::Edge, 0.7);
    CHECK(e.realized_score == 3);
    CHECK(e.realized_latency == 1.0);
    CHECK(*e.p == 0.7);
    CHECK(realize(pr, Route::Cloud).realized_score == 9);
}

TEST_CASE("tau grid") {
    const auto g = tau_grid();
    REQUIRE(g.size() == 21);
    CHECK(g.front() == 0.0);
    CHECK(g.back() == 1.0);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(0.05 * static_cast<double>(i)));
}

TEST_CASE("grid search matches enumeration") {
    // five hand-set records
    std::vector<PairRecord> five{testing::pair("a", 8, 9, 1, 5), testing::pair("b", 3, 9, 1, 5),
                                 testing::pair("c", 7, 7, 1, 5), testing::pair("d", 2, 4, 1, 5),
                                 testing::pair("e", 5, 8, 1, 5)};
    std::vector<double> p{0.93, 0.12, 0.71, 0.55, 0.40};
    for (const auto& s : scenario_presets()) {
        const auto got = grid_search_tau(p, five, s);
        const auto want = enumerate(p, five, s);
        CHECK(got.tau == want.tau);
        CHECK(got.rcs == doctest::Approx(want.rcs));
    }

    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const auto pairs = random_pairs(rng, 1 + rng.below(120));
        std::vector<double> q;
        for (std::size_t i = 0; i < pairs.size(); ++i) q.push_back(rng.below(4) == 0 ? rng.below(21) / 20.0 : rng.uniform());
        ScenarioConfig s = scenario_preset(trial % 2 ? "rcs2" : "rcs3", 1 + static_cast<double>(rng.below(10)));
        const auto got = grid_search_tau(q, pairs, s);
        const auto want = enumerate(q, pairs, s);
        CHECK(got.tau == want.tau);
        CHECK(got.rcs == doctest::Approx(want.rcs));
    }
    CHECK_THROWS_AS(grid_search_tau({}, {}, scenario_preset("rcs1")), DataError);
}

TEST_CASE("grid search tie and dominance cases") {
    Rng rng(4);
    const auto pairs = random_pairs(rng, 30);
    std::vector<double> ones(pairs.size(), 1.0);
    const auto t = grid_search_tau(ones, pairs, scenario_preset("rcs1"));
    CHECK(t.tau == 1.0);
    const double at0 = rcs_at(ones, pairs, 0.0, scenario_preset("rcs1"));
    CHECK(t.rcs == doctest::Approx(at0));

    // equal quality, cloud much slower, gamma dominant: sending everything to the edge wins
    std::vector<PairRecord> slow;
    std::vector<double> p;
    for (int i = 0; i < 20; ++i) {
        slow.push_back(testing::pair("s" + std::to_string(i), 7, 7, 0.5, 30.0));
        p.push_back(0.02 + 0.045 * i);
    }
    ScenarioConfig s{"speed", 6, 1.0, 0.0, 1.0};
    const auto d = grid_search_tau(p, slow, s);
    CHECK(d.tau <= 0.05);
    CHECK(d.tau == enumerate(p, slow, s).tau);
}

TEST_CASE("ca and ail monotone in tau") {
    Rng rng(5);
    const ScenarioConfig s[] = {scenario_preset("rcs1")};
    for (int trial = 0; trial < 20; ++trial) {
        const auto pairs = random_pairs(rng, 60, true);
        std::vector<double> p;
        for (std::size_t i = 0; i < pairs.size(); ++i) p.push_back(rng.uniform());
        double prev_ca = 2, prev_ail = -1;
        for (double tau : tau_grid()) {
            const auto m = compute_metrics(route_by_threshold(p, pairs, tau), {}, 6, s);
            CHECK(m.ca <= prev_ca);
            CHECK(m.ail >= prev_ail - 1e-12);
            prev_ca = m.ca;
            prev_ail = m.ail;
        }
    }
}

TEST_CASE("apsp bracketed by the baselines when the cloud never scores lower") {
    Rng rng(6);
    const ScenarioConfig s[] = {scenario_preset("rcs1")};
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<PairRecord> pairs;
        for (int i = 0; i < 50; ++i) {
            const double e = 1 + static_cast<double>(rng.below(10));
            pairs.push_back(testing::pair("x" + std::to_string(i), e, std::min(10.0, e + static_cast<double>(rng.below(4)))));
        }
        std::vector<double> p;
        for (std::size_t i = 0; i < pairs.size(); ++i) p.push_back(rng.uniform());
        const double small = compute_metrics(route_by_threshold(std::vector<double>(50, 1.0), pairs, 0.5), {}, 6, s).apsp;
        const double large = compute_metrics(route_by_threshold(std::vector<double>(50, 0.0), pairs, 0.5), {}, 6, s).apsp;
        for (double tau : tau_grid()) {
            const double a = compute_metrics(route_by_threshold(p, pairs, tau), {}, 6, s).apsp;
            CHECK(a >= std::min(small, large));
            CHECK(a <= std::max(small, large));
        }
    }
}

TEST_CASE("metric ranges") {
    Rng rng(7);
    const auto presets = scenario_presets();
    for (int trial = 0; trial < 50; ++trial) {
        const auto pairs = random_pairs(rng, 1 + rng.below(40));
        std::vector<Decision> d;
        std::vector<RoutingLabel> labels;
        for (const auto& pr : pairs) {
            d.push_back(realize(pr, rng.below(2) ? Route::Edge : Route::Cloud));
            labels.push_back(lab(pr.query_id(), static_cast<int>(rng.below(2))));
        }
        const auto m = compute_metrics(d, labels, 1 + static_cast<double>(rng.below(10)), presets);
        CHECK(m.apsp >= 0);
        CHECK(m.apsp <= 1);
        CHECK(m.ca >= 0);
        CHECK(m.ca <= 1);
        CHECK(*m.acc >= 0);
        CHECK(*m.acc <= 1);
        CHECK(m.ail >= 0);
    }
}
