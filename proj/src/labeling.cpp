#include "ecvl/labeling.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ecvl/error.hpp"

namespace ecvl {

namespace {

void check_score(double s, const char* what) {
    if (!(s >= 1.0 && s <= 10.0)) throw RangeError(std::string(what) + " must lie in [1,10]");
}

double parse_param(std::string_view text, std::string_view key) {
    // expects "key=<number>"
    if (text.substr(0, key.size()) != key || text.size() <= key.size() || text[key.size()] != '=')
        throw RangeError("expected '" + std::string(key) + "=<number>' in strategy, got '" + std::string(text) + "'");
    std::string num(text.substr(key.size() + 1));
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(num, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != num.size() || num.empty()) throw RangeError("bad number in strategy: '" + num + "'");
    return v;
}

std::string format_number(double v) {
    std::ostringstream ss;
    ss << v;
    return ss.str();
}

}  // namespace

LabelStrategy parse_strategy(std::string_view d) {
    if (d == "win-hard") return WinHardRule{};
    if (d == "proposed") return ProposedRule{};
    if (d.starts_with("proposed:")) {
        double mes = parse_param(d.substr(9), "mes");
        check_score(mes, "mes");
        return ProposedRule{mes};
    }
    if (d.starts_with("win-soft:")) {
        double k = parse_param(d.substr(9), "k");
        if (!(k > 0.0)) throw RangeError("win-soft k must be > 0");
        return WinSoftRule{k};
    }
    throw RangeError("unknown strategy '" + std::string(d) + "' (expected proposed:mes=X | win-hard | win-soft:k=X)");
}

std::string describe(const LabelStrategy& s) {
    if (auto p = std::get_if<ProposedRule>(&s)) return "proposed:mes=" + format_number(p->mes);
    if (std::holds_alternative<WinHardRule>(s)) return "win-hard";
    return "win-soft:k=" + format_number(std::get<WinSoftRule>(s).k);
}

uint8_t label_proposed(double score_edge, double score_cloud, double mes) {
    check_score(score_edge, "score_edge");
    check_score(score_cloud, "score_cloud");
    check_score(mes, "mes");
    const bool reaches_floor = score_edge >= std::min(score_cloud, mes);
    const bool cloud_fails = score_cloud < mes;
    return (reaches_floor || cloud_fails) ? 1 : 0;
}

uint8_t label_win(double score_edge, double score_cloud, double k) {
    check_score(score_edge, "score_edge");
    check_score(score_cloud, "score_cloud");
    if (!(k >= 0.0) || !std::isfinite(k)) throw RangeError("k must be finite and >= 0");
    return score_edge + k >= score_cloud ? 1 : 0;
}

uint8_t apply_strategy(const LabelStrategy& strategy, double score_edge, double score_cloud) {
    return std::visit(
        [&](const auto& rule) -> uint8_t {
            using R = std::decay_t<decltype(rule)>;
            if constexpr (std::is_same_v<R, ProposedRule>) return label_proposed(score_edge, score_cloud, rule.mes);
            else if constexpr (std::is_same_v<R, WinHardRule>) return label_win(score_edge, score_cloud, 0.0);
            else return label_win(score_edge, score_cloud, rule.k);
        },
        strategy);
}

LabelingResult label_dataset(std::span<const PairRecord> pairs, const LabelStrategy& strategy) {
    if (pairs.empty()) throw DataError("cannot label an empty pair set");
    LabelingResult out;
    out.labels.reserve(pairs.size());
    std::size_t positives = 0;
    for (const auto& p : pairs) {
        const uint8_t l = apply_strategy(strategy, p.edge.score, p.cloud.score);
        positives += l;
        out.labels.push_back({p.query_id(), l, strategy});
    }
    out.positive_rate = static_cast<double>(positives) / static_cast<double>(pairs.size());
    out.degenerate = positives == 0 || positives == pairs.size();
    return out;
}

std::vector<uint8_t> align_labels(std::span<const PairRecord> pairs, std::span<const RoutingLabel> labels) {
    std::map<std::string_view, uint8_t> by_id;
    for (const auto& l : labels) by_id.emplace(l.query_id, l.label);
    std::vector<uint8_t> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        auto it = by_id.find(p.query_id());
        if (it == by_id.end()) throw DataError("no label for query_id " + p.query_id());
        out.push_back(it->second);
    }
    return out;
}

void save_labels(std::span<const RoutingLabel> labels, const std::string& path) {
    std::string out;
    for (const auto& l : labels) {
        out += nlohmann::json{{"query_id", l.query_id}, {"label", l.label}, {"strategy", describe(l.strategy)}}.dump();
        out += '\n';
    }
    write_file_atomic(path, out);
}

std::vector<RoutingLabel> load_labels(const std::string& path) {
    std::vector<RoutingLabel> out;
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = nlohmann::json::parse(line);
            RoutingLabel l;
            l.query_id = j.at("query_id").get<std::string>();
            const int v = j.at("label").get<int>();
            if (v != 0 && v != 1) throw DataError("label must be 0 or 1");
            l.label = static_cast<uint8_t>(v);
            l.strategy = parse_strategy(j.at("strategy").get<std::string>());
            out.push_back(std::move(l));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":line " + std::to_string(line_no) + ": " + e.what());
        } catch (const std::invalid_argument& e) {
            throw DataError(path + ":line " + std::to_string(line_no) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError(path + ":line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace ecvl
