#include "ecvl/rsd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include <json.hpp>

#include "ecvl/error.hpp"
#include "ecvl/rng.hpp"

namespace ecvl {

using nlohmann::json;

const ModelOutcome* ResponseRecord::outcome(std::string_view model) const {
    auto it = outcomes.find(std::string(model));
    return it == outcomes.end() ? nullptr : &it->second;
}

void ScenarioConfig::validate() const {
    if (!(mes >= 1.0 && mes <= 10.0)) throw RangeError("scenario '" + name + "': mes must lie in [1,10]");
    for (double w : {alpha, beta, gamma}) {
        if (!std::isfinite(w) || w < 0.0) throw RangeError("scenario '" + name + "': weights must be finite and >= 0");
    }
}

ScenarioConfig scenario_preset(std::string_view name, double mes) {
    ScenarioConfig s;
    if (name == "rcs1") s = {"rcs1", mes, 1.2, 0.1, 0.001};
    else if (name == "rcs2") s = {"rcs2", mes, 1.0, 0.12, 0.001};
    else if (name == "rcs3") s = {"rcs3", mes, 1.0, 0.1, 0.0015};
    else throw RangeError("unknown scenario preset '" + std::string(name) + "' (expected rcs1|rcs2|rcs3)");
    s.validate();
    return s;
}

std::array<ScenarioConfig, 3> scenario_presets(double mes) {
    return {scenario_preset("rcs1", mes), scenario_preset("rcs2", mes), scenario_preset("rcs3", mes)};
}

namespace {

std::string where(const std::string& qid) { return qid.empty() ? std::string() : " (query_id " + qid + ")"; }

const json& require(const json& obj, const char* key, const std::string& qid) {
    auto it = obj.find(key);
    if (it == obj.end()) throw DataError(std::string("missing field ") + key + where(qid));
    return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& qid) {
    const json& v = require(obj, key, qid);
    if (!v.is_string()) throw DataError(std::string("field ") + key + " must be a string" + where(qid));
    return v.get<std::string>();
}

double require_number(const json& obj, const char* key, const std::string& qid) {
    const json& v = require(obj, key, qid);
    if (!v.is_number()) throw DataError(std::string("field ") + key + " must be a number" + where(qid));
    return v.get<double>();
}

int require_int(const json& obj, const char* key, const std::string& qid) {
    const json& v = require(obj, key, qid);
    if (!v.is_number_integer()) throw DataError(std::string("field ") + key + " must be an integer" + where(qid));
    return v.get<int>();
}

}  // namespace

ResponseRecord parse_record(std::string_view line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw DataError("record must be a JSON object");

    ResponseRecord r;
    if (auto it = j.find("query_id"); it != j.end() && it->is_string()) r.query_id = it->get<std::string>();
    r.query_id = require_string(j, "query_id", r.query_id);
    if (r.query_id.empty()) throw DataError("query_id must be non-empty");
    const std::string& qid = r.query_id;
    r.source_dataset = require_string(j, "source_dataset", qid);
    r.query_text = require_string(j, "query_text", qid);
    if (j.contains("input_text")) r.input_text = require_string(j, "input_text", qid);

    if (auto it = j.find("image"); it != j.end() && !it->is_null()) {
        if (!it->is_object()) throw DataError("field image must be an object" + where(qid));
        ImageMeta m;
        m.width = require_int(*it, "width", qid);
        m.height = require_int(*it, "height", qid);
        m.channels = require_int(*it, "channels", qid);
        if (m.width < 1 || m.height < 1) throw DataError("image dimensions must be >= 1" + where(qid));
        if (m.channels != 1 && m.channels != 3 && m.channels != 4)
            throw DataError("image channels must be 1, 3 or 4" + where(qid));
        if (it->contains("path")) m.path = require_string(*it, "path", qid);
        r.image = std::move(m);
    }

    const json& outs = require(j, "outcomes", qid);
    if (!outs.is_object()) throw DataError("field outcomes must be an object" + where(qid));
    for (const auto& [name, o] : outs.items()) {
        if (name.empty()) throw DataError("empty model name in outcomes" + where(qid));
        if (!o.is_object()) throw DataError("outcome for " + name + " must be an object" + where(qid));
        ModelOutcome mo;
        mo.model_name = name;
        mo.score = require_number(o, "score", qid);
        mo.latency_s = require_number(o, "latency_s", qid);
        if (!(mo.score >= 1.0 && mo.score <= 10.0))
            throw DataError("score out of range for model " + name + where(qid));
        if (!std::isfinite(mo.latency_s) || mo.latency_s < 0.0)
            throw DataError("negative latency for model " + name + where(qid));
        if (auto t = o.find("tokens_out"); t != o.end() && !t->is_null()) {
            if (!t->is_number_integer() || t->get<int64_t>() < 0)
                throw DataError("tokens_out must be a non-negative integer" + where(qid));
            mo.tokens_out = t->get<int64_t>();
        }
        r.outcomes.emplace(name, std::move(mo));
    }
    return r;
}

std::string serialize_record(const ResponseRecord& r) {
    json j;
    j["query_id"] = r.query_id;
    j["source_dataset"] = r.source_dataset;
    j["query_text"] = r.query_text;
    if (!r.input_text.empty()) j["input_text"] = r.input_text;
    if (r.image) {
        json im{{"width", r.image->width}, {"height", r.image->height}, {"channels", r.image->channels}};
        if (r.image->path) im["path"] = *r.image->path;
        j["image"] = std::move(im);
    }
    json outs = json::object();
    for (const auto& [name, o] : r.outcomes) {
        json jo{{"score", o.score}, {"latency_s", o.latency_s}};
        if (o.tokens_out) jo["tokens_out"] = *o.tokens_out;
        outs[name] = std::move(jo);
    }
    j["outcomes"] = std::move(outs);
    return j.dump();
}

Dataset parse_dataset(std::string_view jsonl) {
    Dataset ds;
    std::map<std::string, std::size_t> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= jsonl.size()) {
        std::size_t nl = jsonl.find('\n', pos);
        if (nl == std::string_view::npos) nl = jsonl.size();
        std::string_view line = jsonl.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
        try {
            auto rec = std::make_shared<ResponseRecord>(parse_record(line));
            if (auto [it, fresh] = seen.emplace(rec->query_id, line_no); !fresh)
                throw DataError("duplicate query_id " + rec->query_id + " (first seen on line " +
                                std::to_string(it->second) + ")");
            ds.records.push_back(std::move(rec));
        } catch (const DataError& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return ds;
}

Dataset load_dataset(const std::string& path) {
    try {
        return parse_dataset(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path + ":" + e.what());
    }
}

void save_dataset(const Dataset& dataset, const std::string& path) {
    std::string out;
    for (const auto& r : dataset.records) {
        out += serialize_record(*r);
        out += '\n';
    }
    write_file_atomic(path, out);
}

PairView pair_view(std::span<const RecordPtr> records, std::string_view edge_name, std::string_view cloud_name) {
    if (edge_name == cloud_name) throw RangeError("pair must be distinct: '" + std::string(edge_name) + "'");
    PairView view;
    for (const auto& r : records) {
        const ModelOutcome* e = r->outcome(edge_name);
        const ModelOutcome* c = r->outcome(cloud_name);
        if (e && c) {
            view.pairs.push_back({r, *e, *c});
        } else {
            ++view.skipped;
        }
    }
    if (view.pairs.empty())
        throw DataError("no matching records containing both '" + std::string(edge_name) + "' and '" +
                        std::string(cloud_name) + "'");
    return view;
}

std::string_view split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        case Split::Test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "valid") return Split::Valid;
    if (s == "test") return Split::Test;
    throw DataError("unknown split '" + std::string(s) + "'");
}

std::size_t SplitAssignment::count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(by_query.begin(), by_query.end(), [s](const auto& kv) { return kv.second == s; }));
}

namespace {

// Largest-remainder apportionment; leftover goes to the largest fractional parts, earlier split first.
std::array<std::size_t, 3> apportion(std::size_t n, const SplitRatios& r) {
    const std::array<double, 3> ratio{r.train, r.valid, r.test};
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = ratio[i] * static_cast<double>(n);
        sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        frac[i] = exact - static_cast<double>(sizes[i]);
        assigned += sizes[i];
    }
    while (assigned > n) {
        for (int i = 2; i >= 0 && assigned > n; --i) {
            if (sizes[i] > 0) {
                --sizes[i];
                --assigned;
            }
        }
    }
    while (assigned < n) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (frac[i] > frac[best] + 1e-12) best = i;
        ++sizes[best];
        frac[best] = -1.0;
        ++assigned;
    }
    return sizes;
}

uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace

SplitAssignment stratified_split(std::span<const PairRecord> pairs, std::span<const uint8_t> labels, SplitRatios ratios,
                                 uint64_t seed) {
    if (labels.size() != pairs.size()) throw RangeError("labels must cover all records");
    for (double r : {ratios.train, ratios.valid, ratios.test})
        if (!(r >= 0.0)) throw RangeError("split ratios must be non-negative");
    if (std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9)
        throw RangeError("split ratios must sum to 1");

    std::map<std::pair<std::string, uint8_t>, std::vector<std::string>> strata;
    for (std::size_t i = 0; i < pairs.size(); ++i)
        strata[{pairs[i].record->source_dataset, labels[i] ? uint8_t{1} : uint8_t{0}}].push_back(pairs[i].query_id());

    SplitAssignment out;
    out.ratios = ratios;
    out.seed = seed;
    for (auto& [key, ids] : strata) {
        // Input order must not matter: canonicalize before the seeded shuffle.
        std::sort(ids.begin(), ids.end());
        Rng rng(mix_seed(seed, fnv1a(key.first) ^ key.second));
        rng.shuffle(ids.begin(), ids.end());
        const auto sizes = apportion(ids.size(), ratios);
        std::size_t k = 0;
        for (int s = 0; s < 3; ++s)
            for (std::size_t c = 0; c < sizes[s]; ++c) {
                if (!out.by_query.emplace(ids[k++], static_cast<Split>(s)).second)
                    throw DataError("duplicate query_id in split input");
            }
    }
    return out;
}

void save_split(const SplitAssignment& split, const std::string& path) {
    std::string out;
    for (const auto& [qid, s] : split.by_query) {
        out += json{{"query_id", qid}, {"split", split_name(s)}}.dump();
        out += '\n';
    }
    write_file_atomic(path, out);
}

SplitAssignment load_split(const std::string& path) {
    SplitAssignment out;
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            json j = json::parse(line);
            std::string qid = require_string(j, "query_id", "");
            Split s = parse_split(require_string(j, "split", qid));
            if (!out.by_query.emplace(qid, s).second) throw DataError("duplicate query_id " + qid);
        } catch (const json::exception& e) {
            throw DataError(path + ":line " + std::to_string(line_no) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError(path + ":line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    const double n = static_cast<double>(out.by_query.size());
    if (n > 0) out.ratios = {out.count(Split::Train) / n, out.count(Split::Valid) / n, out.count(Split::Test) / n};
    return out;
}

SplitRatios parse_ratios(std::string_view text) {
    std::array<double, 3> v{};
    std::string s(text);
    for (char& c : s)
        if (c == ':' || c == ',') c = ' ';
    std::istringstream in(s);
    for (double& x : v)
        if (!(in >> x)) throw RangeError("ratios must be three numbers like 60:20:20");
    std::string rest;
    if (in >> rest) throw RangeError("ratios must be three numbers like 60:20:20");
    const double sum = v[0] + v[1] + v[2];
    for (double x : v)
        if (!(x >= 0.0)) throw RangeError("ratios must be non-negative");
    if (std::abs(sum - 100.0) < 1e-6) return {v[0] / 100.0, v[1] / 100.0, v[2] / 100.0};
    if (std::abs(sum - 1.0) < 1e-9) return {v[0], v[1], v[2]};
    throw RangeError("ratios must sum to 100 (percent) or 1");
}

void write_file_atomic(const std::string& path, std::string_view content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace ecvl
