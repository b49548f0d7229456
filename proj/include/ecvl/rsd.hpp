#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ecvl {

struct ModelOutcome {
    std::string model_name;
    double score = 0.0;      // judge score, [1, 10]
    double latency_s = 0.0;  // end-to-end seconds
    std::optional<int64_t> tokens_out;

    bool operator==(const ModelOutcome&) const = default;
};

struct ImageMeta {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::optional<std::string> path;

    bool operator==(const ImageMeta&) const = default;
};

struct ResponseRecord {
    std::string query_id;
    std::string source_dataset;
    std::string query_text;
    std::string input_text;
    std::optional<ImageMeta> image;
    std::map<std::string, ModelOutcome> outcomes;  // keyed by model_name

    const ModelOutcome* outcome(std::string_view model) const;
    bool operator==(const ResponseRecord&) const = default;
};

using RecordPtr = std::shared_ptr<const ResponseRecord>;

struct PairRecord {
    RecordPtr record;
    ModelOutcome edge;
    ModelOutcome cloud;

    const std::string& query_id() const { return record->query_id; }
};

/// A user scenario: quality floor plus RCS weights.
struct ScenarioConfig {
    std::string name;
    double mes = 6.0;
    double alpha = 1.2;
    double beta = 0.1;
    double gamma = 0.001;  // per second

    void validate() const;
    bool operator==(const ScenarioConfig&) const = default;
};

/// Quality / Efficiency / Speed presets.
ScenarioConfig scenario_preset(std::string_view name, double mes = 6.0);
std::array<ScenarioConfig, 3> scenario_presets(double mes = 6.0);

ResponseRecord parse_record(std::string_view line);
std::string serialize_record(const ResponseRecord& record);

struct Dataset {
    std::vector<RecordPtr> records;
};

/// Reads a JSONL record file. Errors carry the 1-based line number.
Dataset load_dataset(const std::string& path);
Dataset parse_dataset(std::string_view jsonl);
void save_dataset(const Dataset& dataset, const std::string& path);

struct PairView {
    std::vector<PairRecord> pairs;
    std::size_t skipped = 0;  // records lacking one of the two outcomes
};

PairView pair_view(std::span<const RecordPtr> records, std::string_view edge_name, std::string_view cloud_name);

enum class Split : uint8_t { Train = 0, Valid = 1, Test = 2 };

std::string_view split_name(Split s);
Split parse_split(std::string_view s);

struct SplitRatios {
    double train = 0.6;
    double valid = 0.2;
    double test = 0.2;
    bool operator==(const SplitRatios&) const = default;
};

struct SplitAssignment {
    std::map<std::string, Split> by_query;
    SplitRatios ratios;
    uint64_t seed = 0;

    std::size_t count(Split s) const;
    bool operator==(const SplitAssignment&) const = default;
};

/// Per-stratum (source_dataset x label) shuffled split. `labels[i]` belongs to `pairs[i]`.
SplitAssignment stratified_split(std::span<const PairRecord> pairs, std::span<const uint8_t> labels, SplitRatios ratios,
                                 uint64_t seed);

void save_split(const SplitAssignment& split, const std::string& path);
SplitAssignment load_split(const std::string& path);

/// Parses "60:20:20" or "0.6:0.2:0.2"; integer forms are normalized by their sum.
SplitRatios parse_ratios(std::string_view text);

/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::string& path, std::string_view content);
std::string read_file(const std::string& path);

}  // namespace ecvl
