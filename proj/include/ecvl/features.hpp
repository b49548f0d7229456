#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecvl/rsd.hpp"

namespace ecvl {

struct TextStats {
    std::size_t word_count = 0;
    std::size_t special_char_count = 0;
    std::size_t numeric_token_count = 0;
    std::size_t char_count = 0;  // Unicode code points
    bool operator==(const TextStats&) const = default;
};

/// Total function over arbitrary bytes; invalid UTF-8 bytes count as one character each.
TextStats text_stats(std::string_view text);

struct ImageStats {
    int width = 0;
    int height = 0;
    int channels = 0;
    bool present = false;
    bool operator==(const ImageStats&) const = default;
};

ImageStats image_stats(const std::optional<ImageMeta>& meta);
/// Reads dimensions from a PNG or JPEG header; `name` is used in error messages.
ImageStats image_stats_from_bytes(std::span<const uint8_t> bytes, const std::string& name);
ImageStats image_stats_from_file(const std::string& path);

std::vector<uint8_t> base64_decode(std::string_view text);

enum class Modality : uint8_t { Text = 0, Image = 1 };

struct EmbeddingTable {
    Modality modality = Modality::Text;
    uint32_t dim = 0;
    std::map<std::string, std::vector<float>> rows;

    const std::vector<float>* find(const std::string& query_id) const;
    bool operator==(const EmbeddingTable&) const = default;
};

/// Binary "ECVLEMB1" container, or JSONL rows when the file starts with '{'
/// (JSONL carries no modality byte, so `jsonl_modality` is used).
EmbeddingTable load_embeddings(const std::string& path, Modality jsonl_modality = Modality::Text);
EmbeddingTable parse_embeddings(std::span<const uint8_t> bytes, Modality jsonl_modality = Modality::Text);
void save_embeddings(const EmbeddingTable& table, const std::string& path);
std::string encode_embeddings(const EmbeddingTable& table);

inline constexpr std::size_t kStatsDim = 7;
using StatsVector = std::array<double, kStatsDim>;

/// [word_count, special_char_count, numeric_token_count, char_count, width, height, channels],
/// computed over query_text joined with input_text.
StatsVector raw_stats(const ResponseRecord& record);
StatsVector raw_stats(const TextStats& text, const ImageStats& image);
std::string stats_text(const ResponseRecord& record);

struct Normalizer {
    StatsVector mean{};
    StatsVector stddev{1, 1, 1, 1, 1, 1, 1};

    StatsVector transform(const StatsVector& raw) const;
    StatsVector inverse(const StatsVector& standardized) const;
    bool operator==(const Normalizer&) const = default;
};

/// Population statistics; zero-variance dimensions get stddev 1.
Normalizer fit_normalizer(std::span<const StatsVector> rows);

struct ModalityMask {
    bool text = true;
    bool image = true;
    bool stats = true;

    /// "111", "001", ... in (text, image, stats) order.
    static ModalityMask parse(std::string_view bits);
    std::string str() const;
    bool operator==(const ModalityMask&) const = default;
};

struct FeatureBundle {
    std::string query_id;
    std::optional<std::vector<float>> e_text;
    std::optional<std::vector<float>> e_image;
    StatsVector stats{};  // standardized
    ModalityMask mask;
};

struct EmbeddingTables {
    const EmbeddingTable* text = nullptr;
    const EmbeddingTable* image = nullptr;
};

struct AssemblyCounters {
    std::size_t bundles = 0;
    std::size_t missing_text = 0;
    std::size_t missing_image = 0;

    double missing_rate() const {
        return bundles == 0 ? 0.0 : static_cast<double>(missing_text + missing_image) / static_cast<double>(bundles);
    }
};

/// Missing embeddings clear the corresponding mask bit and bump a counter; a
/// query without an image always gets image mask 0.
FeatureBundle assemble(const ResponseRecord& record, const EmbeddingTables& tables, const Normalizer& normalizer,
                       ModalityMask mask, AssemblyCounters* counters = nullptr);

}  // namespace ecvl
