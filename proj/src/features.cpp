#include "ecvl/features.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ecvl/error.hpp"

namespace ecvl {

namespace {

// Decodes one code point; malformed sequences consume a single byte and yield 0xFFFD.
char32_t next_code_point(std::string_view s, std::size_t& i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) {
        ++i;
        return b0;
    }
    int len = 0;
    char32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        ++i;
        return 0xFFFD;
    }
    if (i + len > s.size()) {
        ++i;
        return 0xFFFD;
    }
    for (int k = 1; k < len; ++k) {
        const auto b = static_cast<unsigned char>(s[i + k]);
        if ((b & 0xC0) != 0x80) {
            ++i;
            return 0xFFFD;
        }
        cp = (cp << 6) | (b & 0x3F);
    }
    i += len;
    return cp;
}

bool is_space(char32_t c) {
    if (c == ' ' || (c >= 0x09 && c <= 0x0D)) return true;
    return c == 0x85 || c == 0xA0 || c == 0x1680 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 ||
           c == 0x202F || c == 0x205F || c == 0x3000;
}

bool is_alnum(char32_t c) {
    if (c < 0x80) return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
    // Non-ASCII: punctuation/symbol blocks are special, everything else counts as a letter.
    if (c <= 0xBF) return false;  // Latin-1 punctuation and symbols
    if (c == 0xD7 || c == 0xF7) return false;
    if (c >= 0x2010 && c <= 0x2BFF) return false;  // general punctuation .. misc symbols
    if (c >= 0x3001 && c <= 0x3003) return false;
    if (c >= 0x3008 && c <= 0x3011) return false;
    if (c >= 0xFF01 && c <= 0xFF0F) return false;
    if (c >= 0xFF1A && c <= 0xFF20) return false;
    if (c == 0xFFFD) return false;
    if (c >= 0x1F000 && c <= 0x1FAFF) return false;  // emoji and pictographs
    return true;
}

bool is_numeric_token(std::string_view tok) {
    int digits = 0;
    int points = 0;
    for (char c : tok) {
        if (c >= '0' && c <= '9') ++digits;
        else if (c == '.') ++points;
        else return false;
    }
    return digits > 0 && points <= 1;
}

}  // namespace

TextStats text_stats(std::string_view text) {
    TextStats st;
    std::size_t i = 0;
    std::size_t token_start = std::string_view::npos;
    auto close_token = [&](std::size_t end) {
        if (token_start == std::string_view::npos) return;
        ++st.word_count;
        if (is_numeric_token(text.substr(token_start, end - token_start))) ++st.numeric_token_count;
        token_start = std::string_view::npos;
    };
    while (i < text.size()) {
        const std::size_t at = i;
        const char32_t c = next_code_point(text, i);
        ++st.char_count;
        if (is_space(c)) {
            close_token(at);
            continue;
        }
        if (token_start == std::string_view::npos) token_start = at;
        if (!is_alnum(c)) ++st.special_char_count;
    }
    close_token(text.size());
    return st;
}

ImageStats image_stats(const std::optional<ImageMeta>& meta) {
    if (!meta) return {};
    if (meta->width < 1 || meta->height < 1 || (meta->channels != 1 && meta->channels != 3 && meta->channels != 4))
        throw DataError("invalid image metadata");
    return {meta->width, meta->height, meta->channels, true};
}

namespace {

uint32_t be32(const uint8_t* p) {
    return (uint32_t{p[0]} << 24) | (uint32_t{p[1]} << 16) | (uint32_t{p[2]} << 8) | uint32_t{p[3]};
}
uint16_t be16(const uint8_t* p) { return static_cast<uint16_t>((p[0] << 8) | p[1]); }

ImageStats png_stats(std::span<const uint8_t> b, const std::string& name) {
    // signature(8) + length(4) + "IHDR"(4) + width(4) + height(4) + depth(1) + color type(1)
    if (b.size() < 26 || std::memcmp(b.data() + 12, "IHDR", 4) != 0)
        throw DataError("corrupt PNG header: " + name);
    const uint32_t w = be32(b.data() + 16);
    const uint32_t h = be32(b.data() + 20);
    int channels = 0;
    switch (b[25]) {
        case 0: channels = 1; break;  // grayscale
        case 4: channels = 1; break;  // grayscale + alpha: still a gray image
        case 2: channels = 3; break;
        case 3: channels = 3; break;  // palette
        case 6: channels = 4; break;
        default: throw DataError("corrupt PNG header (color type): " + name);
    }
    if (w == 0 || h == 0 || w > 0x7FFFFFFF || h > 0x7FFFFFFF) throw DataError("corrupt PNG dimensions: " + name);
    return {static_cast<int>(w), static_cast<int>(h), channels, true};
}

ImageStats jpeg_stats(std::span<const uint8_t> b, const std::string& name) {
    std::size_t i = 2;
    while (i + 4 <= b.size()) {
        if (b[i] != 0xFF) throw DataError("corrupt JPEG marker stream: " + name);
        uint8_t marker = b[i + 1];
        if (marker == 0xFF) {
            ++i;
            continue;
        }
        if (marker == 0xD8 || (marker >= 0xD0 && marker <= 0xD7) || marker == 0x01) {
            i += 2;
            continue;
        }
        const uint16_t len = be16(b.data() + i + 2);
        if (len < 2) throw DataError("corrupt JPEG segment: " + name);
        const bool sof = marker >= 0xC0 && marker <= 0xCF && marker != 0xC4 && marker != 0xC8 && marker != 0xCC;
        if (sof) {
            if (i + 10 > b.size()) break;
            const uint16_t h = be16(b.data() + i + 5);
            const uint16_t w = be16(b.data() + i + 7);
            const uint8_t comps = b[i + 9];
            if (w == 0 || h == 0) throw DataError("corrupt JPEG dimensions: " + name);
            int channels = comps == 1 ? 1 : comps == 3 ? 3 : comps == 4 ? 4 : 0;
            if (channels == 0) throw DataError("unsupported JPEG component count: " + name);
            return {w, h, channels, true};
        }
        if (marker == 0xD9 || marker == 0xDA) break;
        i += 2 + len;
    }
    throw DataError("corrupt JPEG (no frame header): " + name);
}

}  // namespace

ImageStats image_stats_from_bytes(std::span<const uint8_t> b, const std::string& name) {
    static constexpr uint8_t kPng[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    if (b.size() >= 8 && std::memcmp(b.data(), kPng, 8) == 0) return png_stats(b, name);
    if (b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF) return jpeg_stats(b, name);
    throw DataError("unreadable image (not PNG/JPEG): " + name);
}

ImageStats image_stats_from_file(const std::string& path) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const DataError&) {
        throw DataError("unreadable image file: " + path);
    }
    return image_stats_from_bytes({reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size()}, path);
}

std::vector<uint8_t> base64_decode(std::string_view text) {
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+' || c == '-') return 62;
        if (c == '/' || c == '_') return 63;
        return -1;
    };
    std::vector<uint8_t> out;
    out.reserve(text.size() * 3 / 4);
    uint32_t acc = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=') break;
        if (c == '\n' || c == '\r' || c == ' ') continue;
        const int v = value(c);
        if (v < 0) throw DataError("invalid base64 payload");
        acc = (acc << 6) | static_cast<uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<uint8_t>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Embedding files

const std::vector<float>* EmbeddingTable::find(const std::string& query_id) const {
    auto it = rows.find(query_id);
    return it == rows.end() ? nullptr : &it->second;
}

namespace {

constexpr char kEmbMagic[8] = {'E', 'C', 'V', 'L', 'E', 'M', 'B', '1'};

static_assert(std::endian::native == std::endian::little, "embedding I/O assumes a little-endian host");

class Reader {
public:
    explicit Reader(std::span<const uint8_t> b) : b_(b) {}
    template <typename T>
    T get() {
        T v;
        need(sizeof(T));
        std::memcpy(&v, b_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void floats(float* out, std::size_t n) {
        need(n * sizeof(float));
        std::memcpy(out, b_.data() + pos_, n * sizeof(float));
        pos_ += n * sizeof(float);
    }
    bool done() const { return pos_ == b_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > b_.size()) throw DataError("truncated embedding file");
    }
    std::span<const uint8_t> b_;
    std::size_t pos_ = 0;
};

void insert_row(EmbeddingTable& t, std::string id, std::vector<float> v) {
    if (v.size() != t.dim)
        throw DataError("dimension mismatch for " + id + ": expected " + std::to_string(t.dim) + ", got " +
                        std::to_string(v.size()));
    for (float x : v)
        if (!std::isfinite(x)) throw DataError("non-finite embedding value for " + id);
    std::string key = id;
    if (!t.rows.emplace(std::move(key), std::move(v)).second) throw DataError("duplicate query_id " + id);
}

}  // namespace

EmbeddingTable parse_embeddings(std::span<const uint8_t> bytes, Modality jsonl_modality) {
    EmbeddingTable t;
    std::size_t first = 0;
    while (first < bytes.size() && (bytes[first] == ' ' || bytes[first] == '\n' || bytes[first] == '\r')) ++first;
    if (first < bytes.size() && bytes[first] == '{') {
        t.modality = jsonl_modality;
        std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
        std::size_t pos = 0;
        bool have_dim = false;
        while (pos < text.size()) {
            std::size_t nl = text.find('\n', pos);
            if (nl == std::string_view::npos) nl = text.size();
            std::string_view line = text.substr(pos, nl - pos);
            pos = nl + 1;
            if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw DataError(std::string("malformed embedding JSONL: ") + e.what());
            }
            if (!j.contains("query_id") || !j.contains("vector")) continue;  // metadata rows
            std::vector<float> v;
            for (const auto& x : j.at("vector")) {
                if (!x.is_number()) throw DataError("non-finite embedding value");
                v.push_back(x.get<float>());
            }
            if (!have_dim) {
                t.dim = static_cast<uint32_t>(v.size());
                have_dim = true;
            }
            insert_row(t, j.at("query_id").get<std::string>(), std::move(v));
        }
        return t;
    }

    Reader r(bytes);
    if (r.str(8) != std::string(kEmbMagic, 8)) throw DataError("bad embedding magic (expected ECVLEMB1)");
    const auto modality = r.get<uint8_t>();
    if (modality > 1) throw DataError("bad embedding modality byte");
    t.modality = static_cast<Modality>(modality);
    t.dim = r.get<uint32_t>();
    const auto rows = r.get<uint64_t>();
    for (uint64_t i = 0; i < rows; ++i) {
        const auto len = r.get<uint16_t>();
        std::string id = r.str(len);
        std::vector<float> v(t.dim);
        r.floats(v.data(), v.size());
        insert_row(t, std::move(id), std::move(v));
    }
    if (!r.done()) throw DataError("trailing bytes in embedding file");
    return t;
}

EmbeddingTable load_embeddings(const std::string& path, Modality jsonl_modality) {
    const std::string bytes = read_file(path);
    try {
        return parse_embeddings({reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size()}, jsonl_modality);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

std::string encode_embeddings(const EmbeddingTable& t) {
    std::string out(kEmbMagic, 8);
    auto put = [&out](const auto& v) { out.append(reinterpret_cast<const char*>(&v), sizeof(v)); };
    put(static_cast<uint8_t>(t.modality));
    put(t.dim);
    put(static_cast<uint64_t>(t.rows.size()));
    for (const auto& [id, v] : t.rows) {
        if (id.size() > 0xFFFF) throw DataError("query_id too long for embedding file: " + id.substr(0, 32));
        if (v.size() != t.dim) throw DataError("dimension mismatch for " + id);
        put(static_cast<uint16_t>(id.size()));
        out += id;
        out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
    }
    return out;
}

void save_embeddings(const EmbeddingTable& table, const std::string& path) {
    write_file_atomic(path, encode_embeddings(table));
}

// ---------------------------------------------------------------------------
// Statistics and assembly

std::string stats_text(const ResponseRecord& r) {
    if (r.input_text.empty()) return r.query_text;
    return r.query_text + " " + r.input_text;
}

StatsVector raw_stats(const TextStats& t, const ImageStats& im) {
    return {static_cast<double>(t.word_count),
            static_cast<double>(t.special_char_count),
            static_cast<double>(t.numeric_token_count),
            static_cast<double>(t.char_count),
            static_cast<double>(im.width),
            static_cast<double>(im.height),
            static_cast<double>(im.channels)};
}

StatsVector raw_stats(const ResponseRecord& r) { return raw_stats(text_stats(stats_text(r)), image_stats(r.image)); }

StatsVector Normalizer::transform(const StatsVector& raw) const {
    StatsVector out;
    for (std::size_t i = 0; i < kStatsDim; ++i) out[i] = (raw[i] - mean[i]) / stddev[i];
    return out;
}

StatsVector Normalizer::inverse(const StatsVector& z) const {
    StatsVector out;
    for (std::size_t i = 0; i < kStatsDim; ++i) out[i] = z[i] * stddev[i] + mean[i];
    return out;
}

Normalizer fit_normalizer(std::span<const StatsVector> rows) {
    if (rows.size() < 2) throw DataError("fit_normalizer needs at least 2 records");
    Normalizer n;
    const double count = static_cast<double>(rows.size());
    for (std::size_t d = 0; d < kStatsDim; ++d) {
        double sum = 0.0;
        for (const auto& r : rows) sum += r[d];
        const double mean = sum / count;
        double ss = 0.0;
        for (const auto& r : rows) ss += (r[d] - mean) * (r[d] - mean);
        const double sd = std::sqrt(ss / count);
        n.mean[d] = mean;
        n.stddev[d] = sd > 0.0 ? sd : 1.0;
    }
    return n;
}

ModalityMask ModalityMask::parse(std::string_view bits) {
    if (bits.size() != 3) throw RangeError("mask must be three bits like 111 (text,image,stats)");
    auto bit = [&](char c) {
        if (c == '1' || c == 't') return true;
        if (c == '0' || c == 'f') return false;
        throw RangeError("mask must be three bits like 111 (text,image,stats)");
    };
    return {bit(bits[0]), bit(bits[1]), bit(bits[2])};
}

std::string ModalityMask::str() const {
    return std::string{text ? '1' : '0', image ? '1' : '0', stats ? '1' : '0'};
}

FeatureBundle assemble(const ResponseRecord& record, const EmbeddingTables& tables, const Normalizer& normalizer,
                       ModalityMask mask, AssemblyCounters* counters) {
    FeatureBundle b;
    b.query_id = record.query_id;
    b.mask = mask;
    if (counters) ++counters->bundles;

    if (mask.text) {
        const std::vector<float>* v = tables.text ? tables.text->find(record.query_id) : nullptr;
        if (v) {
            b.e_text = *v;
        } else {
            b.mask.text = false;
            if (counters) ++counters->missing_text;
        }
    }
    if (mask.image) {
        if (!record.image) {
            b.mask.image = false;
        } else if (const std::vector<float>* v = tables.image ? tables.image->find(record.query_id) : nullptr) {
            b.e_image = *v;
        } else {
            b.mask.image = false;
            if (counters) ++counters->missing_image;
        }
    }
    b.stats = normalizer.transform(raw_stats(record));
    return b;
}

}  // namespace ecvl
