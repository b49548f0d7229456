#include <bit>
#include <cstring>

#include <zlib.h>

#include "ecvl/error.hpp"
#include "ecvl/training.hpp"

namespace ecvl {

namespace {

constexpr char kMagic[8] = {'E', 'C', 'V', 'L', 'R', 'T', 'R', '1'};

static_assert(std::endian::native == std::endian::little, "model I/O assumes a little-endian host");

class Writer {
public:
    template <typename T>
    void put(T v) {
        out_.append(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void str(std::string_view s) {
        if (s.size() > 0xFFFF) throw RangeError("string too long for model file");
        put(static_cast<uint16_t>(s.size()));
        out_.append(s);
    }
    void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
    std::string& bytes() { return out_; }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view b) : b_(b) {}
    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, b_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string str() {
        const auto n = get<uint16_t>();
        need(n);
        std::string s(b_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    void raw(void* p, std::size_t n) {
        need(n);
        std::memcpy(p, b_.data() + pos_, n);
        pos_ += n;
    }
    bool done() const { return pos_ == b_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > b_.size()) throw FormatError("model payload truncated");
    }
    std::string_view b_;
    std::size_t pos_ = 0;
};

uint32_t crc32_of(std::string_view data) {
    uLong c = crc32(0L, Z_NULL, 0);
    c = crc32(c, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size()));
    return static_cast<uint32_t>(c);
}

std::string encode_payload(const RouterState& s) {
    Writer w;
    w.put<uint32_t>(s.format_version);
    const Architecture& a = s.model.arch();
    w.put<uint8_t>(static_cast<uint8_t>(a.variant));
    w.put<uint32_t>(a.text_dim);
    w.put<uint32_t>(a.image_dim);
    w.put<uint32_t>(a.model_dim);
    w.put<uint32_t>(a.layers);
    w.put<uint32_t>(a.heads);
    w.put<uint32_t>(a.ffn_dim);
    w.put<double>(a.dropout);
    w.put<uint32_t>(static_cast<uint32_t>(a.mlp_hidden.size()));
    for (auto h : a.mlp_hidden) w.put<uint32_t>(h);
    w.put<uint32_t>(a.mf_rank);

    w.str(s.scenario.name);
    w.put<double>(s.scenario.mes);
    w.put<double>(s.scenario.alpha);
    w.put<double>(s.scenario.beta);
    w.put<double>(s.scenario.gamma);
    w.put<double>(s.tau);
    w.put<uint8_t>(s.calibrated ? 1 : 0);

    for (double m : s.normalizer.mean) w.put<double>(m);
    for (double d : s.normalizer.stddev) w.put<double>(d);
    w.put<uint8_t>(static_cast<uint8_t>((s.mask.text ? 1 : 0) | (s.mask.image ? 2 : 0) | (s.mask.stats ? 4 : 0)));
    w.str(s.edge_model);
    w.str(s.cloud_model);
    w.str(s.strategy);

    w.put<uint32_t>(static_cast<uint32_t>(s.history.size()));
    for (const auto& h : s.history) {
        w.put<uint32_t>(h.epoch);
        w.put<double>(h.loss);
        w.put<double>(h.tau);
        w.put<double>(h.rcs);
    }

    const auto& params = s.model.params();
    w.put<uint32_t>(static_cast<uint32_t>(params.size()));
    for (const auto& t : params) {
        w.str(t.name);
        w.put<uint32_t>(static_cast<uint32_t>(t.shape.size()));
        for (auto d : t.shape) w.put<uint32_t>(d);
        w.raw(t.value.data(), t.value.size() * sizeof(float));
    }
    return std::move(w.bytes());
}

}  // namespace

std::string encode_state(const RouterState& s) {
    std::string payload = encode_payload(s);
    std::string out(kMagic, sizeof(kMagic));
    out += payload;
    const uint32_t crc = crc32_of(payload);
    out.append(reinterpret_cast<const char*>(&crc), sizeof(crc));
    return out;
}

uint32_t state_checksum(const RouterState& s) { return crc32_of(encode_payload(s)); }

RouterState decode_state(std::string_view bytes) {
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw FormatError("unsupported model version: bad magic (expected ECVLRTR1)");
    if (bytes.size() < sizeof(kMagic) + 4) throw FormatError("model checksum mismatch: file truncated");
    const std::string_view payload = bytes.substr(sizeof(kMagic), bytes.size() - sizeof(kMagic) - 4);
    uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    if (crc32_of(payload) != stored) throw FormatError("model checksum mismatch (truncated or corrupt file)");

    Reader r(payload);
    const auto version = r.get<uint32_t>();
    if (version != kStateFormatVersion)
        throw FormatError("unsupported model format_version " + std::to_string(version));
    Architecture a;
    const auto variant = r.get<uint8_t>();
    if (variant > 2) throw FormatError("unknown model variant tag");
    a.variant = static_cast<Variant>(variant);
    a.text_dim = r.get<uint32_t>();
    a.image_dim = r.get<uint32_t>();
    a.model_dim = r.get<uint32_t>();
    a.layers = r.get<uint32_t>();
    a.heads = r.get<uint32_t>();
    a.ffn_dim = r.get<uint32_t>();
    a.dropout = r.get<double>();
    a.mlp_hidden.resize(r.get<uint32_t>());
    for (auto& h : a.mlp_hidden) h = r.get<uint32_t>();
    a.mf_rank = r.get<uint32_t>();

    RouterState s{RouterModel(a, 0)};
    s.format_version = version;
    s.scenario.name = r.str();
    s.scenario.mes = r.get<double>();
    s.scenario.alpha = r.get<double>();
    s.scenario.beta = r.get<double>();
    s.scenario.gamma = r.get<double>();
    s.tau = r.get<double>();
    s.calibrated = r.get<uint8_t>() != 0;
    for (double& m : s.normalizer.mean) m = r.get<double>();
    for (double& d : s.normalizer.stddev) d = r.get<double>();
    const auto mask = r.get<uint8_t>();
    s.mask = {(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0};
    s.edge_model = r.str();
    s.cloud_model = r.str();
    s.strategy = r.str();

    s.history.resize(r.get<uint32_t>());
    for (auto& h : s.history) {
        h.epoch = r.get<uint32_t>();
        h.loss = r.get<double>();
        h.tau = r.get<double>();
        h.rcs = r.get<double>();
    }

    const auto count = r.get<uint32_t>();
    if (count != s.model.params().size()) throw FormatError("model tensor count does not match its architecture");
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str();
        Tensor<float>* t = s.model.find(name);
        if (!t) throw FormatError("unexpected tensor '" + name + "'");
        std::vector<uint32_t> shape(r.get<uint32_t>());
        for (auto& d : shape) d = r.get<uint32_t>();
        if (shape != t->shape) throw FormatError("shape mismatch for tensor '" + name + "'");
        r.raw(t->value.data(), t->value.size() * sizeof(float));
    }
    if (!r.done()) throw FormatError("trailing bytes in model payload");
    return s;
}

void save_state(const RouterState& state, const std::string& path) { write_file_atomic(path, encode_state(state)); }

RouterState load_state(const std::string& path) {
    const std::string bytes = read_file(path);
    try {
        return decode_state(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

}  // namespace ecvl
