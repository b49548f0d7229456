#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "ecvl/error.hpp"
#include "ecvl/features.hpp"
#include "ecvl/rng.hpp"
#include "helpers.hpp"

using namespace ecvl;

namespace {

std::vector<uint8_t> png_header(uint32_t w, uint32_t h, uint8_t color_type) {
    std::vector<uint8_t> b{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n', 0, 0, 0, 13, 'I', 'H', 'D', 'R'};
    for (uint32_t v : {w, h})
        for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<uint8_t>(v >> s));
    b.push_back(8);
    b.push_back(color_type);
    b.insert(b.end(), {0, 0, 0, 0, 0, 0, 0});
    return b;
}

std::vector<uint8_t> jpeg_header(uint16_t w, uint16_t h, uint8_t components) {
    std::vector<uint8_t> b{0xFF, 0xD8, 0xFF, 0xE0, 0x00, 0x04, 0x00, 0x00};  // SOI + short APP0
    b.insert(b.end(), {0xFF, 0xC0, 0x00, static_cast<uint8_t>(8 + 3 * components), 8, static_cast<uint8_t>(h >> 8),
                       static_cast<uint8_t>(h), static_cast<uint8_t>(w >> 8), static_cast<uint8_t>(w), components});
    for (uint8_t c = 0; c < components; ++c) b.insert(b.end(), {static_cast<uint8_t>(c + 1), 0x11, 0});
    return b;
}

std::string base64(const std::vector<uint8_t>& in) {
    static const char* a = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    std::size_t i = 0;
    for (; i + 2 < in.size(); i += 3) {
        const uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
        for (int s = 18; s >= 0; s -= 6) out += a[(v >> s) & 63];
    }
    if (i + 1 == in.size()) {
        const uint32_t v = in[i] << 16;
        out += a[(v >> 18) & 63];
        out += a[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == in.size()) {
        const uint32_t v = (in[i] << 16) | (in[i + 1] << 8);
        out += a[(v >> 18) & 63];
        out += a[(v >> 12) & 63];
        out += a[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

std::span<const uint8_t> as_bytes(const std::string& s) { return {reinterpret_cast<const uint8_t*>(s.data()), s.size()}; }

}  // namespace

TEST_CASE("text_stats examples") {
    CHECK(text_stats("hello world 123!") == TextStats{3, 1, 0, 16});
    CHECK(text_stats("") == TextStats{});
    CHECK(text_stats("3.14 is pi").numeric_token_count == 1);
    CHECK(text_stats("1.2.3 12 .5 . x9").numeric_token_count == 2);
    CHECK(text_stats("  a\t\tb\n").word_count == 2);
}

TEST_CASE("text_stats counts code points") {
    const TextStats s = text_stats("caf\xc3\xa9 \xe2\x80\x94 \xf0\x9f\x98\x80");  // "café", an em dash, an emoji
    CHECK(s.char_count == 8);
    CHECK(s.word_count == 3);
    CHECK(s.special_char_count == 2);  // em dash and emoji; é is a letter
    // ideographic space separates words
    CHECK(text_stats("\xe4\xbd\xa0\xe3\x80\x80\xe5\xa5\xbd").word_count == 2);
}

TEST_CASE("text_stats is total over arbitrary bytes") {
    Rng rng(11);
    for (int i = 0; i < 2000; ++i) {
        std::string s(rng.below(64), '\0');
        for (auto& c : s) c = static_cast<char>(rng.below(256));
        const TextStats t = text_stats(s);
        CHECK(t.char_count <= s.size());
        CHECK(t.numeric_token_count <= t.word_count);
        CHECK(t.special_char_count <= t.char_count);
    }
    // a truncated multi-byte sequence counts each byte as one character
    CHECK(text_stats("\xe2\x80").char_count == 2);
}

TEST_CASE("image_stats from metadata") {
    CHECK(image_stats(ImageMeta{640, 480, 3, std::nullopt}) == ImageStats{640, 480, 3, true});
    CHECK(image_stats(std::nullopt) == ImageStats{0, 0, 0, false});
    CHECK_THROWS_AS(image_stats(ImageMeta{640, 480, 2, std::nullopt}), DataError);
}

TEST_CASE("image_stats from PNG and JPEG headers") {
    CHECK(image_stats_from_bytes(png_header(640, 480, 2), "a.png") == ImageStats{640, 480, 3, true});
    CHECK(image_stats_from_bytes(png_header(5, 7, 6), "a.png") == ImageStats{5, 7, 4, true});
    CHECK(image_stats_from_bytes(png_header(5, 7, 0), "a.png").channels == 1);
    CHECK(image_stats_from_bytes(png_header(5, 7, 4), "a.png").channels == 1);
    CHECK(image_stats_from_bytes(png_header(5, 7, 3), "a.png").channels == 3);
    CHECK(image_stats_from_bytes(jpeg_header(1024, 768, 3), "b.jpg") == ImageStats{1024, 768, 3, true});
    CHECK(image_stats_from_bytes(jpeg_header(32, 16, 1), "b.jpg").channels == 1);

    auto corrupt = png_header(5, 7, 2);
    corrupt.resize(20);
    try {
        image_stats_from_bytes(corrupt, "broken.png");
        FAIL("expected an error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("broken.png") != std::string::npos);
    }
    CHECK_THROWS_AS(image_stats_from_bytes(std::vector<uint8_t>{'G', 'I', 'F', '8'}, "x.gif"), DataError);
    CHECK_THROWS_AS(image_stats_from_file("/nonexistent/img.png"), DataError);

    testing::TempDir dir;
    const auto bytes = png_header(12, 34, 2);
    std::ofstream(dir / "i.png", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    CHECK(image_stats_from_file(dir / "i.png") == ImageStats{12, 34, 3, true});
}

TEST_CASE("base64") {
    const auto png = png_header(9, 9, 2);
    CHECK(base64_decode(base64(png)) == png);
    for (std::size_t n = 0; n < 8; ++n) {
        std::vector<uint8_t> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<uint8_t>(i * 37 + 1);
        CHECK(base64_decode(base64(v)) == v);
    }
    CHECK_THROWS_AS(base64_decode("ab$d"), DataError);
}

TEST_CASE("embedding binary round trip") {
    Rng rng(3);
    for (Modality m : {Modality::Text, Modality::Image}) {
        EmbeddingTable t{m, 5, {}};
        for (int i = 0; i < 40; ++i) {
            std::vector<float> v(5);
            for (auto& x : v) x = static_cast<float>(rng.normal());
            t.rows.emplace("q" + std::to_string(i) + "\xce\xbb", v);
        }
        const std::string bytes = encode_embeddings(t);
        CHECK(bytes.substr(0, 8) == "ECVLEMB1");
        CHECK(parse_embeddings(as_bytes(bytes)) == t);
        testing::TempDir dir;
        save_embeddings(t, dir / "t.emb");
        CHECK(load_embeddings(dir / "t.emb") == t);
    }
}

TEST_CASE("embedding validation") {
    EmbeddingTable t{Modality::Text, 4, {}};
    t.rows["a"] = {1, 2, 3, 4};
    t.rows["b"] = {5, 6, 7, 8};
    const std::string good = encode_embeddings(t);
    CHECK(parse_embeddings(as_bytes(good)).rows.size() == 2);

    SUBCASE("truncated") {
        CHECK_THROWS_AS(parse_embeddings(as_bytes(good.substr(0, good.size() - 3))), DataError);
    }
    SUBCASE("trailing bytes") {
        CHECK_THROWS_AS(parse_embeddings(as_bytes(good + "x")), DataError);
    }
    SUBCASE("bad magic") {
        std::string bad = good;
        bad[3] = 'X';
        CHECK_THROWS_AS(parse_embeddings(as_bytes(bad)), DataError);
    }
    SUBCASE("NaN value") {
        // row layout: u16 id length, id, dim floats; patch the third float of row "a"
        std::string enc = good;
        const float nan = std::numeric_limits<float>::quiet_NaN();
        const std::size_t header = 8 + 1 + 4 + 8;
        std::memcpy(enc.data() + header + 2 + 1 + 2 * 4, &nan, 4);
        CHECK_THROWS_AS(parse_embeddings(as_bytes(enc)), DataError);
    }
    SUBCASE("duplicate id") {
        std::string enc = good;
        const std::size_t header = 8 + 1 + 4 + 8;
        enc[header + (2 + 1 + 4 * 4) + 2] = 'a';  // second row id "b" -> "a"
        CHECK_THROWS_AS(parse_embeddings(as_bytes(enc)), DataError);
    }
}

TEST_CASE("embedding JSONL fallback") {
    const std::string rows = "{\"encoder\":\"mini\",\"pooling\":\"mean\"}\n"
                             "{\"query_id\":\"a\",\"vector\":[1,2,3,4]}\n"
                             "{\"query_id\":\"b\",\"vector\":[0.5,0,0,-1]}\n";
    const auto t = parse_embeddings(as_bytes(rows), Modality::Image);
    CHECK(t.modality == Modality::Image);
    CHECK(t.dim == 4);
    CHECK(t.rows.size() == 2);
    CHECK(t.find("b")->at(3) == -1.0f);
    CHECK(t.find("zz") == nullptr);

    CHECK_THROWS_AS(parse_embeddings(as_bytes(std::string("{\"query_id\":\"a\",\"vector\":[1,2,3,4]}\n"
                                                          "{\"query_id\":\"b\",\"vector\":[1,2,3,4,5]}\n"))),
                    DataError);
    CHECK_THROWS_AS(parse_embeddings(as_bytes(std::string("{\"query_id\":\"a\",\"vector\":[1,null]}\n"))), DataError);
    CHECK_THROWS_AS(parse_embeddings(as_bytes(std::string("{\"query_id\":\"a\",\"vector\":[1]}\n"
                                                          "{\"query_id\":\"a\",\"vector\":[2]}\n"))),
                    DataError);
}

TEST_CASE("normalizer") {
    std::vector<StatsVector> rows{{0, 5, 0, 0, 0, 0, 0}, {2, 5, 0, 0, 0, 0, 0}};
    const Normalizer n = fit_normalizer(rows);
    CHECK(n.mean[0] == 1.0);
    CHECK(n.stddev[0] == 1.0);
    CHECK(n.mean[1] == 5.0);
    CHECK(n.stddev[1] == 1.0);  // constant dimension
    CHECK_THROWS(fit_normalizer(std::vector<StatsVector>{rows[0]}));

    Rng rng(2);
    std::vector<StatsVector> many;
    for (int i = 0; i < 500; ++i) {
        StatsVector v;
        for (std::size_t k = 0; k < kStatsDim; ++k) v[k] = rng.uniform(0, 1000) * (k + 1);
        v[6] = 3;
        many.push_back(v);
    }
    const Normalizer m = fit_normalizer(many);
    StatsVector sum{}, sq{};
    for (const auto& v : many) {
        const StatsVector z = m.transform(v);
        const StatsVector back = m.inverse(z);
        for (std::size_t k = 0; k < kStatsDim; ++k) {
            CHECK(std::abs(back[k] - v[k]) <= 1e-9 * std::max(1.0, std::abs(v[k])));
            sum[k] += z[k];
            sq[k] += z[k] * z[k];
        }
    }
    for (std::size_t k = 0; k < kStatsDim; ++k) {
        const double mean = sum[k] / many.size();
        CHECK(std::abs(mean) < 1e-6);
        if (k != 6) CHECK(std::abs(std::sqrt(sq[k] / many.size() - mean * mean) - 1.0) < 1e-6);
    }
}

TEST_CASE("raw_stats uses query and input text") {
    ResponseRecord r;
    r.query_text = "Count the birds.";
    r.input_text = "Answer 3";
    r.image = ImageMeta{10, 20, 3, std::nullopt};
    CHECK(stats_text(r) == "Count the birds. Answer 3");
    const StatsVector v = raw_stats(r);
    CHECK(v == StatsVector{5, 1, 1, 25, 10, 20, 3});
    r.input_text.clear();
    CHECK(stats_text(r) == "Count the birds.");
}

TEST_CASE("assemble masks and counters") {
    EmbeddingTable text{Modality::Text, 2, {{"a", {1, 2}}, {"b", {3, 4}}}};
    EmbeddingTable image{Modality::Image, 3, {{"a", {1, 1, 1}}}};
    const EmbeddingTables tables{&text, &image};
    const Normalizer norm;
    auto with_image = *testing::record("a", 5, 6);
    with_image.image = ImageMeta{64, 64, 3, std::nullopt};

    AssemblyCounters c;
    const FeatureBundle full = assemble(with_image, tables, norm, ModalityMask{}, &c);
    CHECK(full.mask == ModalityMask{true, true, true});
    CHECK(full.e_text.has_value());
    CHECK(full.e_image.has_value());
    CHECK(full.stats[4] == 64.0);

    // no image at all: the image bit drops without counting as a missing embedding
    const FeatureBundle text_only = assemble(*testing::record("b", 5, 6), tables, norm, ModalityMask{}, &c);
    CHECK(text_only.mask == ModalityMask{true, false, true});
    CHECK(c.missing_image == 0);

    // image present but no embedding row: counted
    auto c_img = *testing::record("c", 5, 6);
    c_img.image = ImageMeta{8, 8, 1, std::nullopt};
    const FeatureBundle missing = assemble(c_img, tables, norm, ModalityMask{}, &c);
    CHECK(missing.mask == ModalityMask{false, false, true});
    CHECK(c.missing_text == 1);
    CHECK(c.missing_image == 1);
    CHECK(c.bundles == 3);
    CHECK(c.missing_rate() == doctest::Approx(2.0 / 3.0));

    const FeatureBundle stats_only = assemble(with_image, tables, norm, ModalityMask::parse("001"));
    CHECK(stats_only.mask == ModalityMask{false, false, true});
    CHECK_FALSE(stats_only.e_text.has_value());
    CHECK_FALSE(stats_only.e_image.has_value());
}

TEST_CASE("modality mask parsing") {
    CHECK(ModalityMask::parse("101") == ModalityMask{true, false, true});
    CHECK(ModalityMask::parse("011").str() == "011");
    CHECK_THROWS(ModalityMask::parse("11"));
    CHECK_THROWS(ModalityMask::parse("12a"));
}
