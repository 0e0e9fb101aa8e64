#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <functional>
#include <set>

#include "nef/dataset.hpp"
#include "nef/digest.hpp"
#include "nef/errors.hpp"
#include "nef/io.hpp"
#include "nef/rng.hpp"
#include "nef/version.hpp"

using namespace nef;
namespace fs = std::filesystem;

namespace {

NeuralDataset sample_dataset(std::size_t n = 3)
{
    NeuralDataset ds;
    ds.config = NefConfig::siren(2, 1, 8, 3, 30.0);
    ds.params = init_params<float>(ds.config, n, 4, InitMode::random);
    for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(static_cast<std::uint16_t>(i % 2));
    ds.class_names = {"zero", "one"};
    ds.provenance.fit_options = {{"steps", 10}, {"lr", 1e-3}};
    ds.provenance.signal_hash = std::string(64, 'a');
    ds.provenance.library_version = kLibraryVersion;
    ds.provenance.creation_seed = 99;
    ds.metrics.push_back({"final_loss", std::vector<float>(n, 0.125f)});
    ds.metrics.push_back({"psnr_on", std::vector<float>(n, 31.5f)});
    return ds;
}

// Re-encodes a header with one field changed and a valid checksum.
std::vector<std::byte> with_header(const std::vector<std::byte>& bytes, const std::function<void(nlohmann::json&)>& edit)
{
    le::Reader r(bytes, "h");
    r.take(4);
    const std::uint32_t len = r.u32();
    auto h = nlohmann::json::parse(std::string(reinterpret_cast<const char*>(bytes.data() + 8), len));
    edit(h);
    const std::string text = h.dump();
    std::vector<std::byte> out(bytes.begin(), bytes.begin() + 4);
    le::put_u32(out, static_cast<std::uint32_t>(text.size()));
    const std::size_t begin = out.size();
    for (char c : text) out.push_back(static_cast<std::byte>(c));
    le::put_u32(out, crc32(std::span<const std::byte>(out).subspan(begin)));
    out.insert(out.end(), bytes.begin() + 8 + len + 4, bytes.end());
    return out;
}

} // namespace

TEST_CASE("round trip is bit-identical")
{
    const auto ds = sample_dataset();
    const auto path = fs::temp_directory_path() / "nef_roundtrip.nfd";
    write_dataset(ds, path);
    const auto back = read_dataset(path);
    CHECK(back == ds);
    CHECK(encode_dataset(back) == read_file(path));
    CHECK(read_dataset_header(path)["n"] == 3);
    CHECK(dataset_digests(back).params == dataset_digests(ds).params);
}

TEST_CASE("corruption is detected and named")
{
    const auto bytes = encode_dataset(sample_dataset());
    le::Reader r(bytes, "h");
    r.take(4);
    const std::size_t header_len = r.u32();
    const std::size_t params_at = 8 + header_len + 4;
    auto bad = bytes;
    bad[params_at + 5] ^= std::byte{0x01};
    try {
        decode_dataset(bad);
        FAIL("expected a CRC error");
    } catch (const FormatError& e) {
        CHECK(e.section() == "params");
        CHECK(std::string(e.what()).find("CRC") != std::string::npos);
    }
    bad = bytes;
    bad[bad.size() - 6] ^= std::byte{0x80};
    try {
        decode_dataset(bad);
        FAIL("expected a CRC error");
    } catch (const FormatError& e) {
        CHECK(e.section() == "metric:psnr_on");
    }

    Stream rng(1, 1);
    int detected = 0;
    for (int k = 0; k < 200; ++k) {
        auto c = bytes;
        const std::size_t at = rng.below(c.size());
        c[at] ^= static_cast<std::byte>(1 + rng.below(255));
        try {
            decode_dataset(c);
        } catch (const DataError&) {
            ++detected;
        }
    }
    CHECK(detected == 200);
    auto trunc = bytes;
    trunc.pop_back();
    CHECK_THROWS_AS(decode_dataset(trunc), FormatError);
    auto extra = bytes;
    extra.push_back(std::byte{0});
    CHECK_THROWS_AS(decode_dataset(extra), FormatError);
}

TEST_CASE("structural header errors")
{
    const auto bytes = encode_dataset(sample_dataset());
    CHECK_NOTHROW(decode_dataset(with_header(bytes, [](nlohmann::json&) {})));
    try {
        decode_dataset(with_header(bytes, [](nlohmann::json& h) { h["param_dim"] = 104; }));
        FAIL("expected a structural error");
    } catch (const FormatError& e) {
        CHECK(e.section() == "header");
        CHECK(std::string(e.what()).find("param_dim") != std::string::npos);
    }
    try {
        decode_dataset(with_header(bytes, [](nlohmann::json& h) { h["format_version"] = 2; }));
        FAIL("expected a version error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
    auto magic = bytes;
    magic[3] = std::byte{'2'};
    CHECK_THROWS_AS(decode_dataset(magic), FormatError);
}

TEST_CASE("splits")
{
    SplitSpec spec;
    spec.seed = 5;
    const auto a = split(100, spec);
    const auto b = split(100, spec);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);
    CHECK(a.val.size() == 10);
    CHECK(a.test.size() == 10);
    std::set<std::size_t> all;
    for (const auto* v : {&a.train, &a.val, &a.test}) all.insert(v->begin(), v->end());
    CHECK(all.size() == 100);
    CHECK(*all.rbegin() == 99);

    SplitSpec degenerate{1.0, 0.0, 0.0, 0};
    CHECK_THROWS_AS(split(10, degenerate), ConfigError);
    CHECK_NOTHROW(split(5, degenerate));
    SplitSpec off{0.5, 0.2, 0.2, 0};
    CHECK_THROWS_AS(split(20, off), ConfigError);

    for (std::size_t n = 10; n < 60; ++n) {
        const auto s = split(n, SplitSpec{});
        CHECK(!s.train.empty());
        CHECK(!s.val.empty());
        CHECK(!s.test.empty());
        CHECK(s.train.size() + s.val.size() + s.test.size() == n);
    }
    SplitSpec other = spec;
    other.seed = 6;
    CHECK(split(100, other).val != a.val);
}

TEST_CASE("validation")
{
    auto ds = sample_dataset();
    ds.labels[0] = 7;
    CHECK_THROWS_AS(ds.validate(), DataError);
    ds = sample_dataset();
    ds.metrics[0].values.pop_back();
    CHECK_THROWS_AS(encode_dataset(ds), DataError);
}
