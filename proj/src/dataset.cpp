#include "nef/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

#include "nef/digest.hpp"
#include "nef/errors.hpp"
#include "nef/io.hpp"
#include "nef/rng.hpp"
#include "nef/version.hpp"

namespace nef {

using json = nlohmann::json;

json to_json(const Provenance& p)
{
    return json{{"fit_options", p.fit_options},
                {"signal_hash", p.signal_hash},
                {"library_version", p.library_version},
                {"creation_seed", p.creation_seed},
                {"fit_scalar_mode", std::string(to_string(p.fit_scalar_mode))},
                {"extra", p.extra}};
}

Provenance provenance_from_json(const json& j)
{
    try {
        Provenance p;
        p.fit_options = j.at("fit_options");
        p.signal_hash = j.at("signal_hash").get<std::string>();
        p.library_version = j.at("library_version").get<std::string>();
        p.creation_seed = j.at("creation_seed").get<std::uint64_t>();
        p.fit_scalar_mode = parse_scalar_mode(j.at("fit_scalar_mode").get<std::string>());
        p.extra = j.value("extra", json::object());
        return p;
    } catch (const json::exception& e) {
        throw FormatError("header", std::string("invalid provenance: ") + e.what());
    }
}

const MetricBlock* NeuralDataset::metric(std::string_view name) const
{
    for (const auto& m : metrics) {
        if (m.name == name) return &m;
    }
    return nullptr;
}

void NeuralDataset::validate() const
{
    config.validate();
    if (!(params.config == config)) throw DataError("dataset: parameter batch config differs from dataset config");
    if (params.param_dim != param_layout(config).param_dim) throw DataError("dataset: param_dim does not match the layout");
    if (params.values.size() != params.n_nefs * params.param_dim) throw DataError("dataset: parameter payload has wrong size");
    if (labels.size() != params.n_nefs) throw DataError("dataset: label count does not match NeF count");
    for (auto l : labels) {
        if (l >= class_names.size()) throw DataError("dataset: label " + std::to_string(l) + " has no class name");
    }
    std::set<std::string> names;
    for (const auto& m : metrics) {
        if (m.name.empty() || !names.insert(m.name).second) throw DataError("dataset: metric names must be unique and non-empty");
        if (m.values.size() != params.n_nefs) throw DataError("dataset: metric '" + m.name + "' has wrong length");
    }
}

bool NeuralDataset::operator==(const NeuralDataset& o) const
{
    auto same_bits = [](const std::vector<float>& a, const std::vector<float>& b) {
        return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
    };
    if (!(config == o.config) || params.n_nefs != o.params.n_nefs || params.param_dim != o.params.param_dim) return false;
    if (!same_bits(params.values, o.params.values)) return false;
    if (labels != o.labels || class_names != o.class_names || !(provenance == o.provenance)) return false;
    if (metrics.size() != o.metrics.size()) return false;
    for (std::size_t i = 0; i < metrics.size(); ++i) {
        if (metrics[i].name != o.metrics[i].name || !same_bits(metrics[i].values, o.metrics[i].values)) return false;
    }
    return true;
}

namespace {

constexpr std::string_view kMagic = "NFD1";

json header_json(const NeuralDataset& ds)
{
    json metrics = json::array();
    for (const auto& m : ds.metrics) metrics.push_back(m.name);
    return json{{"format_version", kDatasetFormatVersion},
                {"config", to_json(ds.config)},
                {"n", ds.size()},
                {"param_dim", ds.params.param_dim},
                {"dtype", "f32"},
                {"endianness", "little"},
                {"class_names", ds.class_names},
                {"provenance", to_json(ds.provenance)},
                {"metrics", metrics}};
}

void put_section_crc(std::vector<std::byte>& out, std::size_t begin)
{
    const auto crc = crc32(std::span<const std::byte>(out).subspan(begin));
    le::put_u32(out, crc);
}

// Reads `size` bytes of section `name` followed by its CRC.
std::span<const std::byte> checked_section(le::Reader& r, std::size_t size, const std::string& name, const std::string& file)
{
    r.set_section(name);
    if (r.remaining() < size + 4) throw FormatError(name, file + ": truncated " + name + " section");
    const auto data = r.take(size);
    if (crc32(data) != r.u32()) throw FormatError(name, file + ": CRC mismatch in " + name + " section");
    return data;
}

} // namespace

std::vector<std::byte> encode_dataset(const NeuralDataset& ds)
{
    ds.validate();
    std::vector<std::byte> out;
    for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
    const std::string header = header_json(ds).dump();
    le::put_u32(out, static_cast<std::uint32_t>(header.size()));
    std::size_t begin = out.size();
    for (char c : header) out.push_back(static_cast<std::byte>(c));
    put_section_crc(out, begin);

    begin = out.size();
    for (float v : ds.params.values) le::put_f32(out, v);
    put_section_crc(out, begin);

    begin = out.size();
    for (auto l : ds.labels) le::put_u16(out, l);
    put_section_crc(out, begin);

    for (const auto& m : ds.metrics) {
        begin = out.size();
        for (float v : m.values) le::put_f32(out, v);
        put_section_crc(out, begin);
    }
    return out;
}

NeuralDataset decode_dataset(std::span<const std::byte> bytes, const std::string& file)
{
    le::Reader r(bytes, "magic");
    const auto magic = r.take(4);
    for (std::size_t i = 0; i < 4; ++i) {
        if (std::to_integer<char>(magic[i]) != kMagic[i]) throw FormatError("magic", file + ": not a neural dataset (bad magic)");
    }
    r.set_section("header");
    const std::uint32_t header_len = r.u32();
    const auto hbytes = checked_section(r, header_len, "header", file);
    json h;
    try {
        h = json::parse(std::string(reinterpret_cast<const char*>(hbytes.data()), hbytes.size()));
    } catch (const json::exception& e) {
        throw FormatError("header", file + ": header is not valid JSON");
    }

    NeuralDataset ds;
    std::size_t n = 0, param_dim = 0;
    std::vector<std::string> metric_names;
    try {
        const int version = h.at("format_version").get<int>();
        if (version != kDatasetFormatVersion) {
            throw FormatError("header", file + ": unsupported format version " + std::to_string(version) + " (expected " +
                                            std::to_string(kDatasetFormatVersion) + ")");
        }
        if (h.at("dtype") != "f32" || h.at("endianness") != "little") throw FormatError("header", file + ": unsupported payload encoding");
        try {
            ds.config = config_from_json(h.at("config"));
        } catch (const ConfigError& e) {
            throw FormatError("header", file + ": invalid NeF config: " + e.what());
        }
        n = h.at("n").get<std::size_t>();
        param_dim = h.at("param_dim").get<std::size_t>();
        ds.class_names = h.at("class_names").get<std::vector<std::string>>();
        ds.provenance = provenance_from_json(h.at("provenance"));
        metric_names = h.at("metrics").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw FormatError("header", file + ": malformed header: " + e.what());
    }
    const std::size_t expected_dim = param_layout(ds.config).param_dim;
    if (param_dim != expected_dim) {
        throw FormatError("header", file + ": header param_dim " + std::to_string(param_dim) + " disagrees with the config layout (" +
                                        std::to_string(expected_dim) + ")");
    }
    const unsigned __int128 need = static_cast<unsigned __int128>(n) * (4 * param_dim + 2 + 4 * metric_names.size()) +
                                   4 * (2 + metric_names.size());
    if (need != r.remaining()) throw FormatError("payload", file + ": payload size does not match the header");

    ds.params = ParamBatch<float>(ds.config, n);
    {
        const auto data = checked_section(r, 4 * n * param_dim, "params", file);
        le::Reader pr(data, "params");
        for (auto& v : ds.params.values) v = pr.f32();
    }
    {
        const auto data = checked_section(r, 2 * n, "labels", file);
        le::Reader lr(data, "labels");
        ds.labels.resize(n);
        for (auto& l : ds.labels) l = lr.u16();
    }
    for (const auto& name : metric_names) {
        const auto data = checked_section(r, 4 * n, "metric:" + name, file);
        le::Reader mr(data, name);
        MetricBlock m{name, std::vector<float>(n)};
        for (auto& v : m.values) v = mr.f32();
        ds.metrics.push_back(std::move(m));
    }
    if (r.remaining() != 0) throw FormatError("payload", file + ": trailing bytes after the last section");
    try {
        ds.validate();
    } catch (const DataError& e) {
        throw FormatError("payload", file + ": " + e.what());
    }
    return ds;
}

void write_dataset(const NeuralDataset& ds, const std::filesystem::path& path) { write_file(path, encode_dataset(ds)); }

NeuralDataset read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path), path.string()); }

json read_dataset_header(const std::filesystem::path& path)
{
    const auto bytes = read_file(path);
    const std::string file = path.string();
    le::Reader r(bytes, "magic");
    const auto magic = r.take(4);
    for (std::size_t i = 0; i < 4; ++i) {
        if (std::to_integer<char>(magic[i]) != kMagic[i]) throw FormatError("magic", file + ": not a neural dataset (bad magic)");
    }
    r.set_section("header");
    const auto hbytes = checked_section(r, r.u32(), "header", file);
    try {
        return json::parse(std::string(reinterpret_cast<const char*>(hbytes.data()), hbytes.size()));
    } catch (const json::exception&) {
        throw FormatError("header", file + ": header is not valid JSON");
    }
}

SectionDigests dataset_digests(const NeuralDataset& ds)
{
    std::vector<std::byte> p, l;
    for (float v : ds.params.values) le::put_f32(p, v);
    for (auto x : ds.labels) le::put_u16(l, x);
    return {sha256_hex(p), sha256_hex(l), sha256_hex(encode_dataset(ds))};
}

void SplitSpec::validate(std::size_t n) const
{
    for (double f : {train, val, test}) {
        if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
    }
    if (std::fabs(train + val + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
    if (n >= 10 && (train == 0.0 || val == 0.0 || test == 0.0)) {
        throw ConfigError("every split must be non-empty for datasets of 10 or more NeFs");
    }
}

Split split(std::size_t n, const SplitSpec& spec)
{
    spec.validate(n);
    const std::uint64_t base = splitmix64(spec.seed);
    std::vector<std::pair<std::uint64_t, std::size_t>> keyed(n);
    for (std::size_t i = 0; i < n; ++i) keyed[i] = {splitmix64(base ^ static_cast<std::uint64_t>(i)), i};
    std::sort(keyed.begin(), keyed.end());

    auto count = [n](double f) -> std::size_t {
        if (f <= 0.0) return 0;
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 0.5)));
    };
    std::size_t n_val = std::min(count(spec.val), n);
    std::size_t n_test = std::min(count(spec.test), n - n_val);
    const std::size_t n_train = n - n_val - n_test;

    Split s;
    for (std::size_t k = 0; k < n; ++k) {
        auto& dst = k < n_train ? s.train : (k < n_train + n_val ? s.val : s.test);
        dst.push_back(keyed[k].second);
    }
    for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
    return s;
}

Split split(const NeuralDataset& ds, const SplitSpec& spec) { return split(ds.size(), spec); }

json to_json(const Split& s) { return json{{"train", s.train}, {"val", s.val}, {"test", s.test}}; }

} // namespace nef
