#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nef/config.hpp"
#include "nef/params.hpp"

namespace nef {

struct Provenance {
    nlohmann::json fit_options = nlohmann::json::object();
    std::string signal_hash;
    std::string library_version;
    std::uint64_t creation_seed = 0;
    ScalarMode fit_scalar_mode = ScalarMode::f32; // parameters are stored as f32 either way
    nlohmann::json extra = nlohmann::json::object();

    bool operator==(const Provenance&) const = default;
};

nlohmann::json to_json(const Provenance& p);
Provenance provenance_from_json(const nlohmann::json& j);

// One f32 value per NeF (final loss, on/off-grid PSNR or IOU, ...).
struct MetricBlock {
    std::string name;
    std::vector<float> values;

    bool operator==(const MetricBlock&) const = default;
};

struct NeuralDataset {
    NefConfig config;
    ParamBatch<float> params;
    std::vector<std::uint16_t> labels;
    std::vector<std::string> class_names;
    Provenance provenance;
    std::vector<MetricBlock> metrics;

    std::size_t size() const noexcept { return params.n_nefs; }
    const MetricBlock* metric(std::string_view name) const;
    // Throws DataError on any inconsistency between the parts.
    void validate() const;
    bool operator==(const NeuralDataset& o) const;
};

// "NFD1" | u32 header_len | JSON header | u32 crc | f32 params | u32 crc |
// u16 labels | u32 crc | { f32 metric block | u32 crc }* ; little-endian, CRC-32 per section.
std::vector<std::byte> encode_dataset(const NeuralDataset& ds);
NeuralDataset decode_dataset(std::span<const std::byte> bytes, const std::string& name = "dataset");
void write_dataset(const NeuralDataset& ds, const std::filesystem::path& path);
NeuralDataset read_dataset(const std::filesystem::path& path);
// Header JSON only (magic, length and header checksum verified).
nlohmann::json read_dataset_header(const std::filesystem::path& path);

struct SectionDigests {
    std::string params;  // SHA-256 of the f32 little-endian parameter payload
    std::string labels;  // SHA-256 of the u16 little-endian label payload
    std::string file;    // SHA-256 of the whole file image
};
SectionDigests dataset_digests(const NeuralDataset& ds);

struct SplitSpec {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
    std::uint64_t seed = 0;

    // Fractions must be >= 0 and sum to 1; all three must be positive once n >= 10.
    void validate(std::size_t n) const;
};

struct Split {
    std::vector<std::size_t> train, val, test;
};

// Indices are ordered by key(i) = splitmix64(splitmix64(seed) ^ i), ties by i.
// n_val = round(val * n), n_test = round(test * n) (at least 1 each when the
// fraction is positive), train takes the rest; the first n_train ordered indices
// are train, the next n_val val, the remainder test. Each set is returned sorted.
Split split(std::size_t n, const SplitSpec& spec);
Split split(const NeuralDataset& ds, const SplitSpec& spec);
nlohmann::json to_json(const Split& s);

} // namespace nef
