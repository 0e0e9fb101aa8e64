#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nef/signals.hpp"

namespace nef {

enum class ImageFormat { pgm, ppm, raw_tensor };
ImageFormat parse_image_format(std::string_view name);

// Sidecar CSV with header row `filename,label_id`.
std::map<std::string, int> read_label_csv(const std::filesystem::path& path);
void write_label_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, int>>& rows);

// pgm/ppm: `path` is a directory of .pgm / .ppm files (sorted by name) with a
// labels.csv sidecar. raw_tensor: `path` is a .nim file whose sidecar is
// `<path>.labels.csv`, keyed by zero-based image index.
SignalBatch load_images(const std::filesystem::path& path, ImageFormat format);

// Netpbm (P2/P3 ASCII, P5/P6 binary, maxval up to 65535). Values scaled to [0, 1].
struct NetpbmImage {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> values;
};
NetpbmImage read_netpbm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, int height, int width, std::span<const std::uint16_t> pixels, int maxval);

// raw tensor "NIM1": u32 n, H, W, C (little-endian), f32 data, CRC-32 of all preceding bytes.
void write_raw_tensor(const std::filesystem::path& path, const SignalBatch& images);
SignalBatch read_raw_tensor(const std::filesystem::path& path);

// point-occupancy "NPT1": u32 n, P, d, f32 coords, u8 occ, u16 labels, CRC-32 of all preceding bytes.
void write_points(const std::filesystem::path& path, const SignalBatch& points);
SignalBatch load_points(const std::filesystem::path& path);

// Little-endian byte helpers shared by the binary formats.
namespace le {
void put_u16(std::vector<std::byte>& out, std::uint16_t v);
void put_u32(std::vector<std::byte>& out, std::uint32_t v);
void put_f32(std::vector<std::byte>& out, float v);

class Reader {
public:
    Reader(std::span<const std::byte> bytes, std::string section) : bytes_(bytes), section_(std::move(section)) {}
    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    float f32();
    std::span<const std::byte> take(std::size_t n);
    std::size_t position() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    void set_section(std::string s) { section_ = std::move(s); }

private:
    std::span<const std::byte> bytes_;
    std::string section_;
    std::size_t pos_ = 0;
};
} // namespace le

std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes);

} // namespace nef
