#include "nef/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <fstream>
#include <sstream>

#include "nef/digest.hpp"
#include "nef/errors.hpp"

namespace nef {

namespace fs = std::filesystem;

ImageFormat parse_image_format(std::string_view name)
{
    if (name == "pgm") return ImageFormat::pgm;
    if (name == "ppm") return ImageFormat::ppm;
    if (name == "raw_tensor" || name == "nim") return ImageFormat::raw_tensor;
    throw ConfigError("unknown image format '" + std::string(name) + "'");
}

std::vector<std::byte> read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<std::byte> bytes(size);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!in) throw DataError("cannot read '" + path.string() + "'");
    return bytes;
}

void write_file(const fs::path& path, std::span<const std::byte> bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot create '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("cannot write '" + path.string() + "'");
}

namespace le {

void put_u16(std::vector<std::byte>& out, std::uint16_t v)
{
    out.push_back(static_cast<std::byte>(v & 0xff));
    out.push_back(static_cast<std::byte>(v >> 8));
}

void put_u32(std::vector<std::byte>& out, std::uint32_t v)
{
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::byte>((v >> s) & 0xff));
}

void put_f32(std::vector<std::byte>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::span<const std::byte> Reader::take(std::size_t n)
{
    if (remaining() < n) {
        throw FormatError(section_, "truncated file: " + section_ + " needs " + std::to_string(n) + " bytes, " +
                                        std::to_string(remaining()) + " left");
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
}

std::uint8_t Reader::u8() { return std::to_integer<std::uint8_t>(take(1)[0]); }

std::uint16_t Reader::u16()
{
    auto b = take(2);
    return static_cast<std::uint16_t>(std::to_integer<unsigned>(b[0]) | (std::to_integer<unsigned>(b[1]) << 8));
}

std::uint32_t Reader::u32()
{
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | std::to_integer<std::uint32_t>(b[static_cast<std::size_t>(i)]);
    return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }

} // namespace le

// ---- labels -----------------------------------------------------------------

namespace {

std::string trim(std::string s)
{
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

} // namespace

std::map<std::string, int> read_label_csv(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot open label file '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("label file '" + path.string() + "' is empty");
    if (trim(line) != "filename,label_id") throw DataError("label file '" + path.string() + "' lacks the filename,label_id header");
    std::map<std::string, int> labels;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected filename,label_id");
        const std::string name = trim(line.substr(0, comma));
        const std::string value = trim(line.substr(comma + 1));
        int label = 0;
        try {
            std::size_t used = 0;
            label = std::stoi(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
        } catch (const std::exception&) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": invalid label '" + value + "'");
        }
        if (label < 0 || label > 65535) throw DataError(path.string() + ":" + std::to_string(line_no) + ": label out of range");
        if (!labels.emplace(name, label).second) throw DataError(path.string() + ": duplicate entry for '" + name + "'");
    }
    return labels;
}

void write_label_csv(const fs::path& path, const std::vector<std::pair<std::string, int>>& rows)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot create '" + path.string() + "'");
    out << "filename,label_id\n";
    for (const auto& [name, label] : rows) out << name << ',' << label << '\n';
}

namespace {

void assign_classes(SignalBatch& batch, const std::vector<int>& labels)
{
    int max_label = -1;
    for (int l : labels) max_label = std::max(max_label, l);
    batch.labels.assign(labels.begin(), labels.end());
    batch.class_names.clear();
    for (int c = 0; c <= max_label; ++c) batch.class_names.push_back(std::to_string(c));
}

// ---- netpbm -----------------------------------------------------------------

class PnmTokenizer {
public:
    PnmTokenizer(std::span<const std::byte> bytes, std::string file) : bytes_(bytes), file_(std::move(file)) {}

    long next_int()
    {
        skip_space_and_comments();
        std::size_t start = pos_;
        while (pos_ < bytes_.size() && std::isdigit(ch(pos_))) ++pos_;
        if (start == pos_) throw DataError(file_ + ": malformed netpbm header");
        return std::stol(std::string(reinterpret_cast<const char*>(bytes_.data()) + start, pos_ - start));
    }

    // Exactly one whitespace byte separates the header from binary data.
    void end_header()
    {
        if (pos_ >= bytes_.size() || !std::isspace(ch(pos_))) throw DataError(file_ + ": malformed netpbm header");
        ++pos_;
    }

    std::size_t position() const noexcept { return pos_; }

private:
    unsigned char ch(std::size_t i) const { return std::to_integer<unsigned char>(bytes_[i]); }

    void skip_space_and_comments()
    {
        while (pos_ < bytes_.size()) {
            if (std::isspace(ch(pos_))) {
                ++pos_;
            } else if (ch(pos_) == '#') {
                while (pos_ < bytes_.size() && ch(pos_) != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    std::span<const std::byte> bytes_;
    std::string file_;
    std::size_t pos_ = 0;
};

} // namespace

NetpbmImage read_netpbm(const fs::path& path)
{
    const auto bytes = read_file(path);
    const std::string file = path.string();
    if (bytes.size() < 2 || std::to_integer<char>(bytes[0]) != 'P') throw DataError(file + ": not a netpbm file");
    const char kind = std::to_integer<char>(bytes[1]);
    if (kind != '2' && kind != '3' && kind != '5' && kind != '6') throw DataError(file + ": unsupported netpbm variant");
    const bool ascii = kind == '2' || kind == '3';
    const int channels = (kind == '3' || kind == '6') ? 3 : 1;

    PnmTokenizer tok{std::span<const std::byte>(bytes).subspan(2), file};
    const long width = tok.next_int();
    const long height = tok.next_int();
    const long maxval = tok.next_int();
    if (width < 1 || height < 1 || width > 65536 || height > 65536) throw DataError(file + ": invalid image dimensions");
    if (maxval < 1 || maxval > 65535) throw DataError(file + ": invalid maxval");

    NetpbmImage img;
    img.height = static_cast<int>(height);
    img.width = static_cast<int>(width);
    img.channels = channels;
    const std::size_t count = static_cast<std::size_t>(height) * width * channels;
    img.values.resize(count);

    auto store = [&](std::size_t i, long raw) {
        if (raw < 0 || raw > maxval) throw DataError(file + ": pixel value " + std::to_string(raw) + " exceeds maxval");
        img.values[i] = static_cast<float>(static_cast<double>(raw) / static_cast<double>(maxval));
    };

    if (ascii) {
        for (std::size_t i = 0; i < count; ++i) store(i, tok.next_int());
    } else {
        tok.end_header();
        const std::size_t sample_bytes = maxval < 256 ? 1 : 2;
        const std::size_t begin = 2 + tok.position();
        if (bytes.size() < begin + count * sample_bytes) throw DataError(file + ": truncated pixel data");
        for (std::size_t i = 0; i < count; ++i) {
            long raw;
            if (sample_bytes == 1) {
                raw = std::to_integer<long>(bytes[begin + i]);
            } else {
                raw = (std::to_integer<long>(bytes[begin + 2 * i]) << 8) | std::to_integer<long>(bytes[begin + 2 * i + 1]);
            }
            store(i, raw);
        }
    }
    return img;
}

void write_pgm(const fs::path& path, int height, int width, std::span<const std::uint16_t> pixels, int maxval)
{
    if (pixels.size() != static_cast<std::size_t>(height) * width) throw ConfigError("write_pgm: pixel count mismatch");
    std::ostringstream header;
    header << "P5\n" << width << ' ' << height << '\n' << maxval << '\n';
    const std::string h = header.str();
    std::vector<std::byte> out(reinterpret_cast<const std::byte*>(h.data()), reinterpret_cast<const std::byte*>(h.data()) + h.size());
    for (auto p : pixels) {
        if (p > maxval) throw ConfigError("write_pgm: pixel exceeds maxval");
        if (maxval < 256) {
            out.push_back(static_cast<std::byte>(p));
        } else {
            out.push_back(static_cast<std::byte>(p >> 8));
            out.push_back(static_cast<std::byte>(p & 0xff));
        }
    }
    write_file(path, out);
}

// ---- NIM1 -------------------------------------------------------------------

void write_raw_tensor(const fs::path& path, const SignalBatch& images)
{
    if (images.kind != SignalKind::image) throw ConfigError("write_raw_tensor: batch does not hold images");
    images.validate();
    std::vector<std::byte> out;
    out.reserve(24 + 4 * images.images.size());
    for (char c : std::string_view("NIM1")) out.push_back(static_cast<std::byte>(c));
    le::put_u32(out, static_cast<std::uint32_t>(images.n));
    le::put_u32(out, static_cast<std::uint32_t>(images.height));
    le::put_u32(out, static_cast<std::uint32_t>(images.width));
    le::put_u32(out, static_cast<std::uint32_t>(images.channels));
    for (float v : images.images) le::put_f32(out, v);
    le::put_u32(out, crc32(out));
    write_file(path, out);
}

namespace {

void check_magic(le::Reader& r, std::string_view magic, const std::string& file)
{
    auto m = r.take(4);
    if (std::string_view(reinterpret_cast<const char*>(m.data()), 4) != magic) {
        throw FormatError("magic", file + ": bad magic, expected " + std::string(magic));
    }
}

void check_trailing_crc(std::span<const std::byte> bytes, le::Reader& r, const std::string& file)
{
    const std::size_t body = r.position();
    r.set_section("crc");
    const std::uint32_t stored = r.u32();
    if (r.remaining() != 0) throw FormatError("crc", file + ": trailing bytes after checksum");
    if (crc32(bytes.first(body)) != stored) throw FormatError("payload", file + ": CRC mismatch in payload");
}

} // namespace

SignalBatch read_raw_tensor(const fs::path& path)
{
    const auto bytes = read_file(path);
    const std::string file = path.string();
    le::Reader r(bytes, "header");
    check_magic(r, "NIM1", file);
    SignalBatch b;
    b.kind = SignalKind::image;
    b.n = r.u32();
    b.height = static_cast<int>(r.u32());
    b.width = static_cast<int>(r.u32());
    b.channels = static_cast<int>(r.u32());
    if (b.height < 2 || b.width < 2 || b.channels < 1) throw FormatError("header", file + ": invalid image shape");
    const unsigned __int128 wide = static_cast<unsigned __int128>(b.n) * b.image_size();
    if (wide * 4 + 4 != r.remaining()) throw FormatError("payload", file + ": payload size does not match header shape");
    const auto count = static_cast<std::size_t>(wide);
    r.set_section("payload");
    b.images.resize(count);
    for (auto& v : b.images) v = r.f32();
    check_trailing_crc(bytes, r, file);
    for (float v : b.images) {
        if (!(v >= 0.0f && v <= 1.0f)) throw DataError(file + ": image value outside [0, 1]");
    }
    return b;
}

// ---- NPT1 -------------------------------------------------------------------

void write_points(const fs::path& path, const SignalBatch& points)
{
    if (points.kind != SignalKind::occupancy) throw ConfigError("write_points: batch does not hold point sets");
    points.validate();
    std::vector<std::byte> out;
    for (char c : std::string_view("NPT1")) out.push_back(static_cast<std::byte>(c));
    le::put_u32(out, static_cast<std::uint32_t>(points.n));
    le::put_u32(out, static_cast<std::uint32_t>(points.n_points));
    le::put_u32(out, static_cast<std::uint32_t>(points.point_dim));
    for (float v : points.points) le::put_f32(out, v);
    for (auto o : points.occ) out.push_back(static_cast<std::byte>(o));
    for (auto l : points.labels) le::put_u16(out, l);
    le::put_u32(out, crc32(out));
    write_file(path, out);
}

SignalBatch load_points(const fs::path& path)
{
    const auto bytes = read_file(path);
    const std::string file = path.string();
    le::Reader r(bytes, "header");
    check_magic(r, "NPT1", file);
    SignalBatch b;
    b.kind = SignalKind::occupancy;
    b.n = r.u32();
    b.n_points = static_cast<int>(r.u32());
    b.point_dim = static_cast<int>(r.u32());
    if (b.n_points < 1 || b.point_dim < 1) throw FormatError("header", file + ": invalid point-set shape");
    const unsigned __int128 wide_np = static_cast<unsigned __int128>(b.n) * static_cast<std::uint32_t>(b.n_points);
    const unsigned __int128 need = 4 * wide_np * static_cast<std::uint32_t>(b.point_dim) + wide_np + 2 * static_cast<unsigned __int128>(b.n) + 4;
    if (need != r.remaining()) {
        throw FormatError("payload", file + ": payload size " + std::to_string(r.remaining()) + " does not match header shape");
    }
    const auto np = static_cast<std::size_t>(wide_np);
    r.set_section("payload");
    b.points.resize(np * b.point_dim);
    for (auto& v : b.points) v = r.f32();
    b.occ.resize(np);
    for (auto& o : b.occ) o = r.u8();
    std::vector<int> labels(b.n);
    for (auto& l : labels) l = r.u16();
    check_trailing_crc(bytes, r, file);
    for (auto o : b.occ) {
        if (o > 1) throw DataError(file + ": occupancy value " + std::to_string(o) + " outside {0, 1}");
    }
    for (float v : b.points) {
        if (!(v >= -1.0f && v <= 1.0f)) throw DataError(file + ": point coordinate outside [-1, 1]");
    }
    assign_classes(b, labels);
    return b;
}

// ---- image datasets -----------------------------------------------------------

SignalBatch load_images(const fs::path& path, ImageFormat format)
{
    if (format == ImageFormat::raw_tensor) {
        SignalBatch b = read_raw_tensor(path);
        const fs::path sidecar = path.string() + ".labels.csv";
        const auto table = read_label_csv(sidecar);
        std::vector<int> labels(b.n);
        for (std::size_t i = 0; i < b.n; ++i) {
            auto it = table.find(std::to_string(i));
            if (it == table.end()) throw DataError(sidecar.string() + ": missing label for image index " + std::to_string(i));
            labels[i] = it->second;
        }
        if (table.size() != b.n) throw DataError(sidecar.string() + ": label rows do not match the image count");
        assign_classes(b, labels);
        b.validate();
        return b;
    }

    if (!fs::is_directory(path)) throw DataError("'" + path.string() + "' is not a directory");
    const std::string ext = format == ImageFormat::pgm ? ".pgm" : ".ppm";
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
        if (entry.is_regular_file() && entry.path().extension() == ext) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no " + ext + " files in '" + path.string() + "'");
    const auto table = read_label_csv(path / "labels.csv");

    SignalBatch b;
    b.kind = SignalKind::image;
    b.n = files.size();
    std::vector<int> labels;
    for (const auto& f : files) {
        NetpbmImage img = read_netpbm(f);
        if (b.images.empty()) {
            b.height = img.height;
            b.width = img.width;
            b.channels = img.channels;
        } else if (img.height != b.height || img.width != b.width || img.channels != b.channels) {
            throw DataError(f.string() + ": image shape differs from the first image");
        }
        b.images.insert(b.images.end(), img.values.begin(), img.values.end());
        auto it = table.find(f.filename().string());
        if (it == table.end()) throw DataError("labels.csv: missing label for '" + f.filename().string() + "'");
        labels.push_back(it->second);
    }
    assign_classes(b, labels);
    b.validate();
    return b;
}

} // namespace nef
