#include "nef/signals.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "nef/digest.hpp"
#include "nef/errors.hpp"
#include "nef/rng.hpp"

namespace nef {

std::string_view to_string(OffgridMode mode) noexcept { return mode == OffgridMode::midpoint ? "midpoint" : "uniform"; }

OffgridMode parse_offgrid_mode(std::string_view name)
{
    if (name == "midpoint") return OffgridMode::midpoint;
    if (name == "uniform") return OffgridMode::uniform;
    throw ConfigError("unknown off-grid mode '" + std::string(name) + "'");
}

namespace {

void require_grid(int height, int width)
{
    if (height < 2 || width < 2) throw ConfigError("grid dimensions must be >= 2");
}

double lattice(int index, int size) { return 2.0 * index / (size - 1) - 1.0; }

} // namespace

CoordSet grid_coords(int height, int width)
{
    require_grid(height, width);
    CoordSet cs;
    cs.dim = 2;
    cs.tag = {GridTag::Kind::on_grid, height, width, OffgridMode::midpoint, 0};
    cs.coords.reserve(static_cast<std::size_t>(height) * width * 2);
    for (int i = 0; i < height; ++i) {
        for (int j = 0; j < width; ++j) {
            cs.coords.push_back(lattice(j, width));
            cs.coords.push_back(lattice(i, height));
        }
    }
    return cs;
}

CoordSet offgrid_coords(int height, int width, OffgridMode mode, std::uint64_t seed)
{
    require_grid(height, width);
    CoordSet cs;
    cs.dim = 2;
    cs.tag = {GridTag::Kind::off_grid, height, width, mode, seed};
    if (mode == OffgridMode::midpoint) {
        for (int i = 0; i + 1 < height; ++i) {
            for (int j = 0; j + 1 < width; ++j) {
                cs.coords.push_back((2.0 * j + 1.0) / (width - 1) - 1.0);
                cs.coords.push_back((2.0 * i + 1.0) / (height - 1) - 1.0);
            }
        }
    } else {
        Stream rng(seed, 0x6f6666677269ULL);
        const std::size_t m = static_cast<std::size_t>(height) * width;
        for (std::size_t k = 0; k < 2 * m; ++k) cs.coords.push_back(rng.uniform(-1.0, 1.0));
    }
    return cs;
}

namespace {

// Continuous lattice position of a normalized coordinate, snapped to exact
// integers when within rounding distance so knots reproduce pixel values.
void lattice_cell(double u, int size, int& index, double& frac)
{
    double pos = (std::clamp(u, -1.0, 1.0) + 1.0) * 0.5 * (size - 1);
    const double nearest = std::round(pos);
    if (std::fabs(pos - nearest) < 1e-9) pos = nearest;
    int i0 = static_cast<int>(std::floor(pos));
    i0 = std::clamp(i0, 0, size - 2);
    index = i0;
    frac = pos - i0;
}

} // namespace

std::vector<double> bilinear_sample(std::span<const float> image, int height, int width, int channels, const CoordSet& coords)
{
    require_grid(height, width);
    if (coords.dim != 2) throw ConfigError("bilinear_sample needs 2-D coordinates");
    if (image.size() != static_cast<std::size_t>(height) * width * channels) {
        throw ConfigError("bilinear_sample: image size does not match dimensions");
    }
    const std::size_t m = coords.size();
    std::vector<double> out(m * channels);
    auto px = [&](int i, int j, int ch) {
        return static_cast<double>(image[(static_cast<std::size_t>(i) * width + j) * channels + ch]);
    };
    for (std::size_t k = 0; k < m; ++k) {
        int j0, i0;
        double tx, ty;
        lattice_cell(coords.coords[2 * k], width, j0, tx);
        lattice_cell(coords.coords[2 * k + 1], height, i0, ty);
        for (int ch = 0; ch < channels; ++ch) {
            double v;
            if (tx == 0.0 && ty == 0.0) {
                v = px(i0, j0, ch);
            } else if (tx == 1.0 && ty == 0.0) {
                v = px(i0, j0 + 1, ch);
            } else if (tx == 0.0 && ty == 1.0) {
                v = px(i0 + 1, j0, ch);
            } else if (tx == 1.0 && ty == 1.0) {
                v = px(i0 + 1, j0 + 1, ch);
            } else {
                const double top = (1.0 - tx) * px(i0, j0, ch) + tx * px(i0, j0 + 1, ch);
                const double bottom = (1.0 - tx) * px(i0 + 1, j0, ch) + tx * px(i0 + 1, j0 + 1, ch);
                v = (1.0 - ty) * top + ty * bottom;
            }
            out[k * channels + ch] = v;
        }
    }
    return out;
}

AnalyticShape AnalyticShape::sphere(std::array<double, 3> center, double radius)
{
    if (!(radius > 0.0)) throw ConfigError("sphere radius must be > 0");
    AnalyticShape s;
    s.kind_ = Kind::sphere;
    s.center_ = center;
    s.radius_ = radius;
    return s;
}

AnalyticShape AnalyticShape::box(std::array<double, 3> center, std::array<double, 3> half_extents)
{
    for (double e : half_extents) {
        if (!(e > 0.0)) throw ConfigError("box half extents must be > 0");
    }
    AnalyticShape s;
    s.kind_ = Kind::box;
    s.center_ = center;
    s.extent_ = half_extents;
    return s;
}

AnalyticShape AnalyticShape::unite(AnalyticShape a, AnalyticShape b)
{
    AnalyticShape s;
    s.kind_ = Kind::shape_union;
    s.a_ = std::make_shared<const AnalyticShape>(std::move(a));
    s.b_ = std::make_shared<const AnalyticShape>(std::move(b));
    return s;
}

AnalyticShape AnalyticShape::subtract(AnalyticShape a, AnalyticShape b)
{
    AnalyticShape s;
    s.kind_ = Kind::shape_difference;
    s.a_ = std::make_shared<const AnalyticShape>(std::move(a));
    s.b_ = std::make_shared<const AnalyticShape>(std::move(b));
    return s;
}

double AnalyticShape::signed_distance(std::span<const double, 3> p) const noexcept
{
    switch (kind_) {
    case Kind::sphere: {
        const double dx = p[0] - center_[0], dy = p[1] - center_[1], dz = p[2] - center_[2];
        return std::sqrt(dx * dx + dy * dy + dz * dz) - radius_;
    }
    case Kind::box: {
        double outside = 0.0;
        double inside = -1e300;
        for (int a = 0; a < 3; ++a) {
            const double q = std::fabs(p[a] - center_[a]) - extent_[a];
            outside += std::max(q, 0.0) * std::max(q, 0.0);
            inside = std::max(inside, q);
        }
        return std::sqrt(outside) + std::min(inside, 0.0);
    }
    case Kind::shape_union: return std::min(a_->signed_distance(p), b_->signed_distance(p));
    case Kind::shape_difference: return std::max(a_->signed_distance(p), -b_->signed_distance(p));
    }
    return 0.0;
}

OccupancySample occupancy_sample(const AnalyticShape& shape, std::size_t n_total, double near_frac, double band_width,
                                 std::uint64_t seed)
{
    if (!(near_frac >= 0.0 && near_frac <= 1.0)) throw ConfigError("near_frac must lie in [0, 1]");
    if (!(band_width > 0.0)) throw ConfigError("band_width must be > 0");
    const auto n_near = static_cast<std::size_t>(std::floor(near_frac * static_cast<double>(n_total)));
    constexpr std::size_t max_attempts_per_point = 100000;

    OccupancySample out;
    out.points.reserve(3 * n_total);
    out.occ.reserve(n_total);
    Stream rng(seed, 0x6f6363ULL);

    auto draw = [&](std::array<double, 3>& p) {
        for (int a = 0; a < 3; ++a) p[a] = static_cast<double>(static_cast<float>(rng.uniform(-1.0, 1.0)));
    };
    auto emit = [&](const std::array<double, 3>& p) {
        for (int a = 0; a < 3; ++a) out.points.push_back(static_cast<float>(p[a]));
        out.occ.push_back(shape.contains(std::span<const double, 3>(p)) ? 1 : 0);
    };

    std::array<double, 3> p{};
    for (std::size_t i = 0; i < n_near; ++i) {
        std::size_t attempts = 0;
        for (;;) {
            draw(p);
            if (std::fabs(shape.signed_distance(std::span<const double, 3>(p))) <= band_width) break;
            if (++attempts >= max_attempts_per_point) {
                throw DataError("occupancy_sample: no point within the surface band after " +
                                std::to_string(max_attempts_per_point) + " attempts");
            }
        }
        emit(p);
    }
    for (std::size_t i = n_near; i < n_total; ++i) {
        draw(p);
        emit(p);
    }
    return out;
}

void SignalBatch::validate() const
{
    if (labels.size() != n) throw DataError("signal batch: label count does not match signal count");
    for (auto l : labels) {
        if (l >= class_names.size()) throw DataError("signal batch: label " + std::to_string(l) + " has no class name");
    }
    if (kind == SignalKind::image) {
        if (height < 2 || width < 2 || channels < 1) throw DataError("signal batch: invalid image shape");
        if (images.size() != n * image_size()) throw DataError("signal batch: image payload has wrong size");
        for (float v : images) {
            if (!(v >= 0.0f && v <= 1.0f)) throw DataError("signal batch: image value outside [0, 1]");
        }
    } else {
        if (n_points < 1 || point_dim < 1) throw DataError("signal batch: invalid point-set shape");
        const std::size_t np = n * static_cast<std::size_t>(n_points);
        if (points.size() != np * point_dim || occ.size() != np) throw DataError("signal batch: point payload has wrong size");
        for (float v : points) {
            if (!(v >= -1.0f && v <= 1.0f)) throw DataError("signal batch: point coordinate outside [-1, 1]");
        }
        for (auto o : occ) {
            if (o > 1) throw DataError("signal batch: occupancy value outside {0, 1}");
        }
        if (!shapes.empty() && shapes.size() != n) throw DataError("signal batch: analytic shape count mismatch");
    }
}

SignalBatch SignalBatch::subset(std::span<const std::size_t> indices) const
{
    SignalBatch out;
    out.kind = kind;
    out.n = indices.size();
    out.height = height;
    out.width = width;
    out.channels = channels;
    out.n_points = n_points;
    out.point_dim = point_dim;
    out.class_names = class_names;
    const std::size_t isz = image_size();
    const std::size_t psz = static_cast<std::size_t>(n_points) * point_dim;
    for (std::size_t i : indices) {
        if (i >= n) throw DataError("signal batch: subset index out of range");
        out.labels.push_back(labels[i]);
        if (kind == SignalKind::image) {
            out.images.insert(out.images.end(), images.begin() + static_cast<std::ptrdiff_t>(i * isz),
                              images.begin() + static_cast<std::ptrdiff_t>((i + 1) * isz));
        } else {
            out.points.insert(out.points.end(), points.begin() + static_cast<std::ptrdiff_t>(i * psz),
                              points.begin() + static_cast<std::ptrdiff_t>((i + 1) * psz));
            out.occ.insert(out.occ.end(), occ.begin() + static_cast<std::ptrdiff_t>(i * n_points),
                           occ.begin() + static_cast<std::ptrdiff_t>((i + 1) * n_points));
            if (!shapes.empty()) out.shapes.push_back(shapes[i]);
        }
    }
    return out;
}

std::string SignalBatch::content_hash() const
{
    Sha256 h;
    const std::int64_t dims[] = {static_cast<std::int64_t>(kind), static_cast<std::int64_t>(n), height, width, channels,
                                 n_points, point_dim};
    h.update_values(std::span<const std::int64_t>(dims));
    h.update_values(std::span<const float>(images));
    h.update_values(std::span<const float>(points));
    h.update_values(std::span<const std::uint8_t>(occ));
    h.update_values(std::span<const std::uint16_t>(labels));
    return h.hex();
}

SignalBatch synthetic_blobs(std::size_t n, int height, int width, std::uint64_t seed)
{
    require_grid(height, width);
    SignalBatch out;
    out.kind = SignalKind::image;
    out.n = n;
    out.height = height;
    out.width = width;
    out.channels = 1;
    out.class_names = {"one_blob", "two_blobs"};
    out.images.resize(n * out.image_size());
    const CoordSet grid = grid_coords(height, width);

    struct Blob {
        double x, y, sigma, amp;
    };
    for (std::size_t s = 0; s < n; ++s) {
        Stream rng(seed, 0x626c6f62ULL + s);
        const auto label = static_cast<std::uint16_t>(s % 2);
        out.labels.push_back(label);
        std::vector<Blob> blobs;
        if (label == 0) {
            blobs.push_back({rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(0.3, 0.45), rng.uniform(0.8, 1.0)});
        } else {
            for (int b = 0; b < 2; ++b) {
                blobs.push_back({rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(0.12, 0.2), rng.uniform(0.8, 1.0)});
            }
        }
        float* img = out.images.data() + s * out.image_size();
        for (std::size_t k = 0; k < grid.size(); ++k) {
            const double u = grid.coords[2 * k], v = grid.coords[2 * k + 1];
            double value = 0.0;
            for (const auto& b : blobs) {
                const double r2 = (u - b.x) * (u - b.x) + (v - b.y) * (v - b.y);
                value += b.amp * std::exp(-r2 / (2.0 * b.sigma * b.sigma));
            }
            img[k] = static_cast<float>(std::clamp(value, 0.0, 1.0));
        }
    }
    return out;
}

SignalBatch synthetic_textures(std::size_t n, int height, int width, std::uint64_t seed)
{
    require_grid(height, width);
    SignalBatch out;
    out.kind = SignalKind::image;
    out.n = n;
    out.height = height;
    out.width = width;
    out.channels = 1;
    out.class_names = {"rough", "smooth"};
    out.images.resize(n * out.image_size());
    const double pi = std::acos(-1.0);
    std::vector<double> field(out.image_size());
    for (std::size_t s = 0; s < n; ++s) {
        Stream rng(seed, 0x74657874ULL + s);
        const auto label = static_cast<std::uint16_t>(s % 2);
        out.labels.push_back(label);
        const double alpha = label == 0 ? 1.0 : 2.0;
        std::fill(field.begin(), field.end(), 0.0);
        // half plane of frequencies, each cosine covers its conjugate
        for (int ky = 0; ky <= height / 2; ++ky) {
            for (int kx = -width / 2; kx <= width / 2; ++kx) {
                if (ky == 0 && kx <= 0) continue;
                const double f = std::hypot(static_cast<double>(kx) / width, static_cast<double>(ky) / height);
                const double amp = rng.normal() / std::pow(f, alpha);
                const double phase = rng.uniform(0.0, 2.0 * pi);
                for (int y = 0; y < height; ++y) {
                    for (int x = 0; x < width; ++x) {
                        field[static_cast<std::size_t>(y) * width + x] +=
                            amp * std::cos(2.0 * pi * (static_cast<double>(kx * x) / width + static_cast<double>(ky * y) / height) + phase);
                    }
                }
            }
        }
        const auto [lo, hi] = std::minmax_element(field.begin(), field.end());
        const double range = *hi - *lo > 0.0 ? *hi - *lo : 1.0;
        float* img = out.images.data() + s * out.image_size();
        for (std::size_t k = 0; k < field.size(); ++k) img[k] = static_cast<float>(std::clamp((field[k] - *lo) / range, 0.0, 1.0));
    }
    return out;
}

SignalBatch synthetic_shapes(std::size_t n, std::size_t n_points, double near_frac, double band_width, std::uint64_t seed)
{
    SignalBatch out;
    out.kind = SignalKind::occupancy;
    out.n = n;
    out.n_points = static_cast<int>(n_points);
    out.point_dim = 3;
    out.class_names = {"sphere", "box"};
    for (std::size_t s = 0; s < n; ++s) {
        Stream rng(seed, 0x73686170ULL + s);
        const auto label = static_cast<std::uint16_t>(s % 2);
        const std::array<double, 3> center{rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)};
        AnalyticShape shape = label == 0
                                  ? AnalyticShape::sphere(center, rng.uniform(0.35, 0.55))
                                  : AnalyticShape::box(center, {rng.uniform(0.25, 0.45), rng.uniform(0.25, 0.45),
                                                                rng.uniform(0.25, 0.45)});
        OccupancySample sample = occupancy_sample(shape, n_points, near_frac, band_width, derive_key(seed, s));
        out.points.insert(out.points.end(), sample.points.begin(), sample.points.end());
        out.occ.insert(out.occ.end(), sample.occ.begin(), sample.occ.end());
        out.shapes.push_back(std::move(shape));
        out.labels.push_back(label);
    }
    return out;
}

} // namespace nef
