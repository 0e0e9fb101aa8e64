#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nef {

enum class SignalKind { image, occupancy };
enum class OffgridMode { midpoint, uniform };

std::string_view to_string(OffgridMode mode) noexcept;
OffgridMode parse_offgrid_mode(std::string_view name);

struct GridTag {
    enum class Kind { on_grid, off_grid, points };
    Kind kind = Kind::points;
    int height = 0;
    int width = 0;
    OffgridMode mode = OffgridMode::midpoint;
    std::uint64_t seed = 0;
};

// M coordinates in [-1, 1]^dim, row-major [M x dim].
struct CoordSet {
    int dim = 2;
    std::vector<double> coords;
    GridTag tag;

    std::size_t size() const noexcept { return dim > 0 ? coords.size() / static_cast<std::size_t>(dim) : 0; }
    std::span<const double> point(std::size_t i) const { return {coords.data() + i * dim, static_cast<std::size_t>(dim)}; }
};

// Pixel (i, j) maps to (2j/(W-1) - 1, 2i/(H-1) - 1), row-major.
CoordSet grid_coords(int height, int width);
// midpoint: the (H-1) x (W-1) cell centers. uniform: H*W i.i.d. points from the (seed) stream.
CoordSet offgrid_coords(int height, int width, OffgridMode mode, std::uint64_t seed);

// Bilinear interpolation of an H x W x C image (row-major, channels last) on the
// pixel lattice of grid_coords. Returns [M x C]. Coordinates are clamped to [-1, 1].
std::vector<double> bilinear_sample(std::span<const float> image, int height, int width, int channels,
                                    const CoordSet& coords);

// Analytic occupancy primitive; composites hold two children.
class AnalyticShape {
public:
    enum class Kind { sphere, box, shape_union, shape_difference };

    static AnalyticShape sphere(std::array<double, 3> center, double radius);
    static AnalyticShape box(std::array<double, 3> center, std::array<double, 3> half_extents);
    static AnalyticShape unite(AnalyticShape a, AnalyticShape b);
    static AnalyticShape subtract(AnalyticShape a, AnalyticShape b);

    Kind kind() const noexcept { return kind_; }
    // Signed distance bound: negative inside, exact for spheres and boxes.
    double signed_distance(std::span<const double, 3> p) const noexcept;
    bool contains(std::span<const double, 3> p) const noexcept { return signed_distance(p) < 0.0; }

private:
    Kind kind_ = Kind::sphere;
    std::array<double, 3> center_{};
    std::array<double, 3> extent_{};
    double radius_ = 0.0;
    std::shared_ptr<const AnalyticShape> a_, b_;
};

struct OccupancySample {
    std::vector<float> points; // [n_total x 3]
    std::vector<std::uint8_t> occ;
};

// floor(near_frac * n_total) points within +-band_width of the surface (rejection
// sampled), the rest uniform in [-1, 1]^3. Occupancy is evaluated on the stored
// (float) coordinates. Throws DataError when rejection sampling gives up.
OccupancySample occupancy_sample(const AnalyticShape& shape, std::size_t n_total, double near_frac, double band_width,
                                 std::uint64_t seed);

// Discretely sampled signals of one kind, all with the same shape.
struct SignalBatch {
    SignalKind kind = SignalKind::image;
    std::size_t n = 0;

    // images: [n x H x W x C] in [0, 1]
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> images;

    // occupancy: points [n x P x d] in [-1, 1]^d, occ [n x P] in {0, 1}
    int n_points = 0;
    int point_dim = 0;
    std::vector<float> points;
    std::vector<std::uint8_t> occ;
    // Optional analytic description per signal (enables exact off-grid occupancy).
    std::vector<AnalyticShape> shapes;

    std::vector<std::uint16_t> labels;
    std::vector<std::string> class_names;

    std::size_t image_size() const noexcept
    {
        return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
    }
    std::span<const float> image(std::size_t i) const { return {images.data() + i * image_size(), image_size()}; }

    // Throws DataError on any violated invariant.
    void validate() const;
    SignalBatch subset(std::span<const std::size_t> indices) const;
    // SHA-256 over the signal payload and labels, hex encoded.
    std::string content_hash() const;
};

// Two-class synthetic images: class 0 holds one broad Gaussian blob, class 1
// two narrow ones; positions and widths vary per sample. Labels alternate.
SignalBatch synthetic_blobs(std::size_t n, int height, int width, std::uint64_t seed);

// Two-class random textures: a sum of grid-frequency cosines with random phases
// and amplitudes ~ 1/f (class 0, natural-image-like) or 1/f^2 (class 1),
// rescaled to [0, 1]. Labels alternate.
SignalBatch synthetic_textures(std::size_t n, int height, int width, std::uint64_t seed);

// Two-class synthetic shapes (spheres vs. boxes) with random size and position,
// point sets drawn with occupancy_sample.
SignalBatch synthetic_shapes(std::size_t n, std::size_t n_points, double near_frac, double band_width, std::uint64_t seed);

} // namespace nef
