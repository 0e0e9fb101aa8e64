#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nef/errors.hpp"
#include "nef/params.hpp"
#include "nef/signals.hpp"

namespace nef {

enum class MetricKind { psnr_db, iou };
std::string_view to_string(MetricKind kind) noexcept;

inline constexpr double kPsnrInf = std::numeric_limits<double>::infinity();

// 10 log10(peak^2 / mse); +inf when mse == 0.
inline double psnr_from_mse(double mse, double peak = 1.0)
{
    if (mse == 0.0) return kPsnrInf;
    return 10.0 * std::log10(peak * peak / mse);
}

template <class A, class B>
double mse(std::span<const A> pred, std::span<const B> target)
{
    if (pred.empty()) throw DataError("mse of empty input");
    if (pred.size() != target.size()) throw DataError("mse: prediction and target sizes differ");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        sum += d * d;
    }
    return sum / static_cast<double>(pred.size());
}

template <class A, class B>
double psnr(std::span<const A> pred, std::span<const B> target, double peak = 1.0)
{
    return psnr_from_mse(mse(pred, target), peak);
}

// TP / (TP + FP + FN) of the sets {logit > threshold} and {occ == 1}; 1 when both are empty.
template <class A>
double iou(std::span<const A> logits, std::span<const std::uint8_t> occ, double threshold = 0.0)
{
    if (logits.empty()) throw DataError("iou of empty input");
    if (logits.size() != occ.size()) throw DataError("iou: prediction and target sizes differ");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const bool p = static_cast<double>(logits[i]) > threshold;
        const bool t = occ[i] != 0;
        inter += (p && t) ? 1 : 0;
        uni += (p || t) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct ReconOptions {
    OffgridMode offgrid = OffgridMode::midpoint;
    std::uint64_t seed = 0;
    // Fresh occupancy points for shapes; defaults to the fitted point count.
    std::size_t offgrid_points = 0;
    double near_frac = 0.5;
    double band_width = 0.05;
    int threads = 0;
};

struct ReconReport {
    MetricKind kind = MetricKind::psnr_db;
    std::vector<double> on_grid;
    std::vector<double> off_grid; // empty when off-grid ground truth is unavailable
    std::vector<double> ratio;    // off_grid / on_grid
    bool has_off_grid() const noexcept { return !off_grid.empty(); }
    double mean_on_grid() const;
    double mean_off_grid() const;
    double mean_ratio() const;
};

nlohmann::json to_json(const ReconReport& report);
double metric_ratio(double off, double on);

// On-grid metrics use the fitting coordinates. Off-grid: bilinear ground truth on
// offgrid_coords for images; fresh exact points for signals with analytic shapes.
template <class T>
ReconReport recon_report(const ParamBatch<T>& params, const SignalBatch& signals, const ReconOptions& opts = {});

struct PairwiseDistanceSummary {
    std::size_t pairs = 0;
    bool exact = false; // every unordered pair was used
    std::vector<double> bin_edges;
    std::vector<std::size_t> counts;
    double mean = 0.0;
    double median = 0.0;
    double min = 0.0;
    double max = 0.0;
};

nlohmann::json to_json(const PairwiseDistanceSummary& s);
std::string histogram_csv(const PairwiseDistanceSummary& s);

// Euclidean distances between flattened parameter vectors over up to max_pairs
// unordered pairs (all of them when n(n-1)/2 <= max_pairs, else sampled uniformly
// with replacement from the (seed) stream).
template <class T>
PairwiseDistanceSummary pairwise_distances(const ParamBatch<T>& params, std::size_t max_pairs = 1000000,
                                           std::uint64_t seed = 0, int bins = 50, int threads = 0);

struct KMeansOptions {
    int k = 2;
    int restarts = 10;
    int max_iter = 300;
    std::uint64_t seed = 0;
};

struct ClusteringReport {
    int k = 0;
    std::vector<int> assignments;
    double inertia = 0.0;
    double nmi = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
    std::vector<double> inertia_trace; // per Lloyd iteration of the winning restart
};

nlohmann::json to_json(const ClusteringReport& r);

// Lloyd's algorithm with k-means++ seeding on X [n x dim]; best of `restarts` by inertia.
ClusteringReport kmeans(std::span<const double> X, std::size_t n, std::size_t dim, const KMeansOptions& opts);

enum class NmiNorm { arithmetic, geometric };

// Mutual information (natural log) normalized by the mean of the two entropies; 0/0 -> 0.
double nmi(std::span<const int> a, std::span<const int> b, NmiNorm norm = NmiNorm::arithmetic);

// k-means with k = number of classes on the parameter rows, scored against labels.
template <class T>
ClusteringReport cluster_params(const ParamBatch<T>& params, std::span<const std::uint16_t> labels, int n_classes,
                                const KMeansOptions& opts, NmiNorm norm = NmiNorm::arithmetic);

} // namespace nef
