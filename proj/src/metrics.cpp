#include "nef/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "nef/fit.hpp"
#include "nef/parallel.hpp"
#include "nef/rng.hpp"

namespace nef {

using json = nlohmann::json;

std::string_view to_string(MetricKind kind) noexcept { return kind == MetricKind::psnr_db ? "psnr_db" : "iou"; }

namespace {

double mean_of(const std::vector<double>& v)
{
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// JSON has no infinity; the PSNR sentinel is written as the string "inf".
json number_or_sentinel(double v)
{
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return nullptr;
    return v;
}

json array_of(const std::vector<double>& v)
{
    json a = json::array();
    for (double x : v) a.push_back(number_or_sentinel(x));
    return a;
}

} // namespace

double metric_ratio(double off, double on)
{
    if (std::isinf(on) && std::isinf(off)) return 1.0;
    if (on == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return off / on;
}

double ReconReport::mean_on_grid() const { return mean_of(on_grid); }
double ReconReport::mean_off_grid() const { return mean_of(off_grid); }
double ReconReport::mean_ratio() const { return mean_of(ratio); }

json to_json(const ReconReport& r)
{
    json j{{"metric_kind", std::string(to_string(r.kind))},
           {"on_grid", array_of(r.on_grid)},
           {"mean_on_grid", number_or_sentinel(r.mean_on_grid())}};
    if (r.has_off_grid()) {
        j["off_grid"] = array_of(r.off_grid);
        j["ratio"] = array_of(r.ratio);
        j["mean_off_grid"] = number_or_sentinel(r.mean_off_grid());
        j["mean_ratio"] = number_or_sentinel(r.mean_ratio());
    } else {
        j["off_grid"] = nullptr;
    }
    return j;
}

template <class T>
ReconReport recon_report(const ParamBatch<T>& params, const SignalBatch& signals, const ReconOptions& opts)
{
    signals.validate();
    if (params.n_nefs != signals.n) throw DataError("parameter batch and signals disagree on the number of NeFs");
    ReconReport r;
    const std::size_t n = signals.n;
    if (signals.kind == SignalKind::image) {
        if (params.config.in_dim != 2 || params.config.out_dim != signals.channels) {
            throw ConfigError("NeF config does not map 2-D coordinates to the image channels");
        }
        r.kind = MetricKind::psnr_db;
        const int C = signals.channels;
        const CoordSet on = grid_coords(signals.height, signals.width);
        const auto pred_on = forward<T>(params, on, nullptr, opts.threads);
        const CoordSet off = offgrid_coords(signals.height, signals.width, opts.offgrid, opts.seed);
        const auto pred_off = forward<T>(params, off, nullptr, opts.threads);
        r.on_grid.resize(n);
        r.off_grid.resize(n);
        const std::size_t m_on = on.size() * C;
        const std::size_t m_off = off.size() * C;
        parallel_chunks(n, resolve_threads(opts.threads), [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) {
                r.on_grid[i] = psnr(std::span<const T>(pred_on.data() + i * m_on, m_on), signals.image(i));
                const auto truth = bilinear_sample(signals.image(i), signals.height, signals.width, C, off);
                r.off_grid[i] = psnr(std::span<const T>(pred_off.data() + i * m_off, m_off), std::span<const double>(truth));
            }
        });
    } else {
        if (params.config.in_dim != signals.point_dim || params.config.out_dim != 1) {
            throw ConfigError("NeF config does not map point coordinates to one occupancy logit");
        }
        r.kind = MetricKind::iou;
        const std::size_t P = static_cast<std::size_t>(signals.n_points);
        std::vector<T> pts(signals.points.begin(), signals.points.end());
        const auto logits = forward_points(params, std::span<const T>(pts), P, opts.threads);
        r.on_grid.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            r.on_grid[i] = iou(std::span<const T>(logits.data() + i * P, P), std::span<const std::uint8_t>(signals.occ.data() + i * P, P));
        }
        if (signals.shapes.size() == n && signals.point_dim == 3) {
            const std::size_t Q = opts.offgrid_points > 0 ? opts.offgrid_points : P;
            std::vector<T> fresh(n * Q * 3);
            std::vector<std::uint8_t> occ(n * Q);
            parallel_chunks(n, resolve_threads(opts.threads), [&](std::size_t begin, std::size_t end) {
                for (std::size_t i = begin; i < end; ++i) {
                    const auto s = occupancy_sample(signals.shapes[i], Q, opts.near_frac, opts.band_width,
                                                    derive_key(opts.seed ^ 0x6f6666677269ULL, i));
                    std::copy(s.points.begin(), s.points.end(), fresh.begin() + static_cast<std::ptrdiff_t>(i * Q * 3));
                    std::copy(s.occ.begin(), s.occ.end(), occ.begin() + static_cast<std::ptrdiff_t>(i * Q));
                }
            });
            const auto off_logits = forward_points(params, std::span<const T>(fresh), Q, opts.threads);
            r.off_grid.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                r.off_grid[i] = iou(std::span<const T>(off_logits.data() + i * Q, Q), std::span<const std::uint8_t>(occ.data() + i * Q, Q));
            }
        }
    }
    if (r.has_off_grid()) {
        r.ratio.resize(n);
        for (std::size_t i = 0; i < n; ++i) r.ratio[i] = metric_ratio(r.off_grid[i], r.on_grid[i]);
    }
    return r;
}

json to_json(const PairwiseDistanceSummary& s)
{
    return json{{"pairs", s.pairs},   {"exact", s.exact}, {"mean", s.mean},         {"median", s.median},
                {"min", s.min},       {"max", s.max},     {"bin_edges", s.bin_edges}, {"counts", s.counts}};
}

std::string histogram_csv(const PairwiseDistanceSummary& s)
{
    std::string out = "bin_lo,bin_hi,count\n";
    for (std::size_t b = 0; b < s.counts.size(); ++b) {
        json lo = s.bin_edges[b], hi = s.bin_edges[b + 1];
        out += lo.dump() + "," + hi.dump() + "," + std::to_string(s.counts[b]) + "\n";
    }
    return out;
}

template <class T>
PairwiseDistanceSummary pairwise_distances(const ParamBatch<T>& params, std::size_t max_pairs, std::uint64_t seed, int bins,
                                           int threads)
{
    const std::size_t n = params.n_nefs;
    if (n < 2) throw DataError("pairwise distances need at least two NeFs");
    if (bins < 1) throw ConfigError("histogram needs at least one bin");
    if (max_pairs == 0) throw ConfigError("max_pairs must be positive");
    const unsigned __int128 all = static_cast<unsigned __int128>(n) * (n - 1) / 2;
    PairwiseDistanceSummary s;
    s.exact = all <= max_pairs;
    s.pairs = s.exact ? static_cast<std::size_t>(all) : max_pairs;

    std::vector<std::pair<std::size_t, std::size_t>> pairs(s.pairs);
    if (s.exact) {
        std::size_t k = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) pairs[k++] = {i, j};
        }
    } else {
        Stream rng(seed, 0x70616972ULL);
        for (auto& p : pairs) {
            const std::size_t i = rng.below(n);
            std::size_t j = rng.below(n - 1);
            if (j >= i) ++j;
            p = {std::min(i, j), std::max(i, j)};
        }
    }

    std::vector<double> dist(s.pairs);
    const std::size_t D = params.param_dim;
    parallel_chunks(s.pairs, resolve_threads(threads), [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            const T* a = params.values.data() + pairs[k].first * D;
            const T* b = params.values.data() + pairs[k].second * D;
            double sum = 0.0;
            for (std::size_t p = 0; p < D; ++p) {
                const double d = static_cast<double>(a[p]) - static_cast<double>(b[p]);
                sum += d * d;
            }
            dist[k] = std::sqrt(sum);
        }
    });

    s.mean = std::accumulate(dist.begin(), dist.end(), 0.0) / static_cast<double>(dist.size());
    const auto [mn, mx] = std::minmax_element(dist.begin(), dist.end());
    s.min = *mn;
    s.max = *mx;
    std::vector<double> sorted = dist;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t m = sorted.size();
    s.median = m % 2 == 1 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);

    const double hi = s.max > 0.0 ? s.max : 1.0;
    s.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b) s.bin_edges[b] = hi * b / bins;
    s.counts.assign(static_cast<std::size_t>(bins), 0);
    for (double d : dist) {
        auto b = static_cast<std::size_t>(d / hi * bins);
        s.counts[std::min<std::size_t>(b, static_cast<std::size_t>(bins - 1))] += 1;
    }
    return s;
}

json to_json(const ClusteringReport& r)
{
    json j{{"k", r.k}, {"assignments", r.assignments}, {"inertia", r.inertia}, {"iterations", r.iterations}};
    j["nmi"] = number_or_sentinel(r.nmi);
    return j;
}

namespace {

double sqdist(const double* a, const double* b, std::size_t dim)
{
    double s = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
        const double t = a[d] - b[d];
        s += t * t;
    }
    return s;
}

struct KMeansRun {
    std::vector<int> assign;
    double inertia = 0.0;
    int iterations = 0;
    std::vector<double> trace;
};

KMeansRun kmeans_once(std::span<const double> X, std::size_t n, std::size_t dim, int k, int max_iter, Stream& rng)
{
    std::vector<double> centers(static_cast<std::size_t>(k) * dim);
    std::vector<double> best(n, std::numeric_limits<double>::infinity());

    // k-means++ seeding
    std::size_t first = rng.below(n);
    std::copy_n(X.data() + first * dim, dim, centers.data());
    for (int c = 1; c < k; ++c) {
        const double* prev = centers.data() + static_cast<std::size_t>(c - 1) * dim;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            best[i] = std::min(best[i], sqdist(X.data() + i * dim, prev, dim));
            total += best[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double r = rng.uniform() * total;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                r -= best[i];
                if (r < 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.below(n);
        }
        std::copy_n(X.data() + pick * dim, dim, centers.data() + static_cast<std::size_t>(c) * dim);
    }

    KMeansRun run;
    run.assign.assign(n, -1);
    std::vector<double> d2(n);
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k));
    for (int it = 0; it < max_iter; ++it) {
        bool changed = false;
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            int arg = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = sqdist(X.data() + i * dim, centers.data() + static_cast<std::size_t>(c) * dim, dim);
                if (d < bd) {
                    bd = d;
                    arg = c;
                }
            }
            changed = changed || run.assign[i] != arg;
            run.assign[i] = arg;
            d2[i] = bd;
            inertia += bd;
        }
        run.trace.push_back(inertia);
        run.inertia = inertia;
        run.iterations = it + 1;
        if (!changed && it > 0) break;

        std::fill(centers.begin(), centers.end(), 0.0);
        std::fill(sizes.begin(), sizes.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(run.assign[i]);
            sizes[c] += 1;
            for (std::size_t d = 0; d < dim; ++d) centers[c * dim + d] += X[i * dim + d];
        }
        for (int c = 0; c < k; ++c) {
            double* ctr = centers.data() + static_cast<std::size_t>(c) * dim;
            if (sizes[c] > 0) {
                for (std::size_t d = 0; d < dim; ++d) ctr[d] /= static_cast<double>(sizes[c]);
                continue;
            }
            // empty cluster: take over the point farthest from its center
            const auto far = static_cast<std::size_t>(std::max_element(d2.begin(), d2.end()) - d2.begin());
            std::copy_n(X.data() + far * dim, dim, ctr);
            d2[far] = 0.0;
        }
    }
    return run;
}

} // namespace

ClusteringReport kmeans(std::span<const double> X, std::size_t n, std::size_t dim, const KMeansOptions& opts)
{
    if (opts.k < 1 || n < static_cast<std::size_t>(opts.k)) throw ConfigError("kmeans needs n >= k >= 1");
    if (X.size() != n * dim) throw DataError("kmeans: data is not n x dim");
    if (opts.restarts < 1 || opts.max_iter < 1) throw ConfigError("kmeans needs restarts >= 1 and max_iter >= 1");
    ClusteringReport best;
    best.k = opts.k;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < opts.restarts; ++r) {
        Stream rng(opts.seed, static_cast<std::uint64_t>(r));
        auto run = kmeans_once(X, n, dim, opts.k, opts.max_iter, rng);
        if (run.inertia < best.inertia) {
            best.inertia = run.inertia;
            best.assignments = std::move(run.assign);
            best.iterations = run.iterations;
            best.inertia_trace = std::move(run.trace);
        }
    }
    return best;
}

double nmi(std::span<const int> a, std::span<const int> b, NmiNorm norm)
{
    if (a.size() != b.size()) throw DataError("nmi: label vectors differ in length");
    if (a.empty()) throw DataError("nmi of empty input");
    auto relabel = [](std::span<const int> v, std::vector<int>& out) {
        std::vector<int> keys(v.begin(), v.end());
        std::sort(keys.begin(), keys.end());
        keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
        out.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            out[i] = static_cast<int>(std::lower_bound(keys.begin(), keys.end(), v[i]) - keys.begin());
        }
        return keys.size();
    };
    std::vector<int> ia, ib;
    const std::size_t ka = relabel(a, ia);
    const std::size_t kb = relabel(b, ib);
    const double n = static_cast<double>(a.size());
    std::vector<double> joint(ka * kb, 0.0), pa(ka, 0.0), pb(kb, 0.0);
    for (std::size_t i = 0; i < ia.size(); ++i) {
        joint[static_cast<std::size_t>(ia[i]) * kb + ib[i]] += 1.0;
        pa[ia[i]] += 1.0;
        pb[ib[i]] += 1.0;
    }
    auto entropy = [n](const std::vector<double>& counts) {
        double h = 0.0;
        for (double c : counts) {
            if (c > 0) h -= (c / n) * std::log(c / n);
        }
        return h;
    };
    const double ha = entropy(pa);
    const double hb = entropy(pb);
    double mi = 0.0;
    for (std::size_t x = 0; x < ka; ++x) {
        for (std::size_t y = 0; y < kb; ++y) {
            const double c = joint[x * kb + y];
            if (c > 0) mi += (c / n) * std::log(c * n / (pa[x] * pb[y]));
        }
    }
    const double denom = norm == NmiNorm::arithmetic ? 0.5 * (ha + hb) : std::sqrt(ha * hb);
    if (denom <= 0.0) return 0.0;
    return std::clamp(mi / denom, 0.0, 1.0);
}

template <class T>
ClusteringReport cluster_params(const ParamBatch<T>& params, std::span<const std::uint16_t> labels, int n_classes,
                                const KMeansOptions& opts, NmiNorm norm)
{
    if (labels.size() != params.n_nefs) throw DataError("one label per NeF required");
    std::vector<double> X(params.values.begin(), params.values.end());
    KMeansOptions o = opts;
    o.k = n_classes;
    auto r = kmeans(X, params.n_nefs, params.param_dim, o);
    const std::vector<int> truth(labels.begin(), labels.end());
    r.nmi = nmi(r.assignments, truth, norm);
    return r;
}

#define NEF_METRICS_INSTANTIATE(T)                                                                                      \
    template ReconReport recon_report<T>(const ParamBatch<T>&, const SignalBatch&, const ReconOptions&);                \
    template PairwiseDistanceSummary pairwise_distances<T>(const ParamBatch<T>&, std::size_t, std::uint64_t, int, int); \
    template ClusteringReport cluster_params<T>(const ParamBatch<T>&, std::span<const std::uint16_t>, int,              \
                                                const KMeansOptions&, NmiNorm);

NEF_METRICS_INSTANTIATE(float)
NEF_METRICS_INSTANTIATE(double)

} // namespace nef
