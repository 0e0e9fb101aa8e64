#pragma once

// Drives a PackKernel over the coordinates of a FitProblem: gathers per-lane
// coordinates and targets into blocks, evaluates losses, accumulates gradients
// and applies Adam to lane-interleaved parameters.

#include <array>
#include <memory>
#include <type_traits>
#include <utility>
#include <cmath>
#include <cstdint>
#include <vector>

#include "nef/fit.hpp"
#include "nef/parallel.hpp"
#include "nef/rng.hpp"
#include "pack_kernel.hpp"

namespace nef::detail {

template <class T>
struct AdamCoeffs {
    T b1, b2, one_minus_b1, one_minus_b2, lr, eps, bc1, bc2, decay;

    AdamCoeffs(const FitOptions& o, std::int64_t t)
        : b1(static_cast<T>(o.adam_beta1)),
          b2(static_cast<T>(o.adam_beta2)),
          one_minus_b1(T(1) - static_cast<T>(o.adam_beta1)),
          one_minus_b2(T(1) - static_cast<T>(o.adam_beta2)),
          lr(static_cast<T>(o.lr)),
          eps(static_cast<T>(o.adam_eps)),
          bc1(static_cast<T>(1.0 - std::pow(o.adam_beta1, static_cast<double>(t)))),
          bc2(static_cast<T>(1.0 - std::pow(o.adam_beta2, static_cast<double>(t)))),
          decay(T(1) - static_cast<T>(o.lr) * static_cast<T>(o.weight_decay))
    {
    }
};

template <class T>
inline void adam_update(T& p, T g, T& m, T& v, const AdamCoeffs<T>& c) noexcept
{
    m = c.b1 * m + c.one_minus_b1 * g;
    v = c.b2 * v + c.one_minus_b2 * (g * g);
    const T m_hat = m / c.bc1;
    const T v_hat = v / c.bc2;
    p = p - c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    p = p * c.decay;
}

inline std::uint64_t sampling_key(std::uint64_t seed, std::uint64_t nef, std::uint64_t step)
{
    return derive_key(derive_key(seed ^ 0x636f6f7264ULL, nef), step);
}

template <class T, int L>
class PackRunner {
public:
    using Kernel = PackKernel<T, L>;
    static constexpr int S = Kernel::S;
    static constexpr int B = kBlock;

    PackRunner(const NefConfig& config, const ParamLayout& layout, const FitProblem<T>& problem)
        : kernel_(config, layout), problem_(problem), dim_(problem.dim), ch_(problem.channels), pdim_(layout.param_dim)
    {
        P_.assign(pdim_ * L, T(0));
        G_.assign(pdim_ * L, T(0));
        out_.assign(static_cast<std::size_t>(ch_) * S, T(0));
        gout_.assign(static_cast<std::size_t>(ch_) * S, T(0));
    }

    // Lanes >= count replicate the first NeF of the pack; their results are discarded.
    void load(std::size_t first, int count, const T* rows)
    {
        first_ = first;
        count_ = count;
        for (std::size_t p = 0; p < pdim_; ++p) {
            for (int l = 0; l < L; ++l) P_[p * L + l] = rows[lane_nef(l) * pdim_ + p];
        }
        M_.assign(pdim_ * L, T(0));
        V_.assign(pdim_ * L, T(0));
        t_ = 0;
        frozen_.fill(false);
        full_ready_ = false;
    }

    void store(T* rows) const
    {
        for (int l = 0; l < count_; ++l) {
            for (std::size_t p = 0; p < pdim_; ++p) rows[(first_ + l) * pdim_ + p] = P_[p * L + l];
        }
    }

    void store_grads(T* rows) const
    {
        for (int l = 0; l < count_; ++l) {
            for (std::size_t p = 0; p < pdim_; ++p) rows[(first_ + l) * pdim_ + p] = G_[p * L + l];
        }
    }

    // Blocks covering every coordinate of every lane.
    void use_full_coordinates()
    {
        if (!full_ready_) {
            const std::size_t m = problem_.n_coords;
            build_blocks(m, [](int, std::size_t k) { return k; }, full_x_, full_t_, full_valid_);
            full_ready_ = true;
        }
        active_ = Active::full;
    }

    // Per-lane minibatch of `batch` coordinates drawn with replacement from the
    // stream (seed, global nef index, step).
    void use_minibatch(int batch, std::uint64_t seed, std::uint64_t index_offset, int step)
    {
        const std::size_t m = problem_.n_coords;
        std::array<std::uint64_t, L> keys{};
        for (int l = 0; l < L; ++l) keys[l] = sampling_key(seed, index_offset + lane_nef(l), static_cast<std::uint64_t>(step));
        build_blocks(static_cast<std::size_t>(batch),
                     [&](int l, std::size_t k) {
                         const std::uint64_t r = counter_hash(keys[l], k);
                         return static_cast<std::size_t>((static_cast<unsigned __int128>(r) * m) >> 64);
                     },
                     batch_x_, batch_t_, batch_valid_);
        active_ = Active::batch;
    }

    // Loss (mean over coordinates and channels) per lane; gradients into G when requested.
    std::array<double, L> evaluate(bool with_grad)
    {
        const auto& X = active_ == Active::full ? full_x_ : batch_x_;
        const auto& Tg = active_ == Active::full ? full_t_ : batch_t_;
        const auto& valid = active_ == Active::full ? full_valid_ : batch_valid_;
        const std::size_t blocks = valid.size();
        std::size_t coords = 0;
        for (int v : valid) coords += static_cast<std::size_t>(v);

        if (with_grad) std::fill(G_.begin(), G_.end(), T(0));
        std::array<double, L> loss{};
        const std::size_t xs = static_cast<std::size_t>(dim_) * S;
        const std::size_t ts = static_cast<std::size_t>(ch_) * S;
        const double denom = static_cast<double>(coords) * ch_;
        const T inv = static_cast<T>(problem_.task == Task::image_mse ? 2.0 / denom : 1.0 / denom);

        for (std::size_t blk = 0; blk < blocks; ++blk) {
            const T* x = X.data() + blk * xs;
            const T* t = Tg.data() + blk * ts;
            kernel_.forward(P_.data(), x, out_.data());
            const int nv = valid[blk];
            for (int c = 0; c < ch_; ++c) {
                for (int b = 0; b < B; ++b) {
                    for (int l = 0; l < L; ++l) {
                        const std::size_t i = (static_cast<std::size_t>(c) * B + b) * L + l;
                        if (b >= nv) {
                            gout_[i] = T(0);
                            continue;
                        }
                        const T y = out_[i];
                        if (problem_.task == Task::image_mse) {
                            const T diff = y - t[i];
                            loss[l] += static_cast<double>(diff) * static_cast<double>(diff);
                            gout_[i] = inv * diff;
                        } else {
                            const T z = y;
                            const T target = t[i];
                            const T zpos = z > T(0) ? z : T(0);
                            loss[l] += static_cast<double>(zpos - z * target + std::log1p(std::exp(-std::fabs(z))));
                            const T e = std::exp(-std::fabs(z));
                            const T sig = z >= T(0) ? T(1) / (T(1) + e) : e / (T(1) + e);
                            gout_[i] = inv * (sig - target);
                        }
                    }
                }
            }
            if (with_grad) kernel_.backward(P_.data(), x, gout_.data(), G_.data());
        }
        for (int l = 0; l < L; ++l) loss[l] /= denom;
        return loss;
    }

    // Raw outputs for every coordinate, written as out[(nef * M + m) * c + ch].
    void forward_all(T* outputs, std::vector<std::vector<T>>* tape)
    {
        use_full_coordinates();
        const std::size_t m_total = problem_.n_coords;
        const std::size_t xs = static_cast<std::size_t>(dim_) * S;
        for (std::size_t blk = 0; blk < full_valid_.size(); ++blk) {
            kernel_.forward(P_.data(), full_x_.data() + blk * xs, out_.data());
            const int nv = full_valid_[blk];
            for (int l = 0; l < count_; ++l) {
                const std::size_t nef = first_ + static_cast<std::size_t>(l);
                for (int b = 0; b < nv; ++b) {
                    const std::size_t m = blk * B + static_cast<std::size_t>(b);
                    for (int c = 0; c < ch_; ++c) {
                        outputs[(nef * m_total + m) * ch_ + c] = out_[(static_cast<std::size_t>(c) * B + b) * L + l];
                    }
                }
            }
            if (tape != nullptr) {
                const auto stages = kernel_.stages();
                for (std::size_t s = 0; s < stages.size(); ++s) {
                    const int w = stages[s].width;
                    auto& dst = (*tape)[s];
                    for (int l = 0; l < count_; ++l) {
                        const std::size_t nef = first_ + static_cast<std::size_t>(l);
                        for (int b = 0; b < nv; ++b) {
                            const std::size_t m = blk * B + static_cast<std::size_t>(b);
                            for (int u = 0; u < w; ++u) {
                                dst[(nef * m_total + m) * w + u] = stages[s].data[(static_cast<std::size_t>(u) * B + b) * L + l];
                            }
                        }
                    }
                }
            }
        }
    }

    void adam(const FitOptions& opts)
    {
        ++t_;
        const AdamCoeffs<T> c(opts, t_);
        bool any_frozen = false;
        for (int l = 0; l < L; ++l) any_frozen = any_frozen || frozen_[l];
        const std::size_t total = pdim_ * L;
        T* __restrict p = P_.data();
        T* __restrict m = M_.data();
        T* __restrict v = V_.data();
        const T* __restrict g = G_.data();
        if (!any_frozen) {
            for (std::size_t i = 0; i < total; ++i) adam_update(p[i], g[i], m[i], v[i], c);
        } else {
            for (std::size_t i = 0; i < total; ++i) {
                if (!frozen_[i % L]) adam_update(p[i], g[i], m[i], v[i], c);
            }
        }
    }

    void freeze(int lane) { frozen_[static_cast<std::size_t>(lane)] = true; }
    bool frozen(int lane) const { return frozen_[static_cast<std::size_t>(lane)]; }
    int count() const noexcept { return count_; }
    std::vector<std::string> stage_names() const
    {
        std::vector<std::string> names;
        for (const auto& s : kernel_.stages()) names.push_back(s.name);
        return names;
    }
    std::vector<int> stage_widths() const
    {
        std::vector<int> w;
        for (const auto& s : kernel_.stages()) w.push_back(s.width);
        return w;
    }

private:
    enum class Active { full, batch };

    std::size_t lane_nef(int l) const noexcept { return l < count_ ? static_cast<std::size_t>(l) + first_ : first_; }

    template <class IndexFn>
    void build_blocks(std::size_t count, IndexFn index, std::vector<T>& X, std::vector<T>& Tg, std::vector<int>& valid)
    {
        const std::size_t blocks = (count + B - 1) / B;
        X.assign(blocks * dim_ * S, T(0));
        Tg.assign(blocks * ch_ * S, T(0));
        valid.assign(blocks, 0);
        for (std::size_t blk = 0; blk < blocks; ++blk) {
            const int nv = static_cast<int>(std::min<std::size_t>(B, count - blk * B));
            valid[blk] = nv;
            T* x = X.data() + blk * dim_ * S;
            T* t = Tg.data() + blk * ch_ * S;
            for (int b = 0; b < nv; ++b) {
                for (int l = 0; l < L; ++l) {
                    const std::size_t nef = lane_nef(l);
                    const std::size_t k = index(l, blk * B + static_cast<std::size_t>(b));
                    const T* src = problem_.coord(nef, k);
                    for (int a = 0; a < dim_; ++a) x[(static_cast<std::size_t>(a) * B + b) * L + l] = src[a];
                    if (problem_.targets.empty()) continue;
                    const T* tg = problem_.targets.data() + (nef * problem_.n_coords + k) * ch_;
                    for (int c = 0; c < ch_; ++c) t[(static_cast<std::size_t>(c) * B + b) * L + l] = tg[c];
                }
            }
        }
    }

    Kernel kernel_;
    const FitProblem<T>& problem_;
    int dim_;
    int ch_;
    std::size_t pdim_;
    std::size_t first_ = 0;
    int count_ = 0;
    std::int64_t t_ = 0;
    std::array<bool, L> frozen_{};

    std::vector<T> P_, G_, M_, V_;
    std::vector<T> out_, gout_;
    bool full_ready_ = false;
    Active active_ = Active::full;
    std::vector<T> full_x_, full_t_, batch_x_, batch_t_;
    std::vector<int> full_valid_, batch_valid_;
};

// A pack of `count` consecutive NeFs evaluated with a kernel of `width` lanes.
struct PackUnit {
    std::size_t first = 0;
    int count = 0;
    int width = 1;
};

// Full packs of `lanes`; the remainder goes to the narrowest power-of-two
// width that holds it, so small batches carry little padding.
inline std::vector<PackUnit> plan_units(std::size_t n, int lanes)
{
    std::vector<PackUnit> units;
    std::size_t first = 0;
    while (n - first >= static_cast<std::size_t>(lanes)) {
        units.push_back({first, lanes, lanes});
        first += static_cast<std::size_t>(lanes);
    }
    if (first < n) {
        const int rest = static_cast<int>(n - first);
        int width = 1;
        while (width < rest) width *= 2;
        units.push_back({first, rest, width});
    }
    return units;
}

template <int W, int Max, class Fn>
void dispatch_width(int width, Fn&& fn)
{
    if constexpr (W > Max) {
        (void)width;
        (void)fn;
    } else {
        if (width == W) fn(std::integral_constant<int, W>{});
        else dispatch_width<W * 2, Max>(width, std::forward<Fn>(fn));
    }
}

// Runs body(runner, first, count) over every pack, spreading packs over threads
// in contiguous chunks. `sequential` evaluates one NeF at a time on one thread.
template <class T, class Body>
void for_each_pack(const FitProblem<T>& problem, const NefConfig& config, const ParamLayout& layout, bool sequential,
                   int threads, Body&& body)
{
    constexpr int L = native_lanes<T>;
    const auto units = plan_units(problem.n, sequential ? 1 : L);
    parallel_chunks(units.size(), sequential ? 1 : threads, [&](std::size_t begin, std::size_t end) {
        std::unique_ptr<PackRunner<T, L>> full;
        std::unique_ptr<PackRunner<T, 1>> single;
        for (std::size_t u = begin; u < end; ++u) {
            const PackUnit unit = units[u];
            dispatch_width<1, L>(unit.width, [&](auto w) {
                constexpr int W = decltype(w)::value;
                if constexpr (W == L) {
                    if (!full) full = std::make_unique<PackRunner<T, L>>(config, layout, problem);
                    body(*full, unit.first, unit.count);
                } else if constexpr (W == 1) {
                    if (!single) single = std::make_unique<PackRunner<T, 1>>(config, layout, problem);
                    body(*single, unit.first, unit.count);
                } else {
                    PackRunner<T, W> runner(config, layout, problem);
                    body(runner, unit.first, unit.count);
                }
            });
        }
    });
}

} // namespace nef::detail
