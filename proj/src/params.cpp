#include "nef/params.hpp"

#include <cmath>
#include <numbers>

#include "nef/rng.hpp"

namespace nef {

std::string_view to_string(InitMode mode) noexcept { return mode == InitMode::shared ? "shared" : "random"; }

InitMode parse_init_mode(std::string_view name)
{
    if (name == "shared") return InitMode::shared;
    if (name == "random") return InitMode::random;
    throw ConfigError("unknown init mode '" + std::string(name) + "'");
}

template <class T>
bool ParamBatch<T>::all_finite() const noexcept
{
    for (T v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

template struct ParamBatch<float>;
template struct ParamBatch<double>;

namespace {

// Uniform bound for a weight tensor. Biases are zero for every architecture.
double weight_bound(const NefConfig& c, const TensorEntry& e, bool first_layer)
{
    // the first RFFNet layer reads the [sin, cos] concatenation
    const double fan_in = (c.arch == Arch::rffnet && e.name.rfind("L1.", 0) == 0) ? 2.0 * e.cols : e.cols;
    switch (c.arch) {
    case Arch::siren:
        return first_layer ? 1.0 / fan_in : std::sqrt(6.0 / fan_in) / *c.omega0;
    case Arch::rffnet:
        return std::sqrt(6.0 / fan_in);
    case Arch::fouriernet:
        if (e.role == TensorRole::filter_weight) return std::sqrt(*c.input_scale / (c.num_layers - 1));
        return std::sqrt(6.0 / fan_in);
    }
    return 0.0;
}

} // namespace

template <class T>
void init_row(const NefConfig& config, const ParamLayout& layout, std::uint64_t seed, std::uint64_t index, std::span<T> out)
{
    if (out.size() != layout.param_dim) throw ConfigError("init_row: row length does not match layout");
    Stream rng(seed, index);
    for (const auto& e : layout.entries) {
        T* dst = out.data() + e.offset;
        const std::size_t n = e.size();
        switch (e.role) {
        case TensorRole::bias:
            for (std::size_t i = 0; i < n; ++i) dst[i] = T(0);
            break;
        case TensorRole::filter_phase:
            for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(rng.uniform(-std::numbers::pi, std::numbers::pi));
            break;
        case TensorRole::weight:
        case TensorRole::filter_weight: {
            if (config.arch == Arch::rffnet && e.name == "emb") {
                for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(rng.normal());
                break;
            }
            const double bound = weight_bound(config, e, e.src_group == 0);
            for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(rng.uniform(-bound, bound));
            break;
        }
        }
    }
}

template <class T>
ParamBatch<T> init_params(const NefConfig& config, std::size_t n, std::uint64_t seed, InitMode mode, std::uint64_t index_offset)
{
    if (n < 1) throw ConfigError("init_params: n must be >= 1");
    ParamBatch<T> batch(config, n);
    const ParamLayout layout = param_layout(config);
    if (mode == InitMode::shared) {
        init_row<T>(config, layout, seed, 0, batch.row(0));
        for (std::size_t i = 1; i < n; ++i) {
            std::copy(batch.row(0).begin(), batch.row(0).end(), batch.row(i).begin());
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) init_row<T>(config, layout, seed, index_offset + i, batch.row(i));
    }
    return batch;
}

template <class T>
std::vector<std::span<T>> unflatten(const ParamLayout& layout, std::span<T> theta)
{
    if (theta.size() != layout.param_dim) throw ConfigError("unflatten: length does not match layout");
    std::vector<std::span<T>> out;
    out.reserve(layout.entries.size());
    for (const auto& e : layout.entries) out.push_back(theta.subspan(e.offset, e.size()));
    return out;
}

template <class T>
std::vector<T> flatten(const ParamLayout& layout, const std::vector<std::span<const T>>& tensors)
{
    if (tensors.size() != layout.entries.size()) throw ConfigError("flatten: tensor count does not match layout");
    std::vector<T> out(layout.param_dim);
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        const auto& e = layout.entries[t];
        if (tensors[t].size() != e.size()) throw ConfigError("flatten: tensor '" + e.name + "' has wrong size");
        std::copy(tensors[t].begin(), tensors[t].end(), out.begin() + static_cast<std::ptrdiff_t>(e.offset));
    }
    return out;
}

template <class T>
void permute_group(const ParamLayout& layout, int group, std::span<const int> perm, std::span<T> theta)
{
    const int size = layout.groups.at(static_cast<std::size_t>(group)).size;
    if (static_cast<int>(perm.size()) != size) throw ConfigError("permute_group: permutation has wrong length");
    for (const auto& e : layout.entries) {
        T* base = theta.data() + e.offset;
        if (e.dst_group == group) {
            // Rows follow the permutation.
            std::vector<T> copy(base, base + e.size());
            for (int r = 0; r < e.rows; ++r) {
                const int src_row = perm[static_cast<std::size_t>(r)];
                for (int col = 0; col < e.cols; ++col) {
                    base[static_cast<std::size_t>(r) * e.cols + col] = copy[static_cast<std::size_t>(src_row) * e.cols + col];
                }
            }
        }
        if (e.src_group == group) {
            std::vector<T> copy(base, base + e.size());
            for (int r = 0; r < e.rows; ++r) {
                for (int col = 0; col < e.cols; ++col) {
                    base[static_cast<std::size_t>(r) * e.cols + col] =
                        copy[static_cast<std::size_t>(r) * e.cols + perm[static_cast<std::size_t>(col)]];
                }
            }
        }
    }
}

#define NEF_INSTANTIATE(T)                                                                                          \
    template void init_row<T>(const NefConfig&, const ParamLayout&, std::uint64_t, std::uint64_t, std::span<T>);    \
    template ParamBatch<T> init_params<T>(const NefConfig&, std::size_t, std::uint64_t, InitMode, std::uint64_t);  \
    template std::vector<std::span<T>> unflatten<T>(const ParamLayout&, std::span<T>);                              \
    template std::vector<std::span<const T>> unflatten<const T>(const ParamLayout&, std::span<const T>);            \
    template std::vector<T> flatten<T>(const ParamLayout&, const std::vector<std::span<const T>>&);                 \
    template void permute_group<T>(const ParamLayout&, int, std::span<const int>, std::span<T>);

NEF_INSTANTIATE(float)
NEF_INSTANTIATE(double)

#undef NEF_INSTANTIATE

} // namespace nef
