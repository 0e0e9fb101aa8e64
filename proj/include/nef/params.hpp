#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nef/config.hpp"
#include "nef/errors.hpp"

namespace nef {

enum class InitMode { shared, random };

std::string_view to_string(InitMode mode) noexcept;
InitMode parse_init_mode(std::string_view name);

// All NeF parameters of a dataset: one row per NeF in ParamLayout order.
template <class T>
struct ParamBatch {
    NefConfig config;
    std::size_t n_nefs = 0;
    std::size_t param_dim = 0;
    std::vector<T> values; // n_nefs x param_dim, row-major

    ParamBatch() = default;
    ParamBatch(NefConfig cfg, std::size_t n)
        : config(std::move(cfg)), n_nefs(n), param_dim(param_layout(config).param_dim), values(n * param_dim, T(0))
    {
    }

    std::span<T> row(std::size_t i) { return {values.data() + i * param_dim, param_dim}; }
    std::span<const T> row(std::size_t i) const { return {values.data() + i * param_dim, param_dim}; }

    bool all_finite() const noexcept;
};

extern template struct ParamBatch<float>;
extern template struct ParamBatch<double>;

// Draws the parameters of NeF `index` from the stream derived from (seed, index).
template <class T>
void init_row(const NefConfig& config, const ParamLayout& layout, std::uint64_t seed, std::uint64_t index, std::span<T> out);

// shared: every row equals the draw at index 0.
// random: row i is drawn from the stream at index (index_offset + i).
template <class T>
ParamBatch<T> init_params(const NefConfig& config, std::size_t n, std::uint64_t seed, InitMode mode,
                          std::uint64_t index_offset = 0);

// Tensor-wise views of a flat parameter vector.
template <class T>
std::vector<std::span<T>> unflatten(const ParamLayout& layout, std::span<T> theta);
template <class T>
std::vector<T> flatten(const ParamLayout& layout, const std::vector<std::span<const T>>& tensors);

// Applies a permutation of the units of node group `group` to every adjacent
// tensor (rows of incoming weights, entries of its biases/phases, columns of
// outgoing weights). new unit u takes the role of old unit perm[u].
template <class T>
void permute_group(const ParamLayout& layout, int group, std::span<const int> perm, std::span<T> theta);

} // namespace nef
