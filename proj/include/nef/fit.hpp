#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nef/config.hpp"
#include "nef/params.hpp"
#include "nef/signals.hpp"

namespace nef {

enum class Task { image_mse, occupancy_bce };

struct FitOptions {
    int steps = 1000;
    double lr = 1e-3;
    double weight_decay = 0.0; // decoupled, applied after the adaptive step
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int coord_batch_size = 0; // 0 = every coordinate on every step
    std::uint64_t seed = 0;
    InitMode init_mode = InitMode::shared;
    int log_every = 100;

    void validate() const;
    bool operator==(const FitOptions&) const = default;
};

nlohmann::json to_json(const FitOptions& opts);
FitOptions fit_options_from_json(const nlohmann::json& j);

// How a fit is executed. None of these fields can change the fitted parameters.
struct ExecOptions {
    int threads = 0; // 0 = hardware concurrency
    // Global index of the first signal; selects the per-NeF init and sampling streams.
    std::uint64_t index_offset = 0;
    // Evaluate one network at a time with the single-lane kernel (the naive path).
    bool sequential = false;
};

template <class T>
struct OptState {
    std::vector<T> m;
    std::vector<T> v;
    std::int64_t t = 0;

    OptState() = default;
    explicit OptState(std::size_t size) : m(size, T(0)), v(size, T(0)) {}
};

struct NefFitRecord {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<std::pair<int, double>> trace; // (step, loss) every log_every steps
    double wall_s = 0.0;                       // amortized share of its pack's time
    bool frozen = false;                       // loss became non-finite; updates stopped
    int frozen_step = -1;
};

struct FitReport {
    std::vector<NefFitRecord> nefs;
    double total_s = 0.0;
    double steps_per_s = 0.0; // optimizer steps (all NeFs) per second
    double nefs_per_s = 0.0;
    int threads = 1;
    std::vector<std::size_t> faulted; // NeFs frozen by the NaN policy
};

nlohmann::json to_json(const FitReport& report);

template <class T>
struct FitResult {
    ParamBatch<T> params;
    FitReport report;
};

// Per-NeF fitting problem: coordinates (shared or per NeF) and targets.
template <class T>
struct FitProblem {
    Task task = Task::image_mse;
    std::size_t n = 0;
    int dim = 2;
    int channels = 1;
    std::size_t n_coords = 0;
    bool shared_coords = true;
    std::vector<T> coords;  // [M x dim] if shared, else [n x M x dim]
    std::vector<T> targets; // [n x M x channels]

    static FitProblem from_signals(const SignalBatch& signals);
    static FitProblem from_coords(const CoordSet& coords, std::span<const T> targets, std::size_t n, Task task);
    const T* coord(std::size_t nef, std::size_t m) const
    {
        return coords.data() + ((shared_coords ? 0 : nef * n_coords) + m) * static_cast<std::size_t>(dim);
    }
};

template <class T>
struct LossGrad {
    std::vector<double> loss; // per NeF, mean over coordinates and channels
    ParamBatch<T> grads;
};

// Exact reverse-mode gradients. Throws NumericFault on a non-finite loss.
// targets: [n x M x c] (image_mse) or [n x M] in {0, 1} (occupancy_bce).
template <class T>
LossGrad<T> loss_and_grad(const ParamBatch<T>& params, const CoordSet& coords, std::span<const T> targets, Task task,
                          const ExecOptions& exec = {});
template <class T>
LossGrad<T> loss_and_grad(const ParamBatch<T>& params, const FitProblem<T>& problem, const ExecOptions& exec = {});

// Bias-corrected Adam, then theta *= (1 - lr * weight_decay). Increments state.t.
template <class T>
void adam_step(ParamBatch<T>& params, const ParamBatch<T>& grads, OptState<T>& state, const FitOptions& opts);

// Fits one NeF per signal. Bit-identical for fixed (seed, config, opts)
// regardless of threads or of how the signals are split across calls
// (given matching ExecOptions::index_offset).
template <class T>
FitResult<T> fit(const SignalBatch& signals, const NefConfig& config, const FitOptions& opts, const ExecOptions& exec = {});
template <class T>
FitResult<T> fit(const FitProblem<T>& problem, ParamBatch<T> init, const FitOptions& opts, const ExecOptions& exec = {});

// Intermediate activations of every NeF at every coordinate.
template <class T>
struct ForwardTape {
    std::vector<std::string> names;
    std::vector<int> widths;
    std::vector<std::vector<T>> values; // per stage: [n x M x width]
};

// Raw network outputs [n x M x out_dim] (logits for occupancy networks).
template <class T>
std::vector<T> forward(const ParamBatch<T>& params, const CoordSet& coords, ForwardTape<T>* tape = nullptr, int threads = 0);
// Per-NeF coordinates: coords is [n x M x dim].
template <class T>
std::vector<T> forward_points(const ParamBatch<T>& params, std::span<const T> coords, std::size_t n_coords, int threads = 0);

struct BenchResult {
    NefConfig config;
    std::size_t n_nefs = 0;
    int steps = 0;
    int threads = 1;
    double batched_s = 0.0;
    double sequential_s = 0.0;
    double speedup = 0.0;
    bool identical = false; // both paths produced bit-identical parameters
};

nlohmann::json to_json(const BenchResult& r);

// Times the batched engine against fitting the same NeFs one at a time with
// the single-lane kernel, on synthetic images of the given size.
BenchResult bench(const NefConfig& config, std::size_t n_nefs, int steps, int image_size = 16, int threads = 0,
                  std::uint64_t seed = 0);

} // namespace nef
