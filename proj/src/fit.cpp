#include "nef/fit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "nef/errors.hpp"
#include "nef/parallel.hpp"
#include "pack_runner.hpp"

namespace nef {

using json = nlohmann::json;

void FitOptions::validate() const
{
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
    if (!(weight_decay >= 0.0) || lr * weight_decay >= 1.0) throw ConfigError("weight_decay must satisfy 0 <= lr * weight_decay < 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must be in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must be in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
    if (coord_batch_size < 0) throw ConfigError("coord_batch_size must be >= 0");
    if (log_every < 1) throw ConfigError("log_every must be >= 1");
}

json to_json(const FitOptions& o)
{
    return json{{"steps", o.steps},
                {"lr", o.lr},
                {"weight_decay", o.weight_decay},
                {"adam_beta1", o.adam_beta1},
                {"adam_beta2", o.adam_beta2},
                {"adam_eps", o.adam_eps},
                {"coord_batch_size", o.coord_batch_size},
                {"seed", o.seed},
                {"init_mode", std::string(to_string(o.init_mode))},
                {"log_every", o.log_every}};
}

FitOptions fit_options_from_json(const json& j)
{
    if (!j.is_object()) throw ConfigError("fit options must be a JSON object");
    FitOptions o;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "steps") o.steps = value.get<int>();
            else if (key == "lr") o.lr = value.get<double>();
            else if (key == "weight_decay") o.weight_decay = value.get<double>();
            else if (key == "adam_beta1") o.adam_beta1 = value.get<double>();
            else if (key == "adam_beta2") o.adam_beta2 = value.get<double>();
            else if (key == "adam_eps") o.adam_eps = value.get<double>();
            else if (key == "coord_batch_size") o.coord_batch_size = value.get<int>();
            else if (key == "seed") o.seed = value.get<std::uint64_t>();
            else if (key == "init_mode") o.init_mode = parse_init_mode(value.get<std::string>());
            else if (key == "log_every") o.log_every = value.get<int>();
            else throw ConfigError("unknown fit option '" + key + "'");
        } catch (const json::exception& e) {
            throw ConfigError("fit option '" + key + "': " + e.what());
        }
    }
    o.validate();
    return o;
}

json to_json(const FitReport& r)
{
    json nefs = json::array();
    for (const auto& n : r.nefs) {
        json trace = json::array();
        for (const auto& [step, loss] : n.trace) trace.push_back({step, loss});
        json rec{{"initial_loss", n.initial_loss}, {"final_loss", n.final_loss}, {"trace", trace}, {"wall_s", n.wall_s}};
        if (n.frozen) {
            rec["frozen"] = true;
            rec["frozen_step"] = n.frozen_step;
        }
        nefs.push_back(std::move(rec));
    }
    return json{{"total_s", r.total_s},
                {"steps_per_s", r.steps_per_s},
                {"nefs_per_s", r.nefs_per_s},
                {"threads", r.threads},
                {"faulted", r.faulted},
                {"nefs", nefs}};
}

json to_json(const BenchResult& r)
{
    return json{{"config", to_json(r.config)},
                {"n_nefs", r.n_nefs},
                {"steps", r.steps},
                {"threads", r.threads},
                {"batched_s", r.batched_s},
                {"sequential_s", r.sequential_s},
                {"speedup", r.speedup},
                {"identical", r.identical}};
}

template <class T>
FitProblem<T> FitProblem<T>::from_signals(const SignalBatch& signals)
{
    signals.validate();
    FitProblem p;
    p.n = signals.n;
    if (signals.kind == SignalKind::image) {
        p.task = Task::image_mse;
        p.dim = 2;
        p.channels = signals.channels;
        const CoordSet grid = grid_coords(signals.height, signals.width);
        p.n_coords = grid.size();
        p.shared_coords = true;
        p.coords.assign(grid.coords.begin(), grid.coords.end());
        p.targets.resize(signals.images.size());
        std::transform(signals.images.begin(), signals.images.end(), p.targets.begin(),
                       [](float v) { return static_cast<T>(v); });
    } else {
        p.task = Task::occupancy_bce;
        p.dim = signals.point_dim;
        p.channels = 1;
        p.n_coords = static_cast<std::size_t>(signals.n_points);
        p.shared_coords = false;
        p.coords.resize(signals.points.size());
        std::transform(signals.points.begin(), signals.points.end(), p.coords.begin(),
                       [](float v) { return static_cast<T>(v); });
        p.targets.resize(signals.occ.size());
        std::transform(signals.occ.begin(), signals.occ.end(), p.targets.begin(),
                       [](std::uint8_t v) { return static_cast<T>(v); });
    }
    return p;
}

template <class T>
FitProblem<T> FitProblem<T>::from_coords(const CoordSet& coords, std::span<const T> targets, std::size_t n, Task task)
{
    FitProblem p;
    p.task = task;
    p.n = n;
    p.dim = coords.dim;
    p.n_coords = coords.size();
    p.shared_coords = true;
    if (p.n_coords == 0 || n == 0) throw DataError("fit problem needs at least one coordinate and one NeF");
    if (targets.size() % (n * p.n_coords) != 0) throw DataError("targets do not match n x coords x channels");
    p.channels = static_cast<int>(targets.size() / (n * p.n_coords));
    if (task == Task::occupancy_bce) {
        if (p.channels != 1) throw DataError("occupancy targets must be [n x M]");
        for (T t : targets) {
            if (t != T(0) && t != T(1)) throw DataError("occupancy targets must be 0 or 1");
        }
    }
    p.coords.resize(coords.coords.size());
    std::transform(coords.coords.begin(), coords.coords.end(), p.coords.begin(), [](double v) { return static_cast<T>(v); });
    p.targets.assign(targets.begin(), targets.end());
    return p;
}

namespace {

template <class T>
void check_problem(const FitProblem<T>& problem, const NefConfig& config)
{
    config.validate();
    if (problem.n == 0 || problem.n_coords == 0) throw DataError("empty fit problem");
    if (config.in_dim != problem.dim || config.out_dim != problem.channels) {
        throw ConfigError("NeF config maps " + std::to_string(config.in_dim) + " -> " + std::to_string(config.out_dim) +
                          " but the signals are " + std::to_string(problem.dim) + " -> " +
                          std::to_string(problem.channels));
    }
    if (problem.targets.size() != problem.n * problem.n_coords * static_cast<std::size_t>(problem.channels)) {
        throw DataError("target array has the wrong size");
    }
}

using clock = std::chrono::steady_clock;

template <class T>
void fit_packs(const FitProblem<T>& problem, ParamBatch<T>& params, const ParamLayout& layout, const FitOptions& opts,
               const ExecOptions& exec, int threads, FitReport& report)
{
    detail::for_each_pack(problem, params.config, layout, exec.sequential, threads, [&](auto& runner, std::size_t first, int count) {
        const auto t0 = clock::now();
        runner.load(first, count, params.values.data());
        const bool minibatch = opts.coord_batch_size > 0;
        if (!minibatch) runner.use_full_coordinates();

        for (int step = 0; step < opts.steps; ++step) {
            if (minibatch) runner.use_minibatch(opts.coord_batch_size, opts.seed, exec.index_offset, step);
            const auto loss = runner.evaluate(true);
            for (int l = 0; l < count; ++l) {
                auto& rec = report.nefs[first + l];
                if (runner.frozen(l)) continue;
                if (!std::isfinite(loss[l])) {
                    runner.freeze(l);
                    rec.frozen = true;
                    rec.frozen_step = step;
                    continue;
                }
                if (step == 0) rec.initial_loss = loss[l];
                if (step % opts.log_every == 0) rec.trace.emplace_back(step, loss[l]);
            }
            runner.adam(opts);
        }

        runner.use_full_coordinates();
        const auto final_loss = runner.evaluate(false);
        for (int l = 0; l < count; ++l) {
            auto& rec = report.nefs[first + l];
            if (opts.steps == 0) rec.initial_loss = final_loss[l];
            rec.final_loss = final_loss[l];
            if (!std::isfinite(final_loss[l]) && !rec.frozen) {
                rec.frozen = true;
                rec.frozen_step = opts.steps;
            }
            if (rec.frozen) rec.final_loss = std::numeric_limits<double>::quiet_NaN();
        }
        runner.store(params.values.data());
        const double dt = std::chrono::duration<double>(clock::now() - t0).count();
        for (int l = 0; l < count; ++l) report.nefs[first + l].wall_s = dt / count;
    });
}

template <class T>
void grads_packs(const FitProblem<T>& problem, const ParamBatch<T>& params, const ParamLayout& layout,
                 const ExecOptions& exec, LossGrad<T>& out)
{
    detail::for_each_pack(problem, params.config, layout, exec.sequential, resolve_threads(exec.threads),
                          [&](auto& runner, std::size_t first, int count) {
                              runner.load(first, count, params.values.data());
                              runner.use_full_coordinates();
                              const auto loss = runner.evaluate(true);
                              for (int l = 0; l < count; ++l) out.loss[first + l] = loss[l];
                              runner.store_grads(out.grads.values.data());
                          });
}

} // namespace

template <class T>
LossGrad<T> loss_and_grad(const ParamBatch<T>& params, const FitProblem<T>& problem, const ExecOptions& exec)
{
    check_problem(problem, params.config);
    if (params.n_nefs != problem.n) throw DataError("parameter batch and problem disagree on the number of NeFs");
    const ParamLayout layout = param_layout(params.config);
    LossGrad<T> out{std::vector<double>(problem.n, 0.0), ParamBatch<T>(params.config, problem.n)};
    grads_packs(problem, params, layout, exec, out);
    for (std::size_t i = 0; i < out.loss.size(); ++i) {
        if (!std::isfinite(out.loss[i])) throw NumericFault(i, "non-finite loss");
    }
    return out;
}

template <class T>
LossGrad<T> loss_and_grad(const ParamBatch<T>& params, const CoordSet& coords, std::span<const T> targets, Task task,
                          const ExecOptions& exec)
{
    return loss_and_grad(params, FitProblem<T>::from_coords(coords, targets, params.n_nefs, task), exec);
}

template <class T>
void adam_step(ParamBatch<T>& params, const ParamBatch<T>& grads, OptState<T>& state, const FitOptions& opts)
{
    const std::size_t size = params.values.size();
    if (grads.values.size() != size) throw DataError("gradient shape does not match parameters");
    if (state.m.empty() && state.v.empty() && state.t == 0) state = OptState<T>(size);
    if (state.m.size() != size || state.v.size() != size) throw DataError("optimizer state shape does not match parameters");
    ++state.t;
    const detail::AdamCoeffs<T> c(opts, state.t);
    for (std::size_t i = 0; i < size; ++i) detail::adam_update(params.values[i], grads.values[i], state.m[i], state.v[i], c);
}

template <class T>
FitResult<T> fit(const FitProblem<T>& problem, ParamBatch<T> init, const FitOptions& opts, const ExecOptions& exec)
{
    opts.validate();
    check_problem(problem, init.config);
    if (init.n_nefs != problem.n) throw DataError("initial parameters and problem disagree on the number of NeFs");
    const ParamLayout layout = param_layout(init.config);

    FitResult<T> result{std::move(init), {}};
    FitReport& report = result.report;
    report.nefs.resize(problem.n);
    report.threads = exec.sequential ? 1 : resolve_threads(exec.threads);

    const auto t0 = clock::now();
    fit_packs(problem, result.params, layout, opts, exec, report.threads, report);
    report.total_s = std::chrono::duration<double>(clock::now() - t0).count();

    const double total = std::max(report.total_s, 1e-12);
    report.steps_per_s = static_cast<double>(problem.n) * opts.steps / total;
    report.nefs_per_s = static_cast<double>(problem.n) / total;
    for (std::size_t i = 0; i < problem.n; ++i) {
        if (report.nefs[i].frozen) report.faulted.push_back(i);
    }
    return result;
}

template <class T>
FitResult<T> fit(const SignalBatch& signals, const NefConfig& config, const FitOptions& opts, const ExecOptions& exec)
{
    opts.validate();
    const FitProblem<T> problem = FitProblem<T>::from_signals(signals);
    check_problem(problem, config);
    auto init = init_params<T>(config, problem.n, opts.seed, opts.init_mode, exec.index_offset);
    return fit(problem, std::move(init), opts, exec);
}

namespace {

template <class T>
void forward_packs(const FitProblem<T>& problem, const ParamBatch<T>& params, const ParamLayout& layout, int threads,
                   T* out, ForwardTape<T>* tape)
{
    if (tape != nullptr) {
        detail::PackRunner<T, 1> probe(params.config, layout, problem);
        tape->names = probe.stage_names();
        tape->widths = probe.stage_widths();
        tape->values.clear();
        for (int w : tape->widths) tape->values.emplace_back(problem.n * problem.n_coords * static_cast<std::size_t>(w));
    }
    detail::for_each_pack(problem, params.config, layout, false, threads, [&](auto& runner, std::size_t first, int count) {
        runner.load(first, count, params.values.data());
        runner.forward_all(out, tape != nullptr ? &tape->values : nullptr);
    });
}

template <class T>
std::vector<T> forward_problem(const ParamBatch<T>& params, const FitProblem<T>& problem, ForwardTape<T>* tape, int threads)
{
    params.config.validate();
    if (params.config.in_dim != problem.dim) throw ConfigError("coordinate dimension does not match the NeF input dimension");
    std::vector<T> out(problem.n * problem.n_coords * static_cast<std::size_t>(params.config.out_dim));
    if (problem.n == 0 || problem.n_coords == 0) return out;
    const ParamLayout layout = param_layout(params.config);
    forward_packs<T>(problem, params, layout, resolve_threads(threads), out.data(), tape);
    return out;
}

} // namespace

template <class T>
std::vector<T> forward(const ParamBatch<T>& params, const CoordSet& coords, ForwardTape<T>* tape, int threads)
{
    FitProblem<T> problem;
    problem.n = params.n_nefs;
    problem.dim = coords.dim;
    problem.channels = params.config.out_dim;
    problem.n_coords = coords.size();
    problem.shared_coords = true;
    problem.coords.resize(coords.coords.size());
    std::transform(coords.coords.begin(), coords.coords.end(), problem.coords.begin(), [](double v) { return static_cast<T>(v); });
    return forward_problem(params, problem, tape, threads);
}

template <class T>
std::vector<T> forward_points(const ParamBatch<T>& params, std::span<const T> coords, std::size_t n_coords, int threads)
{
    FitProblem<T> problem;
    problem.n = params.n_nefs;
    problem.dim = params.config.in_dim;
    problem.channels = params.config.out_dim;
    problem.n_coords = n_coords;
    problem.shared_coords = false;
    if (coords.size() != params.n_nefs * n_coords * static_cast<std::size_t>(problem.dim)) {
        throw DataError("per-NeF coordinates must be [n x M x dim]");
    }
    problem.coords.assign(coords.begin(), coords.end());
    return forward_problem<T>(params, problem, nullptr, threads);
}

namespace {

template <class T>
BenchResult bench_impl(const NefConfig& config, std::size_t n_nefs, int steps, int image_size, int threads,
                       std::uint64_t seed)
{
    const SignalBatch signals = synthetic_blobs(n_nefs, image_size, image_size, seed);
    FitOptions opts;
    opts.steps = steps;
    opts.seed = seed;
    opts.init_mode = InitMode::random;
    opts.log_every = std::max(1, steps);

    BenchResult r;
    r.config = config;
    r.n_nefs = n_nefs;
    r.steps = steps;
    r.threads = resolve_threads(threads);

    ExecOptions batched;
    batched.threads = threads;
    auto a = fit<T>(signals, config, opts, batched);
    r.batched_s = a.report.total_s;

    ExecOptions sequential;
    sequential.sequential = true;
    auto b = fit<T>(signals, config, opts, sequential);
    r.sequential_s = b.report.total_s;

    r.speedup = r.sequential_s / std::max(r.batched_s, 1e-12);
    r.identical = a.params.values == b.params.values;
    return r;
}

} // namespace

BenchResult bench(const NefConfig& config, std::size_t n_nefs, int steps, int image_size, int threads, std::uint64_t seed)
{
    if (n_nefs == 0) throw ConfigError("bench needs at least one NeF");
    if (image_size < 2) throw ConfigError("bench image size must be >= 2");
    if (config.in_dim != 2 || config.out_dim != 1) throw ConfigError("bench uses 2-D grayscale images: in_dim 2, out_dim 1");
    return config.scalar_mode == ScalarMode::f64 ? bench_impl<double>(config, n_nefs, steps, image_size, threads, seed)
                                                 : bench_impl<float>(config, n_nefs, steps, image_size, threads, seed);
}

#define NEF_FIT_INSTANTIATE(T)                                                                                          \
    template struct FitProblem<T>;                                                                                      \
    template LossGrad<T> loss_and_grad<T>(const ParamBatch<T>&, const FitProblem<T>&, const ExecOptions&);              \
    template LossGrad<T> loss_and_grad<T>(const ParamBatch<T>&, const CoordSet&, std::span<const T>, Task,              \
                                          const ExecOptions&);                                                          \
    template void adam_step<T>(ParamBatch<T>&, const ParamBatch<T>&, OptState<T>&, const FitOptions&);                  \
    template FitResult<T> fit<T>(const FitProblem<T>&, ParamBatch<T>, const FitOptions&, const ExecOptions&);           \
    template FitResult<T> fit<T>(const SignalBatch&, const NefConfig&, const FitOptions&, const ExecOptions&);         \
    template std::vector<T> forward<T>(const ParamBatch<T>&, const CoordSet&, ForwardTape<T>*, int);                    \
    template std::vector<T> forward_points<T>(const ParamBatch<T>&, std::span<const T>, std::size_t, int);

NEF_FIT_INSTANTIATE(float)
NEF_FIT_INSTANTIATE(double)

} // namespace nef
