#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "nef/errors.hpp"
#include "nef/fit.hpp"
#include "nef/rng.hpp"
#include "oracle.hpp"

using namespace nef;

namespace {

std::vector<NefConfig> tiny_configs(int out_dim)
{
    return {NefConfig::siren(2, out_dim, 6, 3, 2.0), NefConfig::rffnet(2, out_dim, 5, 3, 1.5),
            NefConfig::fouriernet(2, out_dim, 6, 3, 4.0)};
}

struct GradCase {
    CoordSet coords;
    std::vector<double> targets;
};

GradCase make_case(int out_dim, bool bce, std::uint64_t seed)
{
    GradCase c;
    c.coords = offgrid_coords(4, 4, OffgridMode::uniform, seed);
    Stream s(seed, 7);
    for (std::size_t i = 0; i < c.coords.size() * out_dim; ++i) c.targets.push_back(bce ? (s.uniform() < 0.5 ? 0.0 : 1.0) : s.uniform());
    return c;
}

double max_rel_fd_error(const NefConfig& cfg, bool bce, std::uint64_t seed)
{
    auto params = init_params<double>(cfg, 1, seed, InitMode::random);
    const auto c = make_case(cfg.out_dim, bce, seed);
    const auto lg = loss_and_grad<double>(params, c.coords, c.targets, bce ? Task::occupancy_bce : Task::image_mse);
    std::vector<double> theta(params.values.begin(), params.values.end());
    CHECK(lg.loss[0] == doctest::Approx(oracle::loss(cfg, theta, c.coords.coords, c.targets, bce)).epsilon(1e-12));
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t p = 0; p < theta.size(); ++p) {
        auto tp = theta, tm = theta;
        tp[p] += h;
        tm[p] -= h;
        const double fd =
            (oracle::loss(cfg, tp, c.coords.coords, c.targets, bce) - oracle::loss(cfg, tm, c.coords.coords, c.targets, bce)) / (2 * h);
        const double g = lg.grads.values[p];
        const double rel = std::fabs(g - fd) / std::max({std::fabs(g), std::fabs(fd), 1e-3});
        worst = std::max(worst, rel);
    }
    return worst;
}

std::vector<float> constant_image(std::size_t n, int size, float value)
{
    return std::vector<float>(n * size * size, value);
}

SignalBatch images(std::size_t n, int size, std::uint64_t seed) { return synthetic_blobs(n, size, size, seed); }

} // namespace

TEST_CASE("reverse-mode gradients agree with central differences")
{
    for (bool bce : {false, true}) {
        for (const auto& cfg : tiny_configs(1)) {
            CAPTURE(to_string(cfg.arch));
            CAPTURE(bce);
            CHECK(param_layout(cfg).param_dim <= 200);
            CHECK(max_rel_fd_error(cfg, bce, 11) <= 1e-6);
        }
    }
    for (const auto& cfg : tiny_configs(2)) {
        CAPTURE(to_string(cfg.arch));
        CHECK(max_rel_fd_error(cfg, false, 5) <= 1e-6);
    }
}

TEST_CASE("batched forward matches the scalar reference")
{
    for (const auto& cfg : tiny_configs(3)) {
        auto params = init_params<double>(cfg, 21, 3, InitMode::random);
        const auto coords = grid_coords(5, 7);
        ForwardTape<double> tape;
        const auto out = forward(params, coords, &tape);
        CHECK(!tape.names.empty());
        for (std::size_t i = 0; i < params.n_nefs; ++i) {
            const std::vector<double> theta(params.row(i).begin(), params.row(i).end());
            for (std::size_t m = 0; m < coords.size(); ++m) {
                const auto ref = oracle::forward(cfg, theta, {coords.coords[2 * m], coords.coords[2 * m + 1]});
                for (int ch = 0; ch < 3; ++ch) CHECK(out[(i * coords.size() + m) * 3 + ch] == doctest::Approx(ref[ch]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("loss identities")
{
    const auto cfg = NefConfig::siren(2, 1, 8, 3, 10.0);
    auto params = init_params<float>(cfg, 3, 1, InitMode::random);
    const auto coords = grid_coords(6, 6);
    const auto pred = forward(params, coords);
    auto lg = loss_and_grad<float>(params, coords, pred, Task::image_mse);
    for (double l : lg.loss) CHECK(l == 0.0);
    CHECK(std::all_of(lg.grads.values.begin(), lg.grads.values.end(), [](float g) { return g == 0.0f; }));

    auto zeros = ParamBatch<double>(cfg, 2);
    const std::vector<double> ones(2 * coords.size(), 1.0);
    auto bce = loss_and_grad<double>(zeros, coords, ones, Task::occupancy_bce);
    for (double l : bce.loss) CHECK(l == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    std::vector<double> bad(2 * coords.size(), 0.5);
    bad[coords.size() + 3] = std::numeric_limits<double>::quiet_NaN();
    try {
        loss_and_grad<double>(zeros, coords, bad, Task::image_mse);
        FAIL("expected a numeric fault");
    } catch (const NumericFault& e) {
        CHECK(e.nef_index() == 1);
    }
}

TEST_CASE("adam identities")
{
    const auto cfg = NefConfig::siren(2, 1, 4, 2, 1.0);
    FitOptions opts;
    opts.lr = 1e-2;
    opts.adam_eps = 1e-300;
    auto params = init_params<double>(cfg, 2, 9, InitMode::random);
    const auto start = params.values;
    ParamBatch<double> grads(cfg, 2);
    Stream s(1, 2);
    for (auto& g : grads.values) g = s.uniform(-2.0, 2.0);
    OptState<double> st;
    adam_step(params, grads, st, opts);
    CHECK(st.t == 1);
    for (std::size_t i = 0; i < start.size(); ++i) {
        CHECK(params.values[i] - start[i] == doctest::Approx(-opts.lr * (grads.values[i] > 0 ? 1.0 : -1.0)).epsilon(1e-12));
    }

    ParamBatch<double> zero(cfg, 2);
    OptState<double> st0;
    const auto before = params.values;
    adam_step(params, zero, st0, FitOptions{});
    CHECK(params.values == before);
    CHECK(std::all_of(st0.m.begin(), st0.m.end(), [](double v) { return v == 0.0; }));
    CHECK(std::all_of(st0.v.begin(), st0.v.end(), [](double v) { return v == 0.0; }));

    FitOptions wd;
    wd.lr = 3e-3;
    wd.weight_decay = 0.1;
    auto p2 = init_params<double>(cfg, 1, 4, InitMode::random);
    std::vector<oracle::ScalarAdam> ref(p2.values.size(), oracle::ScalarAdam{wd.lr, 0.9, 0.999, 1e-8, wd.weight_decay});
    std::vector<double> expected(p2.values.begin(), p2.values.end());
    OptState<double> st2;
    ParamBatch<double> g2(cfg, 1);
    for (std::size_t i = 0; i < g2.values.size(); ++i) g2.values[i] = 0.25 - 0.01 * static_cast<double>(i);
    for (int step = 0; step < 2; ++step) {
        adam_step(p2, g2, st2, wd);
        for (std::size_t i = 0; i < expected.size(); ++i) expected[i] = ref[i].step(expected[i], g2.values[i]);
    }
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(std::fabs(p2.values[i] - expected[i]) <= 1e-12);
}

TEST_CASE("a constant image is fit by the output bias")
{
    SignalBatch sig;
    sig.n = 1;
    sig.height = sig.width = 16;
    sig.channels = 1;
    sig.images = constant_image(1, 16, 0.5f);
    sig.labels = {0};
    sig.class_names = {"0"};
    FitOptions opts;
    opts.steps = 500;
    opts.lr = 1e-3;
    auto r = fit<float>(sig, NefConfig::siren(2, 1, 16, 3, 30.0), opts);
    // constant-lr Adam settles around 1e-6 here (1.16e-6 measured)
    CHECK(r.report.nefs[0].final_loss <= 1e-5);
}

TEST_CASE("batched and one-at-a-time fits are bit-identical")
{
    for (auto cfg : tiny_configs(1)) {
        CAPTURE(to_string(cfg.arch));
        const auto sig = images(19, 8, 2);
        FitOptions opts;
        opts.steps = 30;
        opts.init_mode = InitMode::random;
        opts.lr = 5e-3;
        ExecOptions seq;
        seq.sequential = true;
        auto a = fit<float>(sig, cfg, opts);
        auto b = fit<float>(sig, cfg, opts, seq);
        CHECK(a.params.values == b.params.values);
        cfg.scalar_mode = ScalarMode::f64;
        auto c = fit<double>(sig, cfg, opts);
        auto d = fit<double>(sig, cfg, opts, seq);
        CHECK(c.params.values == d.params.values);
    }
}

TEST_CASE("results do not depend on threads or on how the batch is split")
{
    const auto cfg = NefConfig::siren(2, 1, 8, 3, 20.0);
    const auto sig = images(40, 8, 3);
    FitOptions opts;
    opts.steps = 20;
    opts.init_mode = InitMode::random;
    opts.coord_batch_size = 17;
    ExecOptions one, four;
    one.threads = 1;
    four.threads = 4;
    auto a = fit<float>(sig, cfg, opts, one);
    auto b = fit<float>(sig, cfg, opts, four);
    CHECK(a.params.values == b.params.values);

    std::vector<std::size_t> tail_idx;
    for (std::size_t i = 25; i < 40; ++i) tail_idx.push_back(i);
    ExecOptions tail;
    tail.index_offset = 25;
    auto c = fit<float>(sig.subset(tail_idx), cfg, opts, tail);
    CHECK(std::equal(c.params.values.begin(), c.params.values.end(), a.params.values.begin() + 25 * a.params.param_dim));
}

TEST_CASE("zero steps with shared init leave identical rows")
{
    const auto cfg = NefConfig::fouriernet(2, 1, 8, 3);
    FitOptions opts;
    opts.steps = 0;
    auto r = fit<float>(images(5, 6, 1), cfg, opts);
    for (std::size_t i = 1; i < 5; ++i) {
        CHECK(std::equal(r.params.row(i).begin(), r.params.row(i).end(), r.params.row(0).begin()));
    }
    CHECK(r.report.nefs[0].initial_loss == r.report.nefs[0].final_loss);
}

TEST_CASE("fitting reduces the median loss")
{
    for (const auto& cfg : {NefConfig::siren(2, 1, 16, 3, 20.0), NefConfig::rffnet(2, 1, 16, 3, 5.0), NefConfig::fouriernet(2, 1, 16, 3)}) {
        FitOptions opts;
        opts.steps = 100;
        opts.lr = 1e-3;
        opts.log_every = 10;
        auto r = fit<float>(images(16, 12, 4), cfg, opts);
        std::vector<double> init, fin;
        for (const auto& n : r.report.nefs) {
            init.push_back(n.initial_loss);
            fin.push_back(n.final_loss);
            CHECK(n.trace.size() == 10);
            for (std::size_t i = 1; i < n.trace.size(); ++i) CHECK(n.trace[i].first > n.trace[i - 1].first);
        }
        std::sort(init.begin(), init.end());
        std::sort(fin.begin(), fin.end());
        CHECK(fin[8] < init[8]);
        CHECK(r.report.total_s >= 0.0);
    }
}

TEST_CASE("fit equals a manual loop of loss_and_grad and adam_step")
{
    const auto cfg = NefConfig::rffnet(2, 1, 8, 3, 3.0);
    const auto sig = images(3, 6, 8);
    FitOptions opts;
    opts.steps = 7;
    opts.lr = 1e-2;
    auto r = fit<float>(sig, cfg, opts);
    auto p = init_params<float>(cfg, 3, opts.seed, opts.init_mode);
    const auto problem = FitProblem<float>::from_signals(sig);
    OptState<float> st;
    for (int s = 0; s < opts.steps; ++s) adam_step(p, loss_and_grad(p, problem).grads, st, opts);
    CHECK(p.values == r.params.values);
}

TEST_CASE("non-finite targets freeze only the affected NeF")
{
    const auto cfg = NefConfig::siren(2, 1, 8, 3, 10.0);
    const auto coords = grid_coords(4, 4);
    std::vector<float> targets(3 * coords.size(), 0.25f);
    targets[coords.size() + 2] = std::numeric_limits<float>::infinity();
    auto problem = FitProblem<float>::from_coords(coords, targets, 3, Task::image_mse);
    FitOptions opts;
    opts.steps = 10;
    auto init = init_params<float>(cfg, 3, 0, InitMode::shared);
    auto r = fit(problem, init, opts);
    REQUIRE(r.report.faulted == std::vector<std::size_t>{1});
    CHECK(r.report.nefs[1].frozen_step == 0);
    CHECK(std::equal(r.params.row(1).begin(), r.params.row(1).end(), init.row(1).begin()));
    CHECK(std::isfinite(r.report.nefs[0].final_loss));
    CHECK(r.params.values != init.values);
}

TEST_CASE("fit options validation and json round trip")
{
    FitOptions o;
    o.steps = 12;
    o.weight_decay = 1e-4;
    o.init_mode = InitMode::random;
    CHECK(fit_options_from_json(to_json(o)) == o);
    FitOptions bad;
    bad.lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(fit_options_from_json(nlohmann::json{{"stepz", 3}}), ConfigError);
    CHECK_THROWS_AS(fit<float>(images(2, 4, 0), NefConfig::siren(3, 1, 4, 2, 1.0), o), ConfigError);
}
