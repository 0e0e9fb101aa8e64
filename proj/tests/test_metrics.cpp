#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "nef/fit.hpp"
#include "nef/metrics.hpp"
#include "nef/rng.hpp"

using namespace nef;

namespace {

// Adjusted Rand index from the contingency table.
double ari(const std::vector<int>& a, const std::vector<int>& b)
{
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> ra, rb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        joint[{a[i], b[i]}] += 1;
        ra[a[i]] += 1;
        rb[b[i]] += 1;
    }
    auto c2 = [](double x) { return x * (x - 1) / 2; };
    double sj = 0, sa = 0, sb = 0;
    for (auto& [k, v] : joint) sj += c2(v);
    for (auto& [k, v] : ra) sa += c2(v);
    for (auto& [k, v] : rb) sb += c2(v);
    const double expected = sa * sb / c2(static_cast<double>(a.size()));
    return (sj - expected) / (0.5 * (sa + sb) - expected);
}

std::vector<double> blobs(std::size_t per, std::size_t dim, std::vector<int>& labels)
{
    Stream s(3, 1);
    std::vector<double> X;
    for (int c = 0; c < 2; ++c) {
        for (std::size_t i = 0; i < per; ++i) {
            for (std::size_t d = 0; d < dim; ++d) X.push_back(s.normal() * 0.3 + (c == 0 ? -5.0 : 5.0));
            labels.push_back(c);
        }
    }
    return X;
}

} // namespace

TEST_CASE("psnr closed forms")
{
    const std::vector<double> t{0.1, 0.2, 0.3, 0.4};
    CHECK(std::isinf(psnr(std::span<const double>(t), std::span<const double>(t))));
    std::vector<double> p = t;
    for (auto& v : p) v += 0.1;
    CHECK(std::fabs(psnr(std::span<const double>(p), std::span<const double>(t)) - 20.0) <= 1e-12);
    CHECK(std::fabs(psnr_from_mse(0.01) - 20.0) <= 1e-12);
    CHECK(psnr_from_mse(1.0) == 0.0);
    CHECK(psnr_from_mse(0.02) < psnr_from_mse(0.01));
    std::vector<double> p2 = p, t2 = t;
    for (auto& v : p2) v += 3.0;
    for (auto& v : t2) v += 3.0;
    CHECK(mse(std::span<const double>(p2), std::span<const double>(t2)) == doctest::Approx(0.01).epsilon(1e-9));
    CHECK_THROWS_AS(psnr(std::span<const double>(), std::span<const double>()), DataError);
}

TEST_CASE("iou identities")
{
    const std::vector<double> logits{1.0, 1.0, -1.0, -1.0};
    const std::vector<std::uint8_t> same{1, 1, 0, 0}, disjoint{0, 0, 1, 1}, shifted{0, 1, 1, 0};
    CHECK(iou(std::span<const double>(logits), std::span<const std::uint8_t>(same)) == 1.0);
    CHECK(iou(std::span<const double>(logits), std::span<const std::uint8_t>(disjoint)) == 0.0);
    CHECK(std::fabs(iou(std::span<const double>(logits), std::span<const std::uint8_t>(shifted)) - 1.0 / 3.0) <= 1e-12);
    const std::vector<double> none{-1, -1};
    const std::vector<std::uint8_t> empty{0, 0};
    CHECK(iou(std::span<const double>(none), std::span<const std::uint8_t>(empty)) == 1.0);
}

TEST_CASE("nmi cases")
{
    const std::vector<int> a{0, 0, 1, 1, 2, 2}, c{5, 5, 5, 5, 5, 5}, perm{2, 2, 0, 0, 1, 1};
    CHECK(std::fabs(nmi(a, a) - 1.0) <= 1e-12);
    CHECK(std::fabs(nmi(a, perm) - 1.0) <= 1e-12);
    CHECK(nmi(c, a) == 0.0);
    CHECK(nmi(a, c) == 0.0);
    CHECK(std::fabs(nmi(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 0, 1})) <= 1e-12);
    const std::vector<int> x{0, 1, 1, 0, 2, 1, 0}, y{1, 1, 0, 0, 1, 0, 0};
    CHECK(nmi(x, y) == doctest::Approx(nmi(y, x)).epsilon(1e-14));
    // hand computation: a = {0,0,1,1}, b = {0,0,0,1}
    const double hb = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25));
    const double mi = 0.5 * std::log(0.5 / (0.5 * 0.75)) + 0.25 * std::log(0.25 / (0.5 * 0.75)) + 0.25 * std::log(0.25 / (0.5 * 0.25));
    CHECK(nmi(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 0, 0, 1}) == doctest::Approx(mi / (0.5 * (std::log(2.0) + hb))).epsilon(1e-12));
    CHECK(nmi(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 0, 0, 1}, NmiNorm::geometric) ==
          doctest::Approx(mi / std::sqrt(std::log(2.0) * hb)).epsilon(1e-12));
}

TEST_CASE("kmeans")
{
    std::vector<int> labels;
    const auto X = blobs(50, 4, labels);
    auto r = kmeans(X, 100, 4, {2, 5, 100, 1});
    CHECK(ari(r.assignments, labels) == doctest::Approx(1.0));
    for (std::size_t i = 1; i < r.inertia_trace.size(); ++i) CHECK(r.inertia_trace[i] <= r.inertia_trace[i - 1] + 1e-9);

    auto all = kmeans(std::span<const double>(X.data(), 10 * 4), 10, 4, {10, 3, 50, 2});
    CHECK(all.inertia == doctest::Approx(0.0));

    auto one = kmeans(X, 100, 4, {1, 1, 10, 0});
    std::vector<double> mean(4, 0.0);
    for (std::size_t i = 0; i < 100; ++i) for (int d = 0; d < 4; ++d) mean[d] += X[i * 4 + d] / 100.0;
    double tv = 0.0;
    for (std::size_t i = 0; i < 100; ++i) for (int d = 0; d < 4; ++d) tv += (X[i * 4 + d] - mean[d]) * (X[i * 4 + d] - mean[d]);
    CHECK(one.inertia == doctest::Approx(tv).epsilon(1e-10));

    // duplicates force empty clusters
    const std::vector<double> dup{1, 1, 1, 1, 1, 1, 2, 2};
    auto d = kmeans(dup, 4, 2, {3, 2, 20, 0});
    for (int a : d.assignments) CHECK((a >= 0 && a < 3));
    CHECK(d.inertia == doctest::Approx(0.0));

    auto again = kmeans(X, 100, 4, {2, 5, 100, 1});
    CHECK(again.assignments == r.assignments);
}

TEST_CASE("pairwise distances")
{
    const auto cfg = NefConfig::siren(2, 1, 4, 2, 1.0);
    auto shared = init_params<double>(cfg, 6, 1, InitMode::shared);
    auto s = pairwise_distances(shared);
    CHECK(s.exact);
    CHECK(s.pairs == 15);
    CHECK(s.max == 0.0);

    ParamBatch<double> two(cfg, 2);
    two.values[two.param_dim] = 1.0;
    auto t = pairwise_distances(two);
    CHECK(t.pairs == 1);
    CHECK(t.mean == 1.0);
    std::size_t total = 0;
    for (auto c : t.counts) total += c;
    CHECK(total == 1);

    auto rnd = init_params<double>(cfg, 800, 3, InitMode::random);
    auto exact = pairwise_distances(rnd, 1000000, 0, 20);
    auto sampled = pairwise_distances(rnd, 100000, 5, 20);
    CHECK(exact.exact);
    CHECK(!sampled.exact);
    CHECK(std::fabs(sampled.mean - exact.mean) / exact.mean < 0.02);
    std::size_t sum = 0;
    for (auto c : sampled.counts) sum += c;
    CHECK(sum == sampled.pairs);
    CHECK(histogram_csv(t).rfind("bin_lo,bin_hi,count\n", 0) == 0);
}

TEST_CASE("reconstruction report")
{
    SignalBatch ramp;
    ramp.n = 2;
    ramp.height = ramp.width = 12;
    ramp.channels = 1;
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < 12; ++i)
            for (int j = 0; j < 12; ++j) ramp.images.push_back(0.2f + 0.6f * static_cast<float>(j) / 11.0f);
    ramp.labels = {0, 0};
    ramp.class_names = {"ramp"};
    FitOptions opts;
    opts.steps = 1500;
    opts.lr = 1e-3;
    const auto cfg = NefConfig::siren(2, 1, 16, 3, 3.0);
    auto fitted = fit<float>(ramp, cfg, opts);
    auto r = recon_report(fitted.params, ramp);
    REQUIRE(r.has_off_grid());
    CHECK(r.on_grid[0] > 35.0);
    CHECK(std::fabs(r.ratio[0] - 1.0) <= 0.05);

    auto untrained = init_params<float>(cfg, 2, 4, InitMode::shared);
    auto u = recon_report(untrained, ramp);
    CHECK(u.on_grid[0] == u.on_grid[1]);
    CHECK(to_json(u)["metric_kind"] == "psnr_db");

    auto shapes = synthetic_shapes(2, 512, 0.5, 0.05, 1);
    shapes.shapes.clear();
    auto occ = recon_report(init_params<float>(NefConfig::siren(3, 1, 8, 3, 5.0), 2, 0, InitMode::random), shapes);
    CHECK(occ.kind == MetricKind::iou);
    CHECK(!occ.has_off_grid());
    CHECK(to_json(occ)["off_grid"].is_null());
}
