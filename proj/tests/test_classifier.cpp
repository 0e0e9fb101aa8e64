#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <tuple>

#include "nef/classifier.hpp"
#include "nef/errors.hpp"
#include "nef/io.hpp"
#include "nef/rng.hpp"

using namespace nef;
namespace fs = std::filesystem;

namespace {

// sorted multisets of node features and (src features, dst features, weight, tag) edges
struct Canonical {
    std::vector<std::vector<double>> nodes;
    std::vector<std::vector<double>> edges;
    bool operator==(const Canonical&) const = default;
};

Canonical canonical(const NefGraph& g)
{
    Canonical c;
    for (std::size_t v = 0; v < g.n_nodes; ++v) {
        const auto f = g.node(v);
        c.nodes.emplace_back(f.begin(), f.end());
    }
    for (std::size_t e = 0; e < g.n_edges(); ++e) {
        std::vector<double> row;
        const auto s = g.node(static_cast<std::size_t>(g.edge_src[e]));
        const auto d = g.node(static_cast<std::size_t>(g.edge_dst[e]));
        row.insert(row.end(), s.begin(), s.end());
        row.insert(row.end(), d.begin(), d.end());
        row.push_back(g.edge_weight[e]);
        row.push_back(g.edge_tag[e]);
        c.edges.push_back(std::move(row));
    }
    std::sort(c.nodes.begin(), c.nodes.end());
    std::sort(c.edges.begin(), c.edges.end());
    return c;
}

template <class T>
void permute_hidden(const NefConfig& cfg, std::span<T> theta, std::uint64_t seed)
{
    const auto lay = param_layout(cfg);
    Stream rng(seed, 1);
    for (std::size_t g = 1; g + 1 < lay.groups.size(); ++g) {
        std::vector<int> perm(static_cast<std::size_t>(lay.groups[g].size));
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        permute_group(lay, static_cast<int>(g), std::span<const int>(perm), theta);
    }
}

ClassifierConfig tiny_mlp()
{
    ClassifierConfig c;
    c.mlp_widths = {6, 5};
    c.seed = 3;
    return c;
}

ClassifierConfig tiny_mpnn()
{
    ClassifierConfig c;
    c.model = ModelKind::mpnn;
    c.mp_steps = 2;
    c.mp_hidden = 5;
    c.node_mlp_layers = 3;
    c.node_mlp_width = 7;
    c.edge_mlp_width = 6;
    c.readout_width = 4;
    c.seed = 5;
    return c;
}

std::vector<double> random_inputs(std::size_t n, std::size_t dim, std::uint64_t seed, double spread = 1.0)
{
    Stream rng(seed, 9);
    std::vector<double> x(n * dim);
    for (auto& v : x) v = rng.uniform(-spread, spread);
    return x;
}

double max_rel_fd_error(Classifier& model, const std::vector<double>& x, std::size_t n, const std::vector<int>& y)
{
    std::vector<double> grad;
    model.loss(x, n, y, true, &grad);
    auto theta = model.parameters();
    REQUIRE(grad.size() == theta.size());
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double keep = theta[i];
        theta[i] = keep + h;
        model.set_parameters(theta);
        const double up = model.loss(x, n, y, true);
        theta[i] = keep - h;
        model.set_parameters(theta);
        const double down = model.loss(x, n, y, true);
        theta[i] = keep;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, std::fabs(fd - grad[i]) / std::max({std::fabs(fd), std::fabs(grad[i]), 1e-3}));
    }
    model.set_parameters(theta);
    return worst;
}

// Two gaussian blobs in parameter space, one per class.
NeuralDataset blob_dataset(std::size_t n, double separation, std::uint64_t seed)
{
    NeuralDataset ds;
    ds.config = NefConfig::siren(2, 1, 4, 2, 30.0);
    ds.params = ParamBatch<float>(ds.config, n);
    ds.class_names = {"a", "b"};
    Stream rng(seed, 2);
    std::vector<double> dir(ds.params.param_dim);
    for (auto& v : dir) v = rng.normal();
    const double norm = std::sqrt(std::inner_product(dir.begin(), dir.end(), dir.begin(), 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        ds.labels.push_back(static_cast<std::uint16_t>(label));
        auto row = ds.params.row(i);
        for (std::size_t k = 0; k < row.size(); ++k) {
            row[k] = static_cast<float>(0.3 * rng.normal() + (label == 0 ? -1.0 : 1.0) * separation * dir[k] / norm);
        }
    }
    return ds;
}

} // namespace

TEST_CASE("graph of a small siren")
{
    const auto cfg = NefConfig::siren(2, 1, 4, 3, 30.0);
    const auto lay = param_layout(cfg);
    const std::vector<double> zeros(lay.param_dim, 0.0);
    const auto g = build_graph<double>(cfg, zeros);
    CHECK(g.n_nodes == 11);
    CHECK(g.n_edges() == 28);
    CHECK(g.n_edges() == lay.weight_count());
    CHECK(g.node_dim == 2 + 4);
    for (std::size_t v = 0; v < g.n_nodes; ++v) {
        const auto f = g.node(v);
        CHECK(f[0] == 0.0);
        CHECK(f[1] == 0.0);
        CHECK(std::accumulate(f.begin() + 2, f.end(), 0.0) == 1.0);
    }
    for (double w : g.edge_weight) CHECK(w == 0.0);

    // biases land on their nodes, weights on their edges
    auto theta = init_params<double>(cfg, 1, 7, InitMode::random).values;
    const auto gb = build_graph<double>(cfg, theta);
    const auto& b0 = lay.entry("b0");
    CHECK(gb.node(2)[0] == theta[b0.offset]);
    const auto& w1 = lay.entry("W1");
    // W1[2, 3]: hidden0 node 3 -> hidden1 node 2
    bool found = false;
    for (std::size_t e = 0; e < gb.n_edges(); ++e) {
        if (gb.edge_src[e] == 2 + 3 && gb.edge_dst[e] == 6 + 2) {
            CHECK(gb.edge_weight[e] == theta[w1.offset + 2 * 4 + 3]);
            found = true;
        }
    }
    CHECK(found);
    CHECK_THROWS_AS(build_graph<double>(cfg, std::span<const double>(theta).first(10)), DataError);
}

TEST_CASE("fourier filters attach to the input nodes")
{
    const auto cfg = NefConfig::fouriernet(2, 1, 4, 4);
    const auto lay = param_layout(cfg);
    auto theta = init_params<double>(cfg, 1, 2, InitMode::random).values;
    const auto g = build_graph<double>(cfg, theta);
    CHECK(g.n_nodes == lay.node_count());
    CHECK(g.n_edges() == lay.weight_count());
    int from_input = 0;
    for (std::size_t e = 0; e < g.n_edges(); ++e) from_input += g.edge_src[e] < 2 ? 1 : 0;
    CHECK(from_input == 3 * 4 * 2); // three filters, 4 x 2 each
    // phases are on channel 1 of the z nodes
    const auto& ph = lay.entry("F2.phase");
    CHECK(g.node(static_cast<std::size_t>(g.group_offset[2]))[1] == theta[ph.offset]);

    const auto rff = NefConfig::rffnet(2, 1, 4, 3, 10.0);
    const auto lr = param_layout(rff);
    const auto gr = build_graph<double>(rff, init_params<double>(rff, 1, 2, InitMode::random).values);
    CHECK(gr.n_edges() == lr.weight_count());
    CHECK(gr.n_nodes == lr.node_count());
}

TEST_CASE("hidden permutation gives an isomorphic graph")
{
    for (const auto& cfg : {NefConfig::siren(2, 1, 6, 4, 30.0), NefConfig::fouriernet(2, 3, 5, 4), NefConfig::rffnet(3, 1, 5, 3, 10.0)}) {
        auto theta = init_params<double>(cfg, 1, 11, InitMode::random).values;
        auto perm = theta;
        permute_hidden<double>(cfg, perm, 4);
        REQUIRE(perm != theta);
        CHECK(canonical(build_graph<double>(cfg, theta)) == canonical(build_graph<double>(cfg, perm)));
    }
}

TEST_CASE("classifier config json")
{
    ClassifierConfig c = tiny_mpnn();
    c.standardize = true;
    CHECK(classifier_config_from_json(to_json(c)) == c);
    CHECK_THROWS_AS(classifier_config_from_json({{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(classifier_config_from_json({{"mp_steps", 0}}), ConfigError);
    CHECK_THROWS_AS(classifier_config_from_json({{"mlp_widths", {4, 0}}}), ConfigError);
    CHECK_THROWS_AS(classifier_config_from_json({{"model", "transformer"}}), ConfigError);
    CHECK(ClassifierConfig{}.mp_steps == 4);
    CHECK(ClassifierConfig{}.mp_hidden == 64);
}

TEST_CASE("mlp gradient matches finite differences")
{
    const auto nef = NefConfig::siren(2, 1, 3, 2, 30.0);
    Classifier model(tiny_mlp(), nef, 3);
    const std::size_t n = 7;
    const auto x = random_inputs(n, model.input_dim(), 1);
    const std::vector<int> y{0, 1, 2, 1, 0, 2, 2};
    CHECK(max_rel_fd_error(model, x, n, y) <= 1e-6);

    ClassifierConfig plain = tiny_mlp();
    plain.batch_norm = false;
    Classifier m2(plain, nef, 3);
    CHECK(max_rel_fd_error(m2, x, n, y) <= 1e-6);
}

TEST_CASE("mpnn gradient matches finite differences")
{
    const auto nef = NefConfig::siren(2, 1, 3, 3, 30.0);
    Classifier model(tiny_mpnn(), nef, 2);
    const std::size_t n = 3;
    const auto x = random_inputs(n, model.input_dim(), 2);
    const std::vector<int> y{0, 1, 1};
    CHECK(max_rel_fd_error(model, x, n, y) <= 1e-6);
}

TEST_CASE("batch norm eval is batch independent")
{
    const auto nef = NefConfig::siren(2, 1, 4, 2, 30.0);
    Classifier model(tiny_mlp(), nef, 3);
    const std::size_t n = 16;
    const auto x = random_inputs(n, model.input_dim(), 3);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 3);
    for (int s = 0; s < 5; ++s) model.train_step(x, n, y); // moves the running statistics
    const auto batched = model.logits(x, n);
    CHECK(batched.size() == n * 3);
    for (std::size_t i = 0; i < n; ++i) {
        const auto single = model.logits(std::span<const double>(x).subspan(i * model.input_dim(), model.input_dim()), 1);
        for (std::size_t k = 0; k < 3; ++k) CHECK(std::fabs(single[k] - batched[i * 3 + k]) <= 1e-5);
    }
    CHECK(model.logits(x, n) == batched);
}

TEST_CASE("mpnn is invariant to hidden permutations")
{
    const auto nef = NefConfig::siren(2, 1, 8, 3, 30.0);
    ClassifierConfig cfg;
    cfg.model = ModelKind::mpnn;
    cfg.seed = 1;
    Classifier model(cfg, nef, 4);
    auto a = init_params<float>(nef, 5, 21, InitMode::random);
    auto b = a;
    for (std::size_t i = 0; i < b.n_nefs; ++i) permute_hidden<float>(nef, b.row(i), 30 + i);
    const auto la = model.logits(a);
    const auto lb = model.logits(b);
    REQUIRE(la.size() == 5 * 4);
    double worst = 0.0;
    for (std::size_t i = 0; i < la.size(); ++i) worst = std::max(worst, std::fabs(la[i] - lb[i]));
    CHECK(worst <= 1e-4);
    // no collapse: different NeFs give different logits
    CHECK(std::fabs(la[0] - la[4]) + std::fabs(la[1] - la[5]) > 0.0);

    // the flat-parameter MLP has no such symmetry
    Classifier mlp(tiny_mlp(), nef, 4);
    const auto ma = mlp.logits(a);
    const auto mb = mlp.logits(b);
    double diff = 0.0;
    for (std::size_t i = 0; i < ma.size(); ++i) diff = std::max(diff, std::fabs(ma[i] - mb[i]));
    CHECK(diff > 1e-6);
}

TEST_CASE("checkpoint round trip and corruption")
{
    const auto nef = NefConfig::siren(2, 1, 4, 2, 30.0);
    for (const auto& cfg : {tiny_mlp(), tiny_mpnn()}) {
        Classifier model(cfg, nef, 3);
        const std::size_t n = 6;
        const auto x = random_inputs(n, model.input_dim(), 4);
        const std::vector<int> y{0, 1, 2, 0, 1, 2};
        model.train_step(x, n, y);
        const auto path = fs::temp_directory_path() / "nef_classifier.nfc";
        model.save(path);
        const auto back = Classifier::load(path);
        CHECK(back.logits(x, n) == model.logits(x, n));
        CHECK(back.parameters() == model.parameters());
        CHECK(back.config() == cfg);

        auto bytes = read_file(path);
        Stream rng(8, 8);
        for (int t = 0; t < 50; ++t) {
            auto bad = bytes;
            const auto pos = rng.below(bad.size());
            bad[pos] ^= static_cast<std::byte>(1 + rng.below(255));
            CHECK_THROWS_AS(Classifier::decode(bad), FormatError);
        }
        bytes.pop_back();
        CHECK_THROWS_AS(Classifier::decode(bytes), FormatError);
        fs::remove(path);
    }
}

TEST_CASE("separable blobs are learned")
{
    const auto ds = blob_dataset(200, 2.0, 1);
    ClassifierConfig cfg;
    cfg.mlp_widths = {32, 32};
    cfg.epochs = 30;
    cfg.seed = 2;
    Classifier best(cfg, ds.config, 2);
    const auto rep = train_classifier(ds, SplitSpec{}, cfg, &best);
    CHECK(rep.test_acc >= 0.95);
    CHECK(rep.test_evaluations == 1);
    CHECK(rep.epochs.size() == 30);
    double max_val = 0.0;
    int first_best = 0;
    for (const auto& e : rep.epochs) {
        CHECK(e.train_acc >= 0.0);
        CHECK(e.train_acc <= 1.0);
        CHECK(e.val_acc >= 0.0);
        CHECK(e.val_acc <= 1.0);
        if (e.val_acc > max_val) {
            max_val = e.val_acc;
            first_best = e.epoch;
        }
    }
    CHECK(rep.best_epoch == first_best);
    CHECK(rep.best_val_acc == max_val);
    const std::string csv = epochs_csv(rep);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 31);
    const auto j = to_json(rep);
    CHECK(j.at("test_acc").get<double>() == rep.test_acc);

    // the returned checkpoint reproduces the reported test accuracy
    const auto sp = split(ds, SplitSpec{});
    const auto z = classify(best, ds);
    double hits = 0;
    for (auto i : sp.test) hits += argmax_row(std::span<const double>(z).subspan(i * 2, 2)) == ds.labels[i] ? 1 : 0;
    CHECK(hits / static_cast<double>(sp.test.size()) == rep.test_acc);

    // reproducible bit for bit
    const auto again = train_classifier(ds, SplitSpec{}, cfg);
    CHECK(again.test_acc == rep.test_acc);
    CHECK(epochs_csv(again) == epochs_csv(rep));
}

TEST_CASE("mpnn trains on separable blobs")
{
    const auto ds = blob_dataset(120, 2.0, 5);
    ClassifierConfig cfg = tiny_mpnn();
    cfg.mp_hidden = 16;
    cfg.node_mlp_width = 32;
    cfg.edge_mlp_width = 32;
    cfg.readout_width = 32;
    cfg.epochs = 30;
    cfg.lr = 3e-3;
    cfg.standardize = true;
    const auto rep = train_classifier(ds, SplitSpec{}, cfg);
    CHECK(rep.best_val_acc >= 0.8);
}

TEST_CASE("shuffled labels stay near chance")
{
    auto ds = blob_dataset(300, 2.0, 3);
    Stream rng(3, 4);
    for (auto& l : ds.labels) l = static_cast<std::uint16_t>(rng.below(2));
    ClassifierConfig cfg;
    cfg.mlp_widths = {32};
    cfg.epochs = 10;
    double mean = 0.0;
    for (std::uint64_t s = 0; s < 3; ++s) {
        cfg.seed = s;
        mean += train_classifier(ds, SplitSpec{0.8, 0.1, 0.1, s}, cfg).test_acc / 3.0;
    }
    CHECK(std::fabs(mean - 0.5) <= 0.1);
}

TEST_CASE("degenerate inputs are rejected")
{
    auto ds = blob_dataset(40, 2.0, 1);
    for (auto& l : ds.labels) l = 0;
    ds.class_names = {"a", "b"};
    CHECK_THROWS_AS(train_classifier(ds, SplitSpec{}, ClassifierConfig{}), DataError);

    const auto ok = blob_dataset(40, 2.0, 1);
    Classifier three(tiny_mlp(), ok.config, 3);
    CHECK_THROWS_AS(classify(three, ok), DataError);
    Classifier other(tiny_mlp(), NefConfig::siren(2, 1, 5, 2, 30.0), 2);
    CHECK_THROWS_AS(classify(other, ok), DataError);
    CHECK_THROWS_AS(Classifier(tiny_mlp(), ok.config, 1), ConfigError);
}
