#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nef/errors.hpp"
#include "nef/study.hpp"
#include "nef/version.hpp"

using namespace nef;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const auto p = fs::temp_directory_path() / ("nef_study_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run_cli(const std::string& args, const fs::path& log)
{
    const std::string cmd = std::string(NFD_BINARY) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

StudySpec small_spec()
{
    StudySpec spec;
    spec.kind = StudyKind::shared_vs_random;
    spec.base = NefConfig::siren(2, 1, 8, 3, 9.0);
    spec.fit.steps = 20;
    spec.classifier.mlp_widths = {16};
    spec.classifier.epochs = 3;
    spec.grid = default_grid(spec.kind, spec.base, spec.fit);
    spec.grid.steps = {20, 40};
    return spec;
}

} // namespace

TEST_CASE("presets")
{
    const auto& s = find_preset("siren-phase2");
    CHECK(s.config.arch == Arch::siren);
    CHECK(*s.config.omega0 == 9.0);
    CHECK(s.config.num_layers == 3);
    CHECK(s.fit.lr == 1e-3);
    CHECK(s.fit.weight_decay == 0.0);
    CHECK(find_preset("rffnet-phase2").fit.lr == 1e-4);
    CHECK(*find_preset("rffnet-phase2").config.rff_std == 0.1);
    CHECK(find_preset("rffnet-phase2").config.num_layers == 5);
    CHECK(find_preset("fouriernet-phase2").fit.lr == 5e-3);
    CHECK(param_layout(find_preset("fouriernet-phase2").config).entries.size() > 0);
    CHECK_THROWS_AS(find_preset("nope"), ConfigError);
}

TEST_CASE("default grids")
{
    const auto cfg = NefConfig::siren(2, 1, 32, 3, 9.0);
    FitOptions fo;
    CHECK(default_grid(StudyKind::shared_vs_random, cfg, fo).inits.size() == 2);
    CHECK(default_grid(StudyKind::overtraining, cfg, fo).steps == std::vector<int>{1000, 5000, 50000});
    CHECK(default_grid(StudyKind::expressivity, cfg, fo).hidden == std::vector<int>{8, 32, 128});
    CHECK(parse_study_kind("expressivity") == StudyKind::expressivity);
    CHECK_THROWS_AS(parse_study_kind("x"), ConfigError);
}

TEST_CASE("make_dataset carries provenance and metrics")
{
    const auto signals = synthetic_blobs(6, 8, 8, 2);
    FitOptions fo;
    fo.steps = 5;
    fo.seed = 7;
    const auto res = fit<double>(signals, NefConfig::siren(2, 1, 8, 3, 9.0), fo);
    const auto rr = recon_report(res.params, signals);
    const auto ds = make_dataset(signals, res, fo, &rr);
    CHECK(ds.size() == 6);
    CHECK(ds.config.scalar_mode == ScalarMode::f32);
    CHECK(ds.provenance.fit_scalar_mode == ScalarMode::f64);
    CHECK(ds.provenance.signal_hash == signals.content_hash());
    CHECK(ds.provenance.creation_seed == 7);
    CHECK(ds.provenance.library_version == kLibraryVersion);
    CHECK(fit_options_from_json(ds.provenance.fit_options) == fo);
    REQUIRE(ds.metric("psnr_on") != nullptr);
    REQUIRE(ds.metric("psnr_off") != nullptr);
    CHECK(ds.metric("final_loss")->values.size() == 6);
    CHECK(ds.labels == signals.labels);
    CHECK(static_cast<float>(res.params.values[3]) == ds.params.values[3]);
}

TEST_CASE("study grid, resume and invalidation")
{
    const auto dir = scratch("grid");
    const auto signals = synthetic_blobs(60, 8, 8, 1);
    auto spec = small_spec();
    int computed = 0;
    const auto first = run_study(spec, signals, dir, [&](const StudyRecord&, bool reused) { computed += reused ? 0 : 1; });
    REQUIRE(first.size() == 4);
    CHECK(computed == 4);
    for (const auto& r : first) {
        CHECK(r.status == "ok");
        CHECK(fs::exists(dir / r.dataset));
        CHECK(fs::exists(dir / (r.config_hash + ".train.json")));
        CHECK(r.test_acc >= 0.0);
        CHECK(r.test_acc <= 1.0);
        CHECK(r.nmi >= 0.0);
        CHECK(r.nmi <= 1.0);
    }
    CHECK(fs::exists(dir / "records.csv"));

    computed = 0;
    const auto again = run_study(spec, signals, dir, [&](const StudyRecord&, bool reused) { computed += reused ? 0 : 1; });
    CHECK(computed == 0);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(again[i].config_hash == first[i].config_hash);
        CHECK(again[i].test_acc == first[i].test_acc);
    }

    // any fit option change produces new hashes
    spec.fit.lr = 2e-3;
    computed = 0;
    run_study(spec, signals, dir, [&](const StudyRecord&, bool reused) { computed += reused ? 0 : 1; });
    CHECK(computed == 4);

    // a missing artifact forces recomputation
    spec.fit.lr = 1e-3;
    fs::remove(dir / first[0].dataset);
    computed = 0;
    run_study(spec, signals, dir, [&](const StudyRecord&, bool reused) { computed += reused ? 0 : 1; });
    CHECK(computed == 1);
    fs::remove_all(dir);
}

TEST_CASE("failed grid points are recorded and the run continues")
{
    const auto dir = scratch("fail");
    const auto signals = synthetic_blobs(60, 8, 8, 1);
    auto spec = small_spec();
    spec.grid.hidden = {0, 8};
    spec.grid.inits = {InitMode::shared};
    spec.grid.steps = {20};
    const auto recs = run_study(spec, signals, dir);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].status.rfind("error", 0) == 0);
    CHECK(recs[1].status == "ok");
    fs::remove_all(dir);
}

TEST_CASE("study records json round trip")
{
    StudyRecord r;
    r.config_hash = "abc";
    r.on_mean = std::numeric_limits<double>::infinity();
    r.ratio = std::numeric_limits<double>::quiet_NaN();
    r.test_acc = 0.75;
    const auto back = study_record_from_json(to_json(r));
    CHECK(back.config_hash == "abc");
    CHECK(back.test_acc == 0.75);
}

TEST_CASE("cli")
{
    const auto dir = scratch("cli");
    const auto log = dir / "log.txt";
    const std::string fit_args = "fit --arch siren --hidden 8 --layers 3 --omega0 9 --steps 30 --lr 1e-3 --init shared --seed 1 --synthetic blobs:12:8 --out ";
    CHECK(run_cli(fit_args + (dir / "a.nfd").string(), log) == 0);
    CHECK(run_cli(fit_args + (dir / "b.nfd").string(), log) == 0);
    CHECK(slurp(dir / "a.nfd") == slurp(dir / "b.nfd"));
    const auto ds = read_dataset(dir / "a.nfd");
    CHECK(ds.size() == 12);
    CHECK(*ds.config.omega0 == 9.0);

    // usage errors
    CHECK(run_cli("fit --arch siren --hidden 8 --synthetic blobs:4:8 --out " + (dir / "c.nfd").string(), log) == 1);
    CHECK(slurp(log).find("omega0") != std::string::npos);
    CHECK(run_cli("fit --preset siren-phase2 --steps -3 --synthetic blobs:4:8 --out " + (dir / "c.nfd").string(), log) == 1);
    CHECK(run_cli("inspect", log) == 1);
    CHECK(run_cli("--scalar f16 inspect " + (dir / "a.nfd").string(), log) == 1);

    // data errors
    CHECK(run_cli("inspect " + (dir / "missing.nfd").string(), log) == 2);
    {
        auto bytes = slurp(dir / "a.nfd");
        bytes[bytes.size() / 2] ^= 0x10;
        std::ofstream(dir / "bad.nfd", std::ios::binary) << bytes;
    }
    CHECK(run_cli("inspect --digest " + (dir / "bad.nfd").string(), log) == 2);

    // inspect prints the header
    CHECK(run_cli("inspect " + (dir / "a.nfd").string(), log) == 0);
    const auto header = nlohmann::json::parse(slurp(log));
    CHECK(header.at("n").get<int>() == 12);
    CHECK(run_cli("inspect --digest " + (dir / "a.nfd").string(), log) == 0);
    CHECK(nlohmann::json::parse(slurp(log)).at("params_sha256") == dataset_digests(ds).params);

    // classify: train, save, apply; class-count mismatch is a data error
    const auto model = (dir / "m.nfc").string();
    CHECK(run_cli("classify --data " + (dir / "a.nfd").string() + " --epochs 2 --split 0.5,0.25,0.25 --save " + model, log) == 0);
    CHECK(run_cli("classify --data " + (dir / "a.nfd").string() + " --model " + model, log) == 0);
    NeuralDataset three = ds;
    three.class_names.push_back("third");
    write_dataset(three, dir / "three.nfd");
    CHECK(run_cli("classify --data " + (dir / "three.nfd").string() + " --model " + model, log) == 2);

    // metrics refuses foreign signals
    CHECK(run_cli("metrics --data " + (dir / "a.nfd").string() + " --synthetic blobs:12:8 --seed 1", log) == 0);
    CHECK(run_cli("metrics --data " + (dir / "a.nfd").string() + " --synthetic blobs:12:8 --seed 2", log) == 2);

    // study grid cardinality
    CHECK(run_cli("study --kind shared_vs_random --preset siren-phase2 --hidden 8 --grid-steps 20,40 --synthetic blobs:60:8 --epochs 2 --out " +
                      (dir / "st").string(),
                  log) == 0);
    const auto csv = slurp(dir / "st" / "records.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
    fs::remove_all(dir);
}
