// nfd: fit, evaluate, classify and study neural datasets from the command line.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "nef/classifier.hpp"
#include "nef/dataset.hpp"
#include "nef/errors.hpp"
#include "nef/fit.hpp"
#include "nef/io.hpp"
#include "nef/metrics.hpp"
#include "nef/study.hpp"
#include "nef/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace nef;

namespace {

enum Exit { ok = 0, usage = 1, data = 2, numeric = 3 };

struct Globals {
    std::uint64_t seed = 0;
    int threads = 0;
    std::string scalar = "f32";
    std::string out;
};

void emit(const Globals& g, const std::string& text)
{
    if (g.out.empty()) {
        std::cout << text << '\n';
        return;
    }
    std::ofstream os(g.out);
    if (!os) throw DataError("cannot write " + g.out);
    os << text << '\n';
}

void write_text(const std::string& path, const std::string& text)
{
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path);
    os << text;
}

// ---- signal sources

struct SignalArgs {
    std::string images, nim, points, synthetic;
};

void add_signal_options(CLI::App* app, SignalArgs& a)
{
    app->add_option("--images", a.images, "directory of .pgm/.ppm images with labels.csv");
    app->add_option("--nim", a.nim, "raw image tensor (.nim) with <file>.labels.csv");
    app->add_option("--points", a.points, "occupancy point file (.npt)");
    app->add_option("--synthetic", a.synthetic, "blobs:N:SIZE, textures:N:SIZE or shapes:N:POINTS");
}

bool has_signals(const SignalArgs& a)
{
    return !a.images.empty() || !a.nim.empty() || !a.points.empty() || !a.synthetic.empty();
}

SignalBatch load_signals(const SignalArgs& a, std::uint64_t seed)
{
    const int given = !a.images.empty() + !a.nim.empty() + !a.points.empty() + !a.synthetic.empty();
    if (given != 1) throw ConfigError("give exactly one of --images, --nim, --points, --synthetic");
    if (!a.images.empty()) {
        bool ppm = false;
        if (fs::is_directory(a.images)) {
            for (const auto& e : fs::directory_iterator(a.images)) ppm = ppm || e.path().extension() == ".ppm";
        }
        return load_images(a.images, ppm ? ImageFormat::ppm : ImageFormat::pgm);
    }
    if (!a.nim.empty()) return load_images(a.nim, ImageFormat::raw_tensor);
    if (!a.points.empty()) return load_points(a.points);
    std::vector<std::string> parts;
    std::stringstream ss(a.synthetic);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() != 3) throw ConfigError("--synthetic expects blobs:N:SIZE, textures:N:SIZE or shapes:N:POINTS");
    std::size_t n = 0, m = 0;
    try {
        n = std::stoul(parts[1]);
        m = std::stoul(parts[2]);
    } catch (const std::exception&) {
        throw ConfigError("--synthetic: N and SIZE/POINTS must be integers");
    }
    if (n == 0 || m == 0) throw ConfigError("--synthetic: N and SIZE/POINTS must be positive");
    if (parts[0] == "blobs") return synthetic_blobs(n, static_cast<int>(m), static_cast<int>(m), seed);
    if (parts[0] == "textures") return synthetic_textures(n, static_cast<int>(m), static_cast<int>(m), seed);
    if (parts[0] == "shapes") return synthetic_shapes(n, m, 0.5, 0.05, seed);
    throw ConfigError("--synthetic: unknown generator '" + parts[0] + "'");
}

// ---- architecture / optimizer options

struct ArchArgs {
    std::string preset, arch;
    int hidden = 0, layers = 0;
    double omega0 = 0, rff_std = 0, input_scale = 0;
    CLI::Option *omega0_opt = nullptr, *rff_opt = nullptr, *scale_opt = nullptr, *hidden_opt = nullptr,
                *layers_opt = nullptr;
};

void add_arch_options(CLI::App* app, ArchArgs& a)
{
    std::string names;
    for (const auto& p : presets()) names += (names.empty() ? "" : ", ") + p.name;
    app->add_option("--preset", a.preset, "named settings: " + names);
    app->add_option("--arch", a.arch, "siren, rffnet or fouriernet");
    a.hidden_opt = app->add_option("--hidden", a.hidden, "hidden width");
    a.layers_opt = app->add_option("--layers", a.layers, "number of layers");
    a.omega0_opt = app->add_option("--omega0", a.omega0, "Siren frequency factor");
    a.rff_opt = app->add_option("--rff-std", a.rff_std, "RFFNet embedding scale (sqrt sigma)");
    a.scale_opt = app->add_option("--input-scale", a.input_scale, "FourierNet input scale");
}

struct OptArgs {
    int steps = 0;
    double lr = 0, weight_decay = 0;
    std::string init;
    int coord_batch = 0;
    CLI::Option *steps_opt = nullptr, *lr_opt = nullptr, *wd_opt = nullptr, *cb_opt = nullptr;
};

void add_opt_options(CLI::App* app, OptArgs& o)
{
    o.steps_opt = app->add_option("--steps", o.steps, "optimizer steps");
    o.lr_opt = app->add_option("--lr", o.lr, "Adam learning rate");
    o.wd_opt = app->add_option("--weight-decay", o.weight_decay, "decoupled weight decay");
    app->add_option("--init", o.init, "shared or random");
    o.cb_opt = app->add_option("--coord-batch", o.coord_batch, "coordinates per step (0 = all)");
}

// Preset (if any) overridden by explicit flags; in/out dims follow the signals.
std::pair<NefConfig, FitOptions> resolve(const ArchArgs& a, const OptArgs& o, const Globals& g, const SignalBatch* signals)
{
    NefConfig cfg;
    FitOptions fo;
    if (!a.preset.empty()) {
        const Preset& p = find_preset(a.preset);
        cfg = p.config;
        fo = p.fit;
        if (!a.arch.empty() && parse_arch(a.arch) != cfg.arch) throw ConfigError("--arch disagrees with --preset");
    } else {
        if (a.arch.empty()) throw ConfigError("--arch or --preset is required");
        cfg.arch = parse_arch(a.arch);
        cfg.omega0.reset();
        if (cfg.arch == Arch::siren && a.omega0_opt->count() == 0) throw ConfigError("siren needs --omega0");
        if (cfg.arch == Arch::rffnet && a.rff_opt->count() == 0) throw ConfigError("rffnet needs --rff-std");
        if (cfg.arch == Arch::fouriernet) cfg.input_scale = 16.0;
    }
    if (a.hidden_opt->count() != 0) cfg.hidden_dim = a.hidden;
    if (a.layers_opt->count() != 0) cfg.num_layers = a.layers;
    if (a.omega0_opt->count() != 0) {
        if (cfg.arch != Arch::siren) throw ConfigError("--omega0 only applies to siren");
        cfg.omega0 = a.omega0;
    }
    if (a.rff_opt->count() != 0) {
        if (cfg.arch != Arch::rffnet) throw ConfigError("--rff-std only applies to rffnet");
        cfg.rff_std = a.rff_std;
    }
    if (a.scale_opt->count() != 0) {
        if (cfg.arch != Arch::fouriernet) throw ConfigError("--input-scale only applies to fouriernet");
        cfg.input_scale = a.input_scale;
    }
    cfg.scalar_mode = parse_scalar_mode(g.scalar);
    if (signals != nullptr) {
        if (signals->kind == SignalKind::image) {
            cfg.in_dim = 2;
            cfg.out_dim = signals->channels;
        } else {
            cfg.in_dim = signals->point_dim;
            cfg.out_dim = 1;
        }
    }
    if (o.steps_opt->count() != 0) fo.steps = o.steps;
    if (o.lr_opt->count() != 0) fo.lr = o.lr;
    if (o.wd_opt->count() != 0) fo.weight_decay = o.weight_decay;
    if (!o.init.empty()) fo.init_mode = parse_init_mode(o.init);
    if (o.cb_opt->count() != 0) fo.coord_batch_size = o.coord_batch;
    fo.seed = g.seed;
    fo.log_every = std::max(1, std::min(fo.log_every, std::max(fo.steps, 1)));
    cfg.validate();
    fo.validate();
    return {cfg, fo};
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string p; std::getline(ss, p, ',');) {
        if (!p.empty()) out.push_back(p);
    }
    return out;
}

SplitSpec parse_split(const std::string& s, std::uint64_t seed)
{
    SplitSpec sp;
    sp.seed = seed;
    if (s.empty()) return sp;
    const auto parts = split_list(s);
    if (parts.size() != 3) throw ConfigError("--split expects train,val,test fractions");
    try {
        sp.train = std::stod(parts[0]);
        sp.val = std::stod(parts[1]);
        sp.test = std::stod(parts[2]);
    } catch (const std::exception&) {
        throw ConfigError("--split: fractions must be numbers");
    }
    return sp;
}

// ---- classifier options

struct ClassifierArgs {
    std::string model = "mlp";
    std::string config_file;
    int epochs = 0, batch_size = 0;
    double lr = 0;
    bool standardize = false;
    CLI::Option *epochs_opt = nullptr, *bs_opt = nullptr, *lr_opt = nullptr, *model_opt = nullptr;
};

void add_classifier_options(CLI::App* app, ClassifierArgs& c)
{
    c.model_opt = app->add_option("--classifier", c.model, "mlp or mpnn");
    app->add_option("--classifier-config", c.config_file, "ClassifierConfig JSON file");
    c.epochs_opt = app->add_option("--epochs", c.epochs, "classifier epochs");
    c.bs_opt = app->add_option("--batch-size", c.batch_size, "classifier batch size");
    c.lr_opt = app->add_option("--classifier-lr", c.lr, "classifier learning rate");
    app->add_flag("--standardize", c.standardize, "standardize classifier inputs");
}

ClassifierConfig resolve_classifier(const ClassifierArgs& c, std::uint64_t seed)
{
    ClassifierConfig cfg;
    if (!c.config_file.empty()) {
        std::ifstream in(c.config_file);
        if (!in) throw DataError("cannot read " + c.config_file);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw ConfigError(c.config_file + ": " + e.what());
        }
        cfg = classifier_config_from_json(j);
    }
    if (c.config_file.empty() || c.model_opt->count() != 0) cfg.model = parse_model_kind(c.model);
    if (c.epochs_opt->count() != 0) cfg.epochs = c.epochs;
    if (c.bs_opt->count() != 0) cfg.batch_size = c.batch_size;
    if (c.lr_opt->count() != 0) cfg.lr = c.lr;
    if (c.standardize) cfg.standardize = true;
    cfg.seed = seed;
    cfg.validate();
    return cfg;
}

// ---- subcommands

template <class T>
int fit_and_write(const SignalBatch& signals, const NefConfig& cfg, const FitOptions& fo, const Globals& g,
                  bool metrics, const std::string& offgrid, const std::string& report_path)
{
    ExecOptions exec;
    exec.threads = g.threads;
    const FitResult<T> res = fit<T>(signals, cfg, fo, exec);
    std::optional<ReconReport> rr;
    if (metrics) {
        ReconOptions ro;
        ro.offgrid = parse_offgrid_mode(offgrid);
        ro.seed = g.seed;
        ro.threads = g.threads;
        rr = recon_report(res.params, signals, ro);
    }
    const NeuralDataset ds = make_dataset(signals, res, fo, rr ? &*rr : nullptr);
    write_dataset(ds, g.out);
    if (!report_path.empty()) write_text(report_path, to_json(res.report).dump(2) + "\n");
    json summary{{"out", g.out}, {"n", ds.size()}, {"param_dim", ds.params.param_dim}, {"faulted", res.report.faulted},
                 {"total_s", res.report.total_s}};
    double loss = 0.0;
    for (const auto& r : res.report.nefs) loss += r.final_loss / static_cast<double>(res.report.nefs.size());
    summary["mean_final_loss"] = loss;
    if (rr) summary["recon"] = to_json(*rr);
    std::cout << summary.dump(2) << '\n';
    if (!res.report.faulted.empty()) {
        std::cerr << "nfd fit: " << res.report.faulted.size() << " NeF(s) produced a non-finite loss and were frozen\n";
        return Exit::numeric;
    }
    return Exit::ok;
}

template <class T>
json metrics_json(const NeuralDataset& ds, const SignalBatch* signals, const Globals& g, const std::string& offgrid,
                  std::size_t max_pairs, int k, const std::string& histogram)
{
    ParamBatch<T> p(ds.config, ds.size());
    for (std::size_t i = 0; i < p.values.size(); ++i) p.values[i] = static_cast<T>(ds.params.values[i]);
    json out;
    out["n"] = ds.size();
    if (signals != nullptr) {
        ReconOptions ro;
        ro.offgrid = parse_offgrid_mode(offgrid);
        ro.seed = g.seed;
        ro.threads = g.threads;
        out["recon"] = to_json(recon_report(p, *signals, ro));
    }
    const auto dist = pairwise_distances(p, max_pairs, g.seed, 50, g.threads);
    out["distances"] = to_json(dist);
    if (!histogram.empty()) write_text(histogram, histogram_csv(dist));
    const int classes = k > 0 ? k : dataset_classes(ds);
    KMeansOptions km;
    km.k = std::max(1, classes);
    km.seed = g.seed;
    auto cl = cluster_params(p, ds.labels, classes, km);
    json cj = to_json(cl);
    cj.erase("assignments");
    out["clustering"] = cj;
    return out;
}

json inspect_signals(const fs::path& path)
{
    const auto ext = path.extension();
    const SignalBatch s = ext == ".npt" ? load_points(path) : read_raw_tensor(path);
    json j{{"kind", s.kind == SignalKind::image ? "image" : "occupancy"}, {"n", s.n}, {"content_hash", s.content_hash()}};
    if (s.kind == SignalKind::image) {
        j["height"] = s.height;
        j["width"] = s.width;
        j["channels"] = s.channels;
    } else {
        j["n_points"] = s.n_points;
        j["point_dim"] = s.point_dim;
    }
    return j;
}

int run(int argc, char** argv)
{
    CLI::App app{"nfd: batched neural-field fitting and neural datasets"};
    app.set_version_flag("--version", std::string(kLibraryVersion));
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "seed for fitting, splits and classifiers");
    app.add_option("--threads", g.threads, "worker threads (0 = all cores)");
    app.add_option("--scalar", g.scalar, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    app.add_option("--out", g.out, "output path");

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "fit one NeF per signal and write a .nfd dataset");
    SignalArgs fit_sig;
    ArchArgs fit_arch;
    OptArgs fit_opt;
    std::string fit_offgrid = "midpoint", fit_report;
    bool fit_no_metrics = false;
    add_signal_options(fit_cmd, fit_sig);
    add_arch_options(fit_cmd, fit_arch);
    add_opt_options(fit_cmd, fit_opt);
    fit_cmd->add_option("--offgrid", fit_offgrid, "midpoint or uniform off-grid coordinates");
    fit_cmd->add_option("--report", fit_report, "write the fit report JSON here");
    fit_cmd->add_flag("--no-metrics", fit_no_metrics, "skip reconstruction metrics");

    // metrics
    auto* met_cmd = app.add_subcommand("metrics", "reconstruction, distance and clustering metrics of a dataset");
    std::string met_data, met_offgrid = "midpoint", met_hist;
    std::size_t met_pairs = 1000000;
    int met_k = 0;
    bool met_force = false;
    SignalArgs met_sig;
    met_cmd->add_option("--data", met_data, ".nfd dataset")->required();
    add_signal_options(met_cmd, met_sig);
    met_cmd->add_option("--offgrid", met_offgrid, "midpoint or uniform");
    met_cmd->add_option("--max-pairs", met_pairs, "pairs used for the distance histogram");
    met_cmd->add_option("--k", met_k, "clusters (default: number of classes)");
    met_cmd->add_option("--histogram", met_hist, "write the distance histogram CSV here");
    met_cmd->add_flag("--force", met_force, "accept signals whose hash differs from the dataset provenance");

    // classify
    auto* cls_cmd = app.add_subcommand("classify", "train a weight-space classifier or apply a checkpoint");
    std::string cls_data, cls_model, cls_save, cls_csv, cls_split;
    ClassifierArgs cls_args;
    cls_cmd->add_option("--data", cls_data, ".nfd dataset")->required();
    cls_cmd->add_option("--model", cls_model, "apply this checkpoint instead of training");
    cls_cmd->add_option("--save", cls_save, "write the best-validation checkpoint here");
    cls_cmd->add_option("--csv", cls_csv, "write per-epoch CSV here");
    cls_cmd->add_option("--split", cls_split, "train,val,test fractions (default 0.8,0.1,0.1)");
    add_classifier_options(cls_cmd, cls_args);

    // study
    auto* st_cmd = app.add_subcommand("study", "run a resumable grid of fit -> metrics -> classifier");
    std::string st_kind = "shared_vs_random", st_steps, st_hidden, st_inits, st_seeds, st_split, st_offgrid = "midpoint";
    bool st_drop = false;
    SignalArgs st_sig;
    ArchArgs st_arch;
    OptArgs st_opt;
    ClassifierArgs st_cls;
    st_cmd->add_option("--kind", st_kind, "shared_vs_random, overtraining or expressivity");
    st_cmd->add_option("--grid-steps", st_steps, "comma-separated steps");
    st_cmd->add_option("--grid-hidden", st_hidden, "comma-separated hidden widths");
    st_cmd->add_option("--grid-init", st_inits, "comma-separated init modes");
    st_cmd->add_option("--grid-seeds", st_seeds, "comma-separated seeds");
    st_cmd->add_option("--split", st_split, "train,val,test fractions");
    st_cmd->add_option("--offgrid", st_offgrid, "midpoint or uniform");
    st_cmd->add_flag("--drop-datasets", st_drop, "do not keep the .nfd of each grid point");
    add_signal_options(st_cmd, st_sig);
    add_arch_options(st_cmd, st_arch);
    add_opt_options(st_cmd, st_opt);
    add_classifier_options(st_cmd, st_cls);

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "batched vs one-at-a-time fitting time");
    std::string bench_hidden = "16,128";
    std::size_t bench_n = 1024;
    int bench_steps = 500, bench_size = 16, bench_layers = 3;
    double bench_omega = 30.0;
    bench_cmd->add_option("--hidden", bench_hidden, "comma-separated Siren widths");
    bench_cmd->add_option("--n", bench_n, "number of NeFs");
    bench_cmd->add_option("--steps", bench_steps, "optimizer steps");
    bench_cmd->add_option("--image-size", bench_size, "synthetic image side");
    bench_cmd->add_option("--layers", bench_layers, "Siren layers");
    bench_cmd->add_option("--omega0", bench_omega, "Siren frequency factor");

    // inspect
    auto* ins_cmd = app.add_subcommand("inspect", "print a file header, section digests or a split");
    std::string ins_file, ins_split;
    bool ins_digest = false;
    ins_cmd->add_option("file", ins_file, ".nfd, .nim or .npt file")->required();
    ins_cmd->add_flag("--digest", ins_digest, "SHA-256 of the params and labels payloads and the file");
    ins_cmd->add_option("--split", ins_split, "train,val,test fractions; prints the split indices");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? Exit::ok : Exit::usage;
    }
    parse_scalar_mode(g.scalar);

    if (fit_cmd->parsed()) {
        if (g.out.empty()) throw ConfigError("fit needs --out");
        const SignalBatch signals = load_signals(fit_sig, g.seed);
        const auto [cfg, fo] = resolve(fit_arch, fit_opt, g, &signals);
        if (cfg.scalar_mode == ScalarMode::f64) return fit_and_write<double>(signals, cfg, fo, g, !fit_no_metrics, fit_offgrid, fit_report);
        return fit_and_write<float>(signals, cfg, fo, g, !fit_no_metrics, fit_offgrid, fit_report);
    }
    if (met_cmd->parsed()) {
        const NeuralDataset ds = read_dataset(met_data);
        std::optional<SignalBatch> signals;
        if (has_signals(met_sig)) {
            signals = load_signals(met_sig, g.seed);
            if (!met_force && signals->content_hash() != ds.provenance.signal_hash) {
                throw DataError("signals do not match the dataset provenance (use --force to override)");
            }
            if (signals->n != ds.size()) throw DataError("signal count does not match the dataset");
        }
        const SignalBatch* sp = signals ? &*signals : nullptr;
        const json out = g.scalar == "f64" ? metrics_json<double>(ds, sp, g, met_offgrid, met_pairs, met_k, met_hist)
                                           : metrics_json<float>(ds, sp, g, met_offgrid, met_pairs, met_k, met_hist);
        emit(g, out.dump(2));
        return Exit::ok;
    }
    if (cls_cmd->parsed()) {
        const NeuralDataset ds = read_dataset(cls_data);
        if (!cls_model.empty()) {
            const Classifier model = Classifier::load(cls_model);
            const auto z = classify(model, ds);
            const auto k = static_cast<std::size_t>(model.n_classes());
            std::vector<int> pred(ds.size());
            double hits = 0;
            for (std::size_t i = 0; i < ds.size(); ++i) {
                pred[i] = argmax_row(std::span<const double>(z).subspan(i * k, k));
                hits += pred[i] == ds.labels[i] ? 1 : 0;
            }
            emit(g, json{{"n", ds.size()}, {"accuracy", ds.size() ? hits / static_cast<double>(ds.size()) : 0.0},
                         {"predictions", pred}}
                        .dump(2));
            return Exit::ok;
        }
        const ClassifierConfig cfg = resolve_classifier(cls_args, g.seed);
        Classifier best(cfg, ds.config, std::max(2, dataset_classes(ds)));
        const TrainReport rep = train_classifier(ds, parse_split(cls_split, g.seed), cfg, &best);
        if (!cls_save.empty()) best.save(cls_save);
        if (!cls_csv.empty()) write_text(cls_csv, epochs_csv(rep));
        emit(g, to_json(rep).dump(2));
        return Exit::ok;
    }
    if (st_cmd->parsed()) {
        if (g.out.empty()) throw ConfigError("study needs --out <directory>");
        const SignalBatch signals = load_signals(st_sig, g.seed);
        StudySpec spec;
        spec.kind = parse_study_kind(st_kind);
        std::tie(spec.base, spec.fit) = resolve(st_arch, st_opt, g, &signals);
        spec.grid = default_grid(spec.kind, spec.base, spec.fit);
        try {
            if (!st_steps.empty()) {
                spec.grid.steps.clear();
                for (const auto& s : split_list(st_steps)) spec.grid.steps.push_back(std::stoi(s));
            }
            if (!st_hidden.empty()) {
                spec.grid.hidden.clear();
                for (const auto& s : split_list(st_hidden)) spec.grid.hidden.push_back(std::stoi(s));
            }
            if (!st_seeds.empty()) {
                spec.grid.seeds.clear();
                for (const auto& s : split_list(st_seeds)) spec.grid.seeds.push_back(std::stoull(s));
            }
        } catch (const std::logic_error&) {
            throw ConfigError("grid values must be integers");
        }
        if (!st_inits.empty()) {
            spec.grid.inits.clear();
            for (const auto& s : split_list(st_inits)) spec.grid.inits.push_back(parse_init_mode(s));
        }
        spec.classifier = resolve_classifier(st_cls, g.seed);
        spec.split = parse_split(st_split, g.seed);
        spec.recon.offgrid = parse_offgrid_mode(st_offgrid);
        spec.threads = g.threads;
        spec.keep_datasets = !st_drop;
        const auto records = run_study(spec, signals, g.out, [](const StudyRecord& r, bool reused) {
            std::cerr << (reused ? "[reused] " : "[done]   ") << r.config_hash << " init=" << r.init_mode
                      << " hidden=" << r.hidden_dim << " steps=" << r.steps << " seed=" << r.seed << " on=" << r.on_mean
                      << " ratio=" << r.ratio << " nmi=" << r.nmi << " acc=" << r.test_acc << ' ' << r.status << '\n';
        });
        bool failed = false;
        for (const auto& r : records) failed = failed || r.status != "ok";
        std::cout << records_csv(records);
        return failed ? Exit::data : Exit::ok;
    }
    if (bench_cmd->parsed()) {
        json out = json::array();
        for (const auto& h : split_list(bench_hidden)) {
            int hidden = 0;
            try {
                hidden = std::stoi(h);
            } catch (const std::logic_error&) {
                throw ConfigError("--hidden values must be integers");
            }
            const auto cfg = NefConfig::siren(2, 1, hidden, bench_layers, bench_omega);
            out.push_back(to_json(bench(cfg, bench_n, bench_steps, bench_size, g.threads, g.seed)));
        }
        emit(g, out.dump(2));
        return Exit::ok;
    }
    if (ins_cmd->parsed()) {
        const fs::path path(ins_file);
        if (path.extension() == ".nim" || path.extension() == ".npt") {
            emit(g, inspect_signals(path).dump(2));
            return Exit::ok;
        }
        if (ins_digest || !ins_split.empty()) {
            const NeuralDataset ds = read_dataset(path);
            json out;
            if (ins_digest) {
                const auto d = dataset_digests(ds);
                out["params_sha256"] = d.params;
                out["labels_sha256"] = d.labels;
                out["file_sha256"] = d.file;
            }
            if (!ins_split.empty()) out["split"] = to_json(split(ds, parse_split(ins_split, g.seed)));
            emit(g, out.dump(2));
            return Exit::ok;
        }
        emit(g, read_dataset_header(path).dump(2));
        return Exit::ok;
    }
    return Exit::usage;
}

} // namespace

int main(int argc, char** argv)
{
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "nfd: " << e.what() << '\n';
        return Exit::usage;
    } catch (const NumericFault& e) {
        std::cerr << "nfd: numeric fault: " << e.what() << '\n';
        return Exit::numeric;
    } catch (const std::exception& e) {
        std::cerr << "nfd: " << e.what() << '\n';
        return Exit::data;
    }
}
