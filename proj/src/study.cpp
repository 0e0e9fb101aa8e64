#include "nef/study.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <fstream>
#include <map>
#include <sstream>
#include <type_traits>

#include "nef/digest.hpp"
#include "nef/errors.hpp"
#include "nef/io.hpp"
#include "nef/version.hpp"

namespace nef {

using json = nlohmann::json;
namespace fs = std::filesystem;

const std::vector<Preset>& presets()
{
    static const std::vector<Preset> all = [] {
        std::vector<Preset> p;
        FitOptions siren;
        siren.lr = 1e-3;
        siren.weight_decay = 0.0;
        p.push_back({"siren-phase2", NefConfig::siren(2, 1, 32, 3, 9.0), siren});
        FitOptions rff;
        rff.lr = 1e-4;
        rff.weight_decay = 0.0;
        p.push_back({"rffnet-phase2", NefConfig::rffnet(2, 1, 32, 5, 0.1), rff});
        FitOptions mfn;
        mfn.lr = 5e-3;
        mfn.weight_decay = 0.0;
        // four filters
        p.push_back({"fouriernet-phase2", NefConfig::fouriernet(2, 1, 32, 5), mfn});
        return p;
    }();
    return all;
}

const Preset& find_preset(std::string_view name)
{
    for (const auto& p : presets()) {
        if (p.name == name) return p;
    }
    std::string known;
    for (const auto& p : presets()) known += (known.empty() ? "" : ", ") + p.name;
    throw ConfigError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

template <class T>
NeuralDataset make_dataset(const SignalBatch& signals, const FitResult<T>& result, const FitOptions& opts,
                           const ReconReport* recon)
{
    NeuralDataset ds;
    ds.config = result.params.config;
    ds.config.scalar_mode = ScalarMode::f32;
    ds.params = ParamBatch<float>(ds.config, result.params.n_nefs);
    for (std::size_t i = 0; i < result.params.values.size(); ++i) ds.params.values[i] = static_cast<float>(result.params.values[i]);
    ds.labels = signals.labels;
    if (ds.labels.empty()) ds.labels.assign(signals.n, 0);
    ds.class_names = signals.class_names;
    ds.provenance.fit_options = to_json(opts);
    ds.provenance.signal_hash = signals.content_hash();
    ds.provenance.library_version = std::string(kLibraryVersion);
    ds.provenance.creation_seed = opts.seed;
    ds.provenance.fit_scalar_mode = std::is_same_v<T, double> ? ScalarMode::f64 : ScalarMode::f32;
    ds.provenance.extra = {{"faulted", result.report.faulted}};

    MetricBlock loss{"final_loss", {}};
    for (const auto& r : result.report.nefs) loss.values.push_back(static_cast<float>(r.final_loss));
    ds.metrics.push_back(std::move(loss));
    if (recon != nullptr) {
        const std::string base = recon->kind == MetricKind::iou ? "iou" : "psnr";
        MetricBlock on{base + "_on", {}};
        for (double v : recon->on_grid) on.values.push_back(static_cast<float>(v));
        ds.metrics.push_back(std::move(on));
        if (recon->has_off_grid()) {
            MetricBlock off{base + "_off", {}};
            for (double v : recon->off_grid) off.values.push_back(static_cast<float>(v));
            ds.metrics.push_back(std::move(off));
        }
    }
    ds.validate();
    return ds;
}

template NeuralDataset make_dataset<float>(const SignalBatch&, const FitResult<float>&, const FitOptions&, const ReconReport*);
template NeuralDataset make_dataset<double>(const SignalBatch&, const FitResult<double>&, const FitOptions&, const ReconReport*);

std::string_view to_string(StudyKind kind) noexcept
{
    switch (kind) {
    case StudyKind::shared_vs_random: return "shared_vs_random";
    case StudyKind::overtraining: return "overtraining";
    case StudyKind::expressivity: return "expressivity";
    }
    return "?";
}

StudyKind parse_study_kind(std::string_view name)
{
    if (name == "shared_vs_random") return StudyKind::shared_vs_random;
    if (name == "overtraining") return StudyKind::overtraining;
    if (name == "expressivity") return StudyKind::expressivity;
    throw ConfigError("unknown study kind '" + std::string(name) + "' (expected shared_vs_random, overtraining or expressivity)");
}

StudyGrid default_grid(StudyKind kind, const NefConfig& base, const FitOptions& fit)
{
    StudyGrid g{{fit.init_mode}, {base.hidden_dim}, {fit.steps}, {fit.seed}};
    switch (kind) {
    case StudyKind::shared_vs_random: g.inits = {InitMode::shared, InitMode::random}; break;
    case StudyKind::overtraining: g.steps = {1000, 5000, 50000}; break;
    case StudyKind::expressivity: g.hidden = {8, 32, 128}; break;
    }
    return g;
}

json to_json(const StudyRecord& r)
{
    return json{{"config_hash", r.config_hash},
                {"kind", r.kind},
                {"arch", r.arch},
                {"init_mode", r.init_mode},
                {"hidden_dim", r.hidden_dim},
                {"steps", r.steps},
                {"seed", r.seed},
                {"metric", r.metric},
                {"on_mean", r.on_mean},
                {"off_mean", r.off_mean},
                {"ratio", r.ratio},
                {"nmi", r.nmi},
                {"distance_mean", r.distance_mean},
                {"test_acc", r.test_acc},
                {"best_val_acc", r.best_val_acc},
                {"fit_s", r.fit_s},
                {"metrics_s", r.metrics_s},
                {"classify_s", r.classify_s},
                {"dataset", r.dataset},
                {"status", r.status}};
}

namespace {

// Non-finite doubles are written as strings so records stay valid JSON.
json number(double v)
{
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return nullptr;
    return v > 0 ? "inf" : "-inf";
}

double number_from(const json& j)
{
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (j.is_string()) return j.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    return j.get<double>();
}

json safe(const StudyRecord& r)
{
    json j = to_json(r);
    for (const char* k : {"on_mean", "off_mean", "ratio", "nmi", "distance_mean", "test_acc", "best_val_acc"}) {
        j[k] = number(j[k].get<double>());
    }
    return j;
}

} // namespace

StudyRecord study_record_from_json(const json& j)
{
    StudyRecord r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.kind = j.at("kind").get<std::string>();
    r.arch = j.at("arch").get<std::string>();
    r.init_mode = j.at("init_mode").get<std::string>();
    r.hidden_dim = j.at("hidden_dim").get<int>();
    r.steps = j.at("steps").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.metric = j.at("metric").get<std::string>();
    r.on_mean = number_from(j.at("on_mean"));
    r.off_mean = number_from(j.at("off_mean"));
    r.ratio = number_from(j.at("ratio"));
    r.nmi = number_from(j.at("nmi"));
    r.distance_mean = number_from(j.at("distance_mean"));
    r.test_acc = number_from(j.at("test_acc"));
    r.best_val_acc = number_from(j.at("best_val_acc"));
    r.fit_s = j.at("fit_s").get<double>();
    r.metrics_s = j.at("metrics_s").get<double>();
    r.classify_s = j.at("classify_s").get<double>();
    r.dataset = j.at("dataset").get<std::string>();
    r.status = j.at("status").get<std::string>();
    return r;
}

std::string records_csv(const std::vector<StudyRecord>& records)
{
    std::ostringstream os;
    os.precision(10);
    os << "config_hash,kind,arch,init_mode,hidden_dim,steps,seed,metric,on_mean,off_mean,ratio,nmi,distance_mean,"
          "test_acc,best_val_acc,fit_s,metrics_s,classify_s,dataset,status\n";
    for (const auto& r : records) {
        std::string status = r.status;
        for (auto& c : status) {
            if (c == ',' || c == '\n' || c == '"') c = ' ';
        }
        os << r.config_hash << ',' << r.kind << ',' << r.arch << ',' << r.init_mode << ',' << r.hidden_dim << ','
           << r.steps << ',' << r.seed << ',' << r.metric << ',' << r.on_mean << ',' << r.off_mean << ',' << r.ratio
           << ',' << r.nmi << ',' << r.distance_mean << ',' << r.test_acc << ',' << r.best_val_acc << ',' << r.fit_s
           << ',' << r.metrics_s << ',' << r.classify_s << ',' << r.dataset << ',' << status << '\n';
    }
    return os.str();
}

std::string point_hash(const NefConfig& config, const FitOptions& fit, const ClassifierConfig& classifier,
                       const SplitSpec& split, const ReconOptions& recon, const std::string& signal_hash)
{
    const json j{{"config", to_json(config)},
                 {"fit", to_json(fit)},
                 {"classifier", to_json(classifier)},
                 {"split", {split.train, split.val, split.test, split.seed}},
                 {"recon", {std::string(to_string(recon.offgrid)), recon.seed, recon.offgrid_points, recon.near_frac, recon.band_width}},
                 {"signals", signal_hash},
                 {"version", std::string(kLibraryVersion)}};
    const std::string text = j.dump();
    return sha256_hex(std::as_bytes(std::span<const char>(text.data(), text.size()))).substr(0, 16);
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <class T>
void run_point(const SignalBatch& signals, const NefConfig& config, const FitOptions& fit_opts,
               const ClassifierConfig& ccfg, const SplitSpec& sp, const ReconOptions& recon, int threads,
               const fs::path& dir, bool keep, StudyRecord& rec)
{
    auto t0 = Clock::now();
    ExecOptions exec;
    exec.threads = threads;
    const FitResult<T> fitted = fit<T>(signals, config, fit_opts, exec);
    rec.fit_s = seconds_since(t0);
    if (!fitted.report.faulted.empty()) {
        throw NumericFault(fitted.report.faulted.front(), std::to_string(fitted.report.faulted.size()) + " NeF(s) diverged");
    }

    t0 = Clock::now();
    ReconOptions ro = recon;
    ro.threads = threads;
    const ReconReport rr = recon_report(fitted.params, signals, ro);
    rec.metric = std::string(to_string(rr.kind));
    rec.on_mean = rr.mean_on_grid();
    rec.off_mean = rr.has_off_grid() ? rr.mean_off_grid() : std::numeric_limits<double>::quiet_NaN();
    rec.ratio = rr.has_off_grid() ? rr.mean_ratio() : std::numeric_limits<double>::quiet_NaN();
    const auto dist = pairwise_distances(fitted.params, 1000000, fit_opts.seed, 50, threads);
    rec.distance_mean = dist.mean;
    const NeuralDataset ds = make_dataset(signals, fitted, fit_opts, &rr);
    const int k = dataset_classes(ds);
    KMeansOptions km;
    km.k = std::max(k, 1);
    km.seed = fit_opts.seed;
    rec.nmi = cluster_params(fitted.params, ds.labels, k, km).nmi;
    rec.metrics_s = seconds_since(t0);
    if (keep) {
        rec.dataset = rec.config_hash + ".nfd";
        write_dataset(ds, dir / rec.dataset);
    }

    t0 = Clock::now();
    const TrainReport tr = train_classifier(ds, sp, ccfg);
    rec.classify_s = seconds_since(t0);
    rec.test_acc = tr.test_acc;
    rec.best_val_acc = tr.best_val_acc;
    std::ofstream(dir / (rec.config_hash + ".train.json")) << to_json(tr).dump(2) << '\n';
    std::ofstream(dir / (rec.config_hash + ".epochs.csv")) << epochs_csv(tr);
}

} // namespace

std::vector<StudyRecord> run_study(const StudySpec& spec, const SignalBatch& signals, const fs::path& dir,
                                   const std::function<void(const StudyRecord&, bool)>& progress)
{
    spec.base.validate();
    spec.fit.validate();
    spec.classifier.validate();
    signals.validate();
    const auto& g = spec.grid;
    if (g.inits.empty() || g.hidden.empty() || g.steps.empty() || g.seeds.empty()) {
        throw ConfigError("study grid has an empty axis");
    }
    fs::create_directories(dir);
    const fs::path log = dir / "records.jsonl";

    std::map<std::string, StudyRecord> done;
    if (fs::exists(log)) {
        std::ifstream in(log);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                StudyRecord r = study_record_from_json(json::parse(line));
                if (r.status == "ok" && (r.dataset.empty() || fs::exists(dir / r.dataset))) done[r.config_hash] = r;
            } catch (const std::exception&) {
                // a torn last line from an interrupted run
            }
        }
    }

    const std::string signal_hash = signals.content_hash();
    std::vector<StudyRecord> records;
    for (InitMode init : g.inits) {
        for (int hidden : g.hidden) {
            for (int steps : g.steps) {
                for (std::uint64_t seed : g.seeds) {
                    NefConfig config = spec.base;
                    config.hidden_dim = hidden;
                    if (signals.kind == SignalKind::image) {
                        config.in_dim = 2;
                        config.out_dim = signals.channels;
                    } else {
                        config.in_dim = signals.point_dim;
                        config.out_dim = 1;
                    }
                    FitOptions fo = spec.fit;
                    fo.init_mode = init;
                    fo.steps = steps;
                    fo.seed = seed;
                    fo.log_every = std::max(1, steps);
                    ClassifierConfig cc = spec.classifier;
                    cc.seed = seed;
                    SplitSpec sp = spec.split;
                    sp.seed = seed;
                    ReconOptions ro = spec.recon;
                    ro.seed = seed;

                    StudyRecord rec;
                    rec.config_hash = point_hash(config, fo, cc, sp, ro, signal_hash);
                    rec.kind = std::string(to_string(spec.kind));
                    rec.arch = std::string(to_string(config.arch));
                    rec.init_mode = std::string(to_string(init));
                    rec.hidden_dim = hidden;
                    rec.steps = steps;
                    rec.seed = seed;

                    if (auto it = done.find(rec.config_hash); it != done.end()) {
                        StudyRecord old = it->second;
                        old.kind = rec.kind;
                        records.push_back(old);
                        if (progress) progress(old, true);
                        continue;
                    }
                    try {
                        config.validate();
                        if (config.scalar_mode == ScalarMode::f64) {
                            run_point<double>(signals, config, fo, cc, sp, ro, spec.threads, dir, spec.keep_datasets, rec);
                        } else {
                            run_point<float>(signals, config, fo, cc, sp, ro, spec.threads, dir, spec.keep_datasets, rec);
                        }
                    } catch (const std::exception& e) {
                        rec.status = std::string("error: ") + e.what();
                    }
                    std::ofstream(log, std::ios::app) << safe(rec).dump() << '\n';
                    records.push_back(rec);
                    if (progress) progress(rec, false);
                }
            }
        }
    }
    std::ofstream(dir / "records.csv") << records_csv(records);
    return records;
}

} // namespace nef
