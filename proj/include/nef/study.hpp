#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nef/classifier.hpp"
#include "nef/dataset.hpp"
#include "nef/fit.hpp"
#include "nef/metrics.hpp"
#include "nef/signals.hpp"

namespace nef {

// Named architecture + optimizer settings.
struct Preset {
    std::string name;
    NefConfig config;
    FitOptions fit;
};

const std::vector<Preset>& presets();
// Throws ConfigError for unknown names.
const Preset& find_preset(std::string_view name);

// Packs fitted parameters, labels and provenance into a dataset. Metric blocks:
// final_loss, plus <metric>_on / <metric>_off when a reconstruction report is given.
template <class T>
NeuralDataset make_dataset(const SignalBatch& signals, const FitResult<T>& result, const FitOptions& opts,
                           const ReconReport* recon = nullptr);

enum class StudyKind { shared_vs_random, overtraining, expressivity };
std::string_view to_string(StudyKind kind) noexcept;
StudyKind parse_study_kind(std::string_view name);

struct StudyGrid {
    std::vector<InitMode> inits;
    std::vector<int> hidden;
    std::vector<int> steps;
    std::vector<std::uint64_t> seeds;
};

// Grid axes a study varies by default; the others hold the base values.
StudyGrid default_grid(StudyKind kind, const NefConfig& base, const FitOptions& fit);

struct StudySpec {
    StudyKind kind = StudyKind::shared_vs_random;
    NefConfig base;
    FitOptions fit;
    StudyGrid grid;
    ClassifierConfig classifier;
    SplitSpec split;
    ReconOptions recon;
    int threads = 0;
    bool keep_datasets = true;
};

struct StudyRecord {
    std::string config_hash;
    std::string kind;
    std::string arch;
    std::string init_mode;
    int hidden_dim = 0;
    int steps = 0;
    std::uint64_t seed = 0;
    std::string metric; // psnr_db or iou
    double on_mean = 0.0;
    double off_mean = 0.0;
    double ratio = 0.0;
    double nmi = 0.0;
    double distance_mean = 0.0;
    double test_acc = 0.0;
    double best_val_acc = 0.0;
    double fit_s = 0.0;
    double metrics_s = 0.0;
    double classify_s = 0.0;
    std::string dataset; // file name inside the study directory, empty if not kept
    std::string status = "ok";
};

nlohmann::json to_json(const StudyRecord& r);
StudyRecord study_record_from_json(const nlohmann::json& j);
std::string records_csv(const std::vector<StudyRecord>& records);

// Hash of everything that determines a grid point's results.
std::string point_hash(const NefConfig& config, const FitOptions& fit, const ClassifierConfig& classifier,
                       const SplitSpec& split, const ReconOptions& recon, const std::string& signal_hash);

// Runs every grid point (inits x hidden x steps x seeds) in order. Completed
// points found in <dir>/records.jsonl with the same hash are reused, failed
// points are recorded with their error and the run continues. Writes
// records.jsonl, records.csv and per point <hash>.nfd, <hash>.train.json,
// <hash>.epochs.csv.
std::vector<StudyRecord> run_study(const StudySpec& spec, const SignalBatch& signals, const std::filesystem::path& dir,
                                   const std::function<void(const StudyRecord&, bool reused)>& progress = {});

} // namespace nef
