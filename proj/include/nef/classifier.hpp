#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nef/config.hpp"
#include "nef/dataset.hpp"
#include "nef/params.hpp"

namespace nef {

// Computational graph of one NeF. Nodes are numbered group by group in layout
// order; every weight/filter entry W[r, c] becomes an edge src-group node c ->
// dst-group node r.
struct NefGraph {
    std::vector<int> group_offset; // first node of each group, plus the total at the end
    std::size_t n_nodes = 0;
    // Per node: [bias, phase, one-hot group tag]. Input nodes carry zero bias and phase.
    std::size_t node_dim = 0;
    std::vector<double> node_features;
    std::vector<int> edge_src, edge_dst;
    std::vector<int> edge_tag; // index of the weight tensor among the layout's matrices
    std::vector<double> edge_weight;
    int n_edge_tags = 0;

    std::size_t n_edges() const noexcept { return edge_src.size(); }
    std::span<const double> node(std::size_t v) const { return {node_features.data() + v * node_dim, node_dim}; }
};

template <class T>
NefGraph build_graph(const NefConfig& config, std::span<const T> theta);

enum class ModelKind { mlp, mpnn };
std::string_view to_string(ModelKind kind) noexcept;
ModelKind parse_model_kind(std::string_view name);

struct ClassifierConfig {
    ModelKind model = ModelKind::mlp;
    // mlp: hidden Linear -> BatchNorm -> ReLU stages, then a linear head.
    std::vector<int> mlp_widths{256, 256};
    bool batch_norm = true;
    double bn_momentum = 0.9;
    double bn_eps = 1e-5;
    // mpnn
    int mp_steps = 4;
    int mp_hidden = 64;
    int node_mlp_layers = 3;
    int node_mlp_width = 256;
    int edge_mlp_width = 256; // the edge MLP has two layers
    int readout_width = 256;
    // optimization
    double lr = 1e-3;
    int epochs = 50;
    int batch_size = 64;
    std::uint64_t seed = 0;
    bool standardize = false;

    void validate() const;
    bool operator==(const ClassifierConfig&) const = default;
};

nlohmann::json to_json(const ClassifierConfig& cfg);
ClassifierConfig classifier_config_from_json(const nlohmann::json& j);

class Classifier {
public:
    Classifier(const ClassifierConfig& cfg, const NefConfig& nef, int n_classes);
    ~Classifier();
    Classifier(Classifier&&) noexcept;
    Classifier& operator=(Classifier&&) noexcept;
    Classifier(const Classifier& o);
    Classifier& operator=(const Classifier& o);

    const ClassifierConfig& config() const noexcept;
    const NefConfig& nef_config() const noexcept;
    int n_classes() const noexcept;
    std::size_t input_dim() const noexcept;

    // Eval-mode logits, n x n_classes row-major. x holds n flat parameter vectors.
    std::vector<double> logits(std::span<const double> x, std::size_t n) const;
    std::vector<double> logits(const ParamBatch<float>& params) const;

    // Mean cross-entropy of a batch. Training mode uses batch statistics and
    // updates the batch-norm running estimates. When grad is given it receives
    // d loss / d parameters in parameters() order.
    double loss(std::span<const double> x, std::size_t n, std::span<const int> labels, bool training,
                std::vector<double>* grad = nullptr);

    std::vector<double> parameters() const;
    void set_parameters(std::span<const double> values);
    std::size_t parameter_count() const;

    // Per-feature standardization estimated from the given rows (used when the
    // config asks for it; identity otherwise).
    void fit_standardization(std::span<const double> x, std::size_t n);

    // One Adam update (betas 0.9 / 0.999, eps 1e-8) on a training batch; returns its loss.
    double train_step(std::span<const double> x, std::size_t n, std::span<const int> labels, std::size_t* correct = nullptr);

    // "NFC1" | u32 header_len | JSON header | u32 crc | f64 payload | u32 crc
    std::vector<std::byte> encode() const;
    static Classifier decode(std::span<const std::byte> bytes);
    void save(const std::filesystem::path& path) const;
    static Classifier load(const std::filesystem::path& path);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    explicit Classifier(std::unique_ptr<Impl> impl);
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainReport {
    ClassifierConfig config;
    SplitSpec split;
    int n_classes = 0;
    std::size_t n_train = 0, n_val = 0, n_test = 0;
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    double best_val_acc = 0.0;
    double test_acc = 0.0;
    double test_loss = 0.0;
    int test_evaluations = 0;
};

nlohmann::json to_json(const TrainReport& r);
std::string epochs_csv(const TrainReport& r);

// Number of classes of a dataset: class_names when present, else max label + 1.
int dataset_classes(const NeuralDataset& ds);

// Cross-entropy training with Adam. After every epoch the model is scored on
// the validation split; the state with the highest validation accuracy (earliest
// on ties) is restored and evaluated on the test split once. Throws DataError
// when any split has fewer than two classes.
TrainReport train_classifier(const NeuralDataset& ds, const SplitSpec& split, const ClassifierConfig& cfg,
                             Classifier* best_model = nullptr);

// Eval-mode predictions of a trained model on a dataset (class-count mismatch is a DataError).
std::vector<double> classify(const Classifier& model, const NeuralDataset& ds);
int argmax_row(std::span<const double> row) noexcept;

} // namespace nef
