#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace nef {

enum class Arch { siren, rffnet, fouriernet };
enum class ScalarMode { f32, f64 };

std::string_view to_string(Arch arch) noexcept;
std::string_view to_string(ScalarMode mode) noexcept;
Arch parse_arch(std::string_view name);
ScalarMode parse_scalar_mode(std::string_view name);

// Architecture descriptor of a neural field. Exactly one of omega0 / rff_std /
// input_scale is set, matching `arch`.
struct NefConfig {
    Arch arch = Arch::siren;
    int in_dim = 2;
    int out_dim = 1;
    int hidden_dim = 32;
    // Siren / Rffnet: total number of linear layers (Rffnet counts the embedding).
    // FourierNet: k - 1 filters and k - 2 hidden linear stages plus the output layer.
    int num_layers = 3;
    std::optional<double> omega0;
    std::optional<double> rff_std;
    std::optional<double> input_scale;
    ScalarMode scalar_mode = ScalarMode::f32;

    static NefConfig siren(int in_dim, int out_dim, int hidden, int layers, double omega0);
    static NefConfig rffnet(int in_dim, int out_dim, int hidden, int layers, double rff_std);
    static NefConfig fouriernet(int in_dim, int out_dim, int hidden, int layers, double input_scale = 16.0);

    // Throws ConfigError describing the first violated invariant.
    void validate() const;

    bool operator==(const NefConfig&) const = default;
};

nlohmann::json to_json(const NefConfig& config);
// Rejects unknown keys and hyperparameters that do not belong to the architecture.
NefConfig config_from_json(const nlohmann::json& j);

enum class TensorRole { weight, bias, filter_weight, filter_phase };
std::string_view to_string(TensorRole role) noexcept;

// A set of nodes in the NeF computational graph (input, one hidden layer, output).
struct NodeGroup {
    std::string name;
    int size = 0;
};

// One parameter tensor. Weights have shape rows x cols = |dst| x |src| and are
// stored row-major; biases and phases are column vectors on their dst group and
// have src_group == -1.
struct TensorEntry {
    int id = 0;
    std::string name;
    TensorRole role = TensorRole::weight;
    int src_group = -1;
    int dst_group = -1;
    int rows = 0;
    int cols = 1;
    std::size_t offset = 0;

    std::size_t size() const noexcept { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
    bool is_matrix() const noexcept { return role == TensorRole::weight || role == TensorRole::filter_weight; }
};

struct ParamLayout {
    std::vector<NodeGroup> groups;
    std::vector<TensorEntry> entries;
    std::size_t param_dim = 0;

    const TensorEntry& entry(std::string_view name) const;
    std::size_t node_count() const noexcept;
    std::size_t weight_count() const noexcept;
};

ParamLayout param_layout(const NefConfig& config);

} // namespace nef
