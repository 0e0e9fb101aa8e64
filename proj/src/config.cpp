#include "nef/config.hpp"

#include <cmath>
#include <set>

#include "nef/errors.hpp"

namespace nef {

std::string_view to_string(Arch arch) noexcept
{
    switch (arch) {
    case Arch::siren: return "siren";
    case Arch::rffnet: return "rffnet";
    case Arch::fouriernet: return "fouriernet";
    }
    return "?";
}

std::string_view to_string(ScalarMode mode) noexcept { return mode == ScalarMode::f32 ? "f32" : "f64"; }

Arch parse_arch(std::string_view name)
{
    if (name == "siren") return Arch::siren;
    if (name == "rffnet" || name == "rff") return Arch::rffnet;
    if (name == "fouriernet" || name == "mfn") return Arch::fouriernet;
    throw ConfigError("unknown architecture '" + std::string(name) + "'");
}

ScalarMode parse_scalar_mode(std::string_view name)
{
    if (name == "f32") return ScalarMode::f32;
    if (name == "f64") return ScalarMode::f64;
    throw ConfigError("unknown scalar mode '" + std::string(name) + "'");
}

std::string_view to_string(TensorRole role) noexcept
{
    switch (role) {
    case TensorRole::weight: return "weight";
    case TensorRole::bias: return "bias";
    case TensorRole::filter_weight: return "filter_weight";
    case TensorRole::filter_phase: return "filter_phase";
    }
    return "?";
}

NefConfig NefConfig::siren(int in_dim, int out_dim, int hidden, int layers, double omega0)
{
    NefConfig c;
    c.arch = Arch::siren;
    c.in_dim = in_dim;
    c.out_dim = out_dim;
    c.hidden_dim = hidden;
    c.num_layers = layers;
    c.omega0 = omega0;
    return c;
}

NefConfig NefConfig::rffnet(int in_dim, int out_dim, int hidden, int layers, double rff_std)
{
    NefConfig c;
    c.arch = Arch::rffnet;
    c.in_dim = in_dim;
    c.out_dim = out_dim;
    c.hidden_dim = hidden;
    c.num_layers = layers;
    c.rff_std = rff_std;
    return c;
}

NefConfig NefConfig::fouriernet(int in_dim, int out_dim, int hidden, int layers, double input_scale)
{
    NefConfig c;
    c.arch = Arch::fouriernet;
    c.in_dim = in_dim;
    c.out_dim = out_dim;
    c.hidden_dim = hidden;
    c.num_layers = layers;
    c.input_scale = input_scale;
    return c;
}

namespace {

void require_positive(const std::optional<double>& v, const char* name, bool wanted, Arch arch)
{
    if (wanted) {
        if (!v) throw ConfigError(std::string(name) + " is required for " + std::string(to_string(arch)));
        if (!std::isfinite(*v) || *v <= 0.0) throw ConfigError(std::string(name) + " must be > 0");
    } else if (v) {
        throw ConfigError(std::string(name) + " is not a hyperparameter of " + std::string(to_string(arch)));
    }
}

} // namespace

void NefConfig::validate() const
{
    if (in_dim < 1) throw ConfigError("in_dim must be >= 1");
    if (out_dim < 1) throw ConfigError("out_dim must be >= 1");
    if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
    if (num_layers < 2) throw ConfigError("num_layers must be >= 2");
    require_positive(omega0, "omega0", arch == Arch::siren, arch);
    require_positive(rff_std, "rff_std", arch == Arch::rffnet, arch);
    require_positive(input_scale, "input_scale", arch == Arch::fouriernet, arch);
}

nlohmann::json to_json(const NefConfig& c)
{
    nlohmann::json j;
    j["arch"] = std::string(to_string(c.arch));
    j["in_dim"] = c.in_dim;
    j["out_dim"] = c.out_dim;
    j["hidden_dim"] = c.hidden_dim;
    j["num_layers"] = c.num_layers;
    if (c.omega0) j["omega0"] = *c.omega0;
    if (c.rff_std) j["rff_std"] = *c.rff_std;
    if (c.input_scale) j["input_scale"] = *c.input_scale;
    j["scalar_mode"] = std::string(to_string(c.scalar_mode));
    return j;
}

NefConfig config_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> known{"arch",   "in_dim",  "out_dim",     "hidden_dim", "num_layers",
                                             "omega0", "rff_std", "input_scale", "scalar_mode"};
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    }
    try {
        NefConfig c;
        c.arch = parse_arch(j.at("arch").get<std::string>());
        c.in_dim = j.at("in_dim").get<int>();
        c.out_dim = j.at("out_dim").get<int>();
        c.hidden_dim = j.at("hidden_dim").get<int>();
        c.num_layers = j.at("num_layers").get<int>();
        if (j.contains("omega0")) c.omega0 = j["omega0"].get<double>();
        if (j.contains("rff_std")) c.rff_std = j["rff_std"].get<double>();
        if (j.contains("input_scale")) c.input_scale = j["input_scale"].get<double>();
        c.scalar_mode = parse_scalar_mode(j.at("scalar_mode").get<std::string>());
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config JSON: ") + e.what());
    }
}

const TensorEntry& ParamLayout::entry(std::string_view name) const
{
    for (const auto& e : entries) {
        if (e.name == name) return e;
    }
    throw ConfigError("no tensor named '" + std::string(name) + "' in layout");
}

std::size_t ParamLayout::node_count() const noexcept
{
    std::size_t n = 0;
    for (const auto& g : groups) n += static_cast<std::size_t>(g.size);
    return n;
}

std::size_t ParamLayout::weight_count() const noexcept
{
    std::size_t n = 0;
    for (const auto& e : entries) {
        if (e.is_matrix()) n += e.size();
    }
    return n;
}

namespace {

class LayoutBuilder {
public:
    int group(std::string name, int size)
    {
        layout_.groups.push_back({std::move(name), size});
        return static_cast<int>(layout_.groups.size()) - 1;
    }

    void matrix(std::string name, TensorRole role, int src, int dst)
    {
        add(std::move(name), role, src, dst, layout_.groups[dst].size, layout_.groups[src].size);
    }

    void vector(std::string name, TensorRole role, int dst) { add(std::move(name), role, -1, dst, layout_.groups[dst].size, 1); }

    ParamLayout finish() { return std::move(layout_); }

private:
    void add(std::string name, TensorRole role, int src, int dst, int rows, int cols)
    {
        TensorEntry e;
        e.id = static_cast<int>(layout_.entries.size());
        e.name = std::move(name);
        e.role = role;
        e.src_group = src;
        e.dst_group = dst;
        e.rows = rows;
        e.cols = cols;
        e.offset = layout_.param_dim;
        layout_.param_dim += e.size();
        layout_.entries.push_back(std::move(e));
    }

    ParamLayout layout_;
};

} // namespace

ParamLayout param_layout(const NefConfig& config)
{
    config.validate();
    const int d = config.in_dim;
    const int h = config.hidden_dim;
    const int c = config.out_dim;
    const int k = config.num_layers;

    LayoutBuilder b;
    const int input = b.group("input", d);

    switch (config.arch) {
    case Arch::siren: {
        int prev = input;
        for (int l = 0; l < k; ++l) {
            const bool last = l == k - 1;
            const int dst = last ? b.group("output", c) : b.group("hidden" + std::to_string(l), h);
            b.matrix("W" + std::to_string(l), TensorRole::weight, prev, dst);
            b.vector("b" + std::to_string(l), TensorRole::bias, dst);
            prev = dst;
        }
        break;
    }
    case Arch::rffnet: {
        // The linear layer that consumes [sin(z), cos(z)] is stored as two
        // |dst| x d1 blocks so that both halves attach to the embedding nodes.
        const int fourier = b.group("fourier", h);
        b.matrix("emb", TensorRole::weight, input, fourier);
        int prev = fourier;
        for (int l = 1; l < k; ++l) {
            const bool last = l == k - 1;
            const int dst = last ? b.group("output", c) : b.group("hidden" + std::to_string(l), h);
            const std::string tag = "L" + std::to_string(l);
            if (l == 1) {
                b.matrix(tag + ".sin", TensorRole::weight, prev, dst);
                b.matrix(tag + ".cos", TensorRole::weight, prev, dst);
            } else {
                b.matrix(tag + ".W", TensorRole::weight, prev, dst);
            }
            b.vector(tag + ".b", TensorRole::bias, dst);
            prev = dst;
        }
        break;
    }
    case Arch::fouriernet: {
        const int filters = k - 1;
        int prev = -1;
        for (int i = 1; i <= filters; ++i) {
            const int z = b.group("z" + std::to_string(i), h);
            if (i > 1) {
                b.matrix("L" + std::to_string(i - 1) + ".W", TensorRole::weight, prev, z);
                b.vector("L" + std::to_string(i - 1) + ".b", TensorRole::bias, z);
            }
            b.matrix("F" + std::to_string(i) + ".omega", TensorRole::filter_weight, input, z);
            b.vector("F" + std::to_string(i) + ".phase", TensorRole::filter_phase, z);
            prev = z;
        }
        const int out = b.group("output", c);
        b.matrix("L" + std::to_string(filters) + ".W", TensorRole::weight, prev, out);
        b.vector("L" + std::to_string(filters) + ".b", TensorRole::bias, out);
        break;
    }
    }
    return b.finish();
}

} // namespace nef
