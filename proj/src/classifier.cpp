#include "nef/classifier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "autodiff.hpp"
#include "nef/digest.hpp"
#include "nef/errors.hpp"
#include "nef/io.hpp"
#include "nef/rng.hpp"

namespace nef {

using json = nlohmann::json;
using ad::Matrix;
using ad::Var;

std::string_view to_string(ModelKind kind) noexcept
{
    return kind == ModelKind::mlp ? "mlp" : "mpnn";
}

ModelKind parse_model_kind(std::string_view name)
{
    if (name == "mlp") return ModelKind::mlp;
    if (name == "mpnn") return ModelKind::mpnn;
    throw ConfigError("unknown classifier model '" + std::string(name) + "' (expected mlp or mpnn)");
}

void ClassifierConfig::validate() const
{
    for (int w : mlp_widths) {
        if (w < 1) throw ConfigError("classifier: mlp widths must be >= 1");
    }
    if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw ConfigError("classifier: bn_momentum must be in [0, 1)");
    if (!(bn_eps > 0.0)) throw ConfigError("classifier: bn_eps must be > 0");
    if (mp_steps < 1) throw ConfigError("classifier: mp_steps must be >= 1");
    if (mp_hidden < 1 || node_mlp_width < 1 || edge_mlp_width < 1 || readout_width < 1) {
        throw ConfigError("classifier: mpnn widths must be >= 1");
    }
    if (node_mlp_layers < 1) throw ConfigError("classifier: node_mlp_layers must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("classifier: lr must be a positive finite number");
    if (epochs < 1) throw ConfigError("classifier: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("classifier: batch_size must be >= 1");
}

json to_json(const ClassifierConfig& c)
{
    return json{{"model", std::string(to_string(c.model))},
                {"mlp_widths", c.mlp_widths},
                {"batch_norm", c.batch_norm},
                {"bn_momentum", c.bn_momentum},
                {"bn_eps", c.bn_eps},
                {"mp_steps", c.mp_steps},
                {"mp_hidden", c.mp_hidden},
                {"node_mlp_layers", c.node_mlp_layers},
                {"node_mlp_width", c.node_mlp_width},
                {"edge_mlp_width", c.edge_mlp_width},
                {"readout_width", c.readout_width},
                {"lr", c.lr},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"seed", c.seed},
                {"standardize", c.standardize}};
}

ClassifierConfig classifier_config_from_json(const json& j)
{
    if (!j.is_object()) throw ConfigError("classifier config must be a JSON object");
    ClassifierConfig c;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "model") c.model = parse_model_kind(value.get<std::string>());
            else if (key == "mlp_widths") c.mlp_widths = value.get<std::vector<int>>();
            else if (key == "batch_norm") c.batch_norm = value.get<bool>();
            else if (key == "bn_momentum") c.bn_momentum = value.get<double>();
            else if (key == "bn_eps") c.bn_eps = value.get<double>();
            else if (key == "mp_steps") c.mp_steps = value.get<int>();
            else if (key == "mp_hidden") c.mp_hidden = value.get<int>();
            else if (key == "node_mlp_layers") c.node_mlp_layers = value.get<int>();
            else if (key == "node_mlp_width") c.node_mlp_width = value.get<int>();
            else if (key == "edge_mlp_width") c.edge_mlp_width = value.get<int>();
            else if (key == "readout_width") c.readout_width = value.get<int>();
            else if (key == "lr") c.lr = value.get<double>();
            else if (key == "epochs") c.epochs = value.get<int>();
            else if (key == "batch_size") c.batch_size = value.get<int>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "standardize") c.standardize = value.get<bool>();
            else throw ConfigError("unknown classifier option '" + key + "'");
        } catch (const json::exception& e) {
            throw ConfigError("classifier option '" + key + "': " + e.what());
        }
    }
    c.validate();
    return c;
}

namespace {

struct Linear {
    int w = -1, b = -1; // indices into Impl::params
};

constexpr std::uint64_t kShuffleStream = 0x73687566666c65;

} // namespace

struct Classifier::Impl {
    ClassifierConfig cfg;
    NefConfig nef;
    ParamLayout layout;
    int n_classes = 0;
    std::size_t input_dim = 0;

    std::vector<ad::Param> params;
    std::vector<ad::BatchNormState> bns;
    long adam_t = 0;

    // mlp
    std::vector<Linear> hidden;
    Linear head;

    // mpnn
    NefGraph topo;
    std::size_t edge_dim = 0;
    Linear encoder;
    struct Step {
        int ws = -1, wd = -1, we = -1, b1 = -1;
        Linear out;
        std::vector<Linear> node;
    };
    std::vector<Step> steps;
    Linear readout_hidden, readout_out;

    // standardization: mlp per input coordinate; mpnn per bias / phase / weight channel
    std::vector<double> shift, scale;

    Stream init_stream{0};

    int add_param(int rows, int cols, double bound)
    {
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = init_stream.uniform(-bound, bound);
        params.emplace_back(std::move(m));
        return static_cast<int>(params.size() - 1);
    }

    Linear add_linear(int in, int out, int fan_in = 0)
    {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : in));
        Linear l;
        l.w = add_param(out, in, bound);
        l.b = add_param(1, out, bound);
        return l;
    }

    void build()
    {
        cfg.validate();
        layout = param_layout(nef);
        input_dim = layout.param_dim;
        if (n_classes < 2) throw ConfigError("classifier: need at least two classes");
        init_stream = Stream(cfg.seed, 0x696e6974);
        if (cfg.model == ModelKind::mlp) {
            int in = static_cast<int>(input_dim);
            for (int w : cfg.mlp_widths) {
                hidden.push_back(add_linear(in, w));
                if (cfg.batch_norm) {
                    bns.emplace_back(w);
                    bns.back().momentum = cfg.bn_momentum;
                    bns.back().eps = cfg.bn_eps;
                }
                in = w;
            }
            head = add_linear(in, n_classes);
            shift.assign(input_dim, 0.0);
            scale.assign(input_dim, 1.0);
        } else {
            const std::vector<double> zeros(layout.param_dim, 0.0);
            topo = build_graph<double>(nef, zeros);
            edge_dim = 1 + static_cast<std::size_t>(topo.n_edge_tags) + 1;
            const int h = cfg.mp_hidden;
            encoder = add_linear(static_cast<int>(topo.node_dim), h);
            for (int s = 0; s < cfg.mp_steps; ++s) {
                Step st;
                const int fan = 2 * h + static_cast<int>(edge_dim);
                const double bound = 1.0 / std::sqrt(static_cast<double>(fan));
                st.ws = add_param(cfg.edge_mlp_width, h, bound);
                st.wd = add_param(cfg.edge_mlp_width, h, bound);
                st.we = add_param(cfg.edge_mlp_width, static_cast<int>(edge_dim), bound);
                st.b1 = add_param(1, cfg.edge_mlp_width, bound);
                st.out = add_linear(cfg.edge_mlp_width, h);
                int in = 2 * h;
                for (int l = 0; l < cfg.node_mlp_layers; ++l) {
                    const int out = l == cfg.node_mlp_layers - 1 ? h : cfg.node_mlp_width;
                    st.node.push_back(add_linear(in, out));
                    in = out;
                }
                steps.push_back(std::move(st));
            }
            readout_hidden = add_linear(h, cfg.readout_width);
            readout_out = add_linear(cfg.readout_width, n_classes);
            shift.assign(3, 0.0);
            scale.assign(3, 1.0);
        }
    }

    std::vector<ad::Param*> all_params()
    {
        std::vector<ad::Param*> out;
        for (auto& p : params) out.push_back(&p);
        for (auto& bn : bns) {
            out.push_back(&bn.gamma);
            out.push_back(&bn.beta);
        }
        return out;
    }

    Var linear(ad::Tape& t, Var x, const Linear& l)
    {
        Var w = t.param(params[static_cast<std::size_t>(l.w)]);
        Var b = t.param(params[static_cast<std::size_t>(l.b)]);
        return ad::linear(x, w, &b);
    }

    Var forward_mlp(ad::Tape& t, std::span<const double> x, std::size_t n, bool training)
    {
        Matrix in(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(input_dim));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < input_dim; ++k) {
                in(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = (x[i * input_dim + k] - shift[k]) / scale[k];
            }
        }
        Var h = t.constant(std::move(in));
        for (std::size_t l = 0; l < hidden.size(); ++l) {
            h = linear(t, h, hidden[l]);
            if (cfg.batch_norm) h = ad::batch_norm(h, bns[l], training);
            h = ad::relu(h);
        }
        return linear(t, h, head);
    }

    Var forward_mpnn(ad::Tape& t, std::span<const double> x, std::size_t n)
    {
        const auto N = topo.n_nodes;
        const auto E = topo.n_edges();
        const auto nd = topo.node_dim;
        Matrix nodes(static_cast<Eigen::Index>(n * N), static_cast<Eigen::Index>(nd));
        auto ef = std::make_shared<Matrix>(Matrix::Zero(static_cast<Eigen::Index>(n * 2 * E), static_cast<Eigen::Index>(edge_dim)));
        auto idx = std::make_shared<ad::EdgeIndex>();
        idx->src.resize(n * 2 * E);
        idx->dst.resize(n * 2 * E);
        auto graph_of = std::make_shared<std::vector<int>>(n * N);
        for (std::size_t b = 0; b < n; ++b) {
            const NefGraph g = build_graph<double>(nef, x.subspan(b * input_dim, input_dim));
            for (std::size_t v = 0; v < N; ++v) {
                const auto row = static_cast<Eigen::Index>(b * N + v);
                for (std::size_t k = 0; k < nd; ++k) {
                    double val = g.node_features[v * nd + k];
                    if (k < 2) val = (val - shift[k]) / scale[k];
                    nodes(row, static_cast<Eigen::Index>(k)) = val;
                }
                (*graph_of)[b * N + v] = static_cast<int>(b);
            }
            const int base = static_cast<int>(b * N);
            for (std::size_t e = 0; e < E; ++e) {
                const double w = (g.edge_weight[e] - shift[2]) / scale[2];
                const auto fwd = static_cast<Eigen::Index>(b * 2 * E + e);
                const auto rev = static_cast<Eigen::Index>(b * 2 * E + E + e);
                idx->src[static_cast<std::size_t>(fwd)] = base + g.edge_src[e];
                idx->dst[static_cast<std::size_t>(fwd)] = base + g.edge_dst[e];
                idx->src[static_cast<std::size_t>(rev)] = base + g.edge_dst[e];
                idx->dst[static_cast<std::size_t>(rev)] = base + g.edge_src[e];
                for (auto r : {fwd, rev}) {
                    (*ef)(r, 0) = w;
                    (*ef)(r, 1 + g.edge_tag[e]) = 1.0;
                }
                (*ef)(rev, static_cast<Eigen::Index>(edge_dim - 1)) = 1.0;
            }
        }
        idx->inv_count.assign(n * N, 0.0);
        for (int d : idx->dst) idx->inv_count[static_cast<std::size_t>(d)] += 1.0;
        for (auto& c : idx->inv_count) c = c > 0 ? 1.0 / c : 0.0;

        Var h = linear(t, t.constant(std::move(nodes)), encoder);
        for (const auto& st : steps) {
            Var ps = ad::linear(h, t.param(params[static_cast<std::size_t>(st.ws)]), nullptr);
            Var pd = ad::linear(h, t.param(params[static_cast<std::size_t>(st.wd)]), nullptr);
            Var a = ad::edge_relu_mean(ps, pd, t.param(params[static_cast<std::size_t>(st.we)]),
                                       t.param(params[static_cast<std::size_t>(st.b1)]), ef, idx);
            // every node has an incoming edge in both directions, so the second
            // edge layer commutes with the mean
            Var msg = linear(t, a, st.out);
            Var u = ad::concat_cols(h, msg);
            for (std::size_t l = 0; l < st.node.size(); ++l) {
                u = linear(t, u, st.node[l]);
                if (l + 1 < st.node.size()) u = ad::relu(u);
            }
            h = u;
        }
        Var pooled = ad::segment_mean(h, graph_of, static_cast<int>(n));
        return linear(t, ad::relu(linear(t, pooled, readout_hidden)), readout_out);
    }

    Var forward(ad::Tape& t, std::span<const double> x, std::size_t n, bool training)
    {
        if (x.size() != n * input_dim) {
            throw DataError("classifier: expected " + std::to_string(n) + " x " + std::to_string(input_dim) +
                            " inputs, got " + std::to_string(x.size()) + " values");
        }
        return cfg.model == ModelKind::mlp ? forward_mlp(t, x, n, training) : forward_mpnn(t, x, n);
    }

    void zero_grads()
    {
        for (auto* p : all_params()) p->grad.setZero();
    }
};

Classifier::Classifier(const ClassifierConfig& cfg, const NefConfig& nef, int n_classes) : impl_(std::make_unique<Impl>())
{
    impl_->cfg = cfg;
    impl_->nef = nef;
    impl_->n_classes = n_classes;
    impl_->build();
}

Classifier::Classifier(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Classifier::~Classifier() = default;
Classifier::Classifier(Classifier&&) noexcept = default;
Classifier& Classifier::operator=(Classifier&&) noexcept = default;
Classifier::Classifier(const Classifier& o) : impl_(std::make_unique<Impl>(*o.impl_)) {}
Classifier& Classifier::operator=(const Classifier& o)
{
    if (this != &o) impl_ = std::make_unique<Impl>(*o.impl_);
    return *this;
}

const ClassifierConfig& Classifier::config() const noexcept { return impl_->cfg; }
const NefConfig& Classifier::nef_config() const noexcept { return impl_->nef; }
int Classifier::n_classes() const noexcept { return impl_->n_classes; }
std::size_t Classifier::input_dim() const noexcept { return impl_->input_dim; }

std::vector<double> Classifier::logits(std::span<const double> x, std::size_t n) const
{
    // eval mode never touches running statistics, so a scratch copy is not needed
    auto& impl = const_cast<Impl&>(*impl_);
    std::vector<double> out;
    out.reserve(n * static_cast<std::size_t>(impl.n_classes));
    const std::size_t chunk = 256;
    for (std::size_t first = 0; first < n; first += chunk) {
        const std::size_t count = std::min(chunk, n - first);
        ad::Tape t;
        const Var z = impl.forward(t, x.subspan(first * impl.input_dim, count * impl.input_dim), count, false);
        const Matrix& zv = z.value();
        out.insert(out.end(), zv.data(), zv.data() + zv.size());
    }
    return out;
}

std::vector<double> Classifier::logits(const ParamBatch<float>& p) const
{
    if (p.param_dim != impl_->input_dim) throw DataError("classifier: parameter dimension does not match the model");
    const std::vector<double> x(p.values.begin(), p.values.end());
    return logits(x, p.n_nefs);
}

double Classifier::loss(std::span<const double> x, std::size_t n, std::span<const int> labels, bool training,
                        std::vector<double>* grad)
{
    if (labels.size() != n) throw DataError("classifier: label count does not match the batch");
    for (int l : labels) {
        if (l < 0 || l >= impl_->n_classes) throw DataError("classifier: label out of range");
    }
    ad::Tape t;
    const Var z = impl_->forward(t, x, n, training);
    const Var L = ad::cross_entropy(z, std::vector<int>(labels.begin(), labels.end()));
    const double value = L.value()(0, 0);
    if (grad != nullptr) {
        impl_->zero_grads();
        t.backward(L);
        grad->clear();
        for (auto* p : impl_->all_params()) grad->insert(grad->end(), p->grad.data(), p->grad.data() + p->grad.size());
    }
    return value;
}

std::vector<double> Classifier::parameters() const
{
    std::vector<double> out;
    for (auto* p : impl_->all_params()) out.insert(out.end(), p->value.data(), p->value.data() + p->value.size());
    return out;
}

void Classifier::set_parameters(std::span<const double> values)
{
    if (values.size() != parameter_count()) throw DataError("classifier: parameter vector has the wrong length");
    std::size_t k = 0;
    for (auto* p : impl_->all_params()) {
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(k), p->value.size(), p->value.data());
        k += static_cast<std::size_t>(p->value.size());
    }
}

std::size_t Classifier::parameter_count() const
{
    std::size_t n = 0;
    for (auto* p : impl_->all_params()) n += static_cast<std::size_t>(p->value.size());
    return n;
}

void Classifier::fit_standardization(std::span<const double> x, std::size_t n)
{
    auto& im = *impl_;
    if (!im.cfg.standardize || n == 0) return;
    auto finish = [](double sum, double sq, double count, double& mean, double& sd) {
        mean = sum / count;
        const double var = std::max(0.0, sq / count - mean * mean);
        sd = var > 1e-24 ? std::sqrt(var) : 1.0;
    };
    if (im.cfg.model == ModelKind::mlp) {
        for (std::size_t k = 0; k < im.input_dim; ++k) {
            double s = 0.0, q = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double v = x[i * im.input_dim + k];
                s += v;
                q += v * v;
            }
            finish(s, q, static_cast<double>(n), im.shift[k], im.scale[k]);
        }
        return;
    }
    // mpnn: one scalar statistic per channel over the hidden/output nodes and all edges
    double s[3] = {0, 0, 0}, q[3] = {0, 0, 0}, c[3] = {0, 0, 0};
    for (std::size_t i = 0; i < n; ++i) {
        const NefGraph g = build_graph<double>(im.nef, x.subspan(i * im.input_dim, im.input_dim));
        for (std::size_t v = static_cast<std::size_t>(g.group_offset[1]); v < g.n_nodes; ++v) {
            for (int ch = 0; ch < 2; ++ch) {
                const double val = g.node_features[v * g.node_dim + static_cast<std::size_t>(ch)];
                s[ch] += val;
                q[ch] += val * val;
                c[ch] += 1.0;
            }
        }
        for (double w : g.edge_weight) {
            s[2] += w;
            q[2] += w * w;
            c[2] += 1.0;
        }
    }
    for (int ch = 0; ch < 3; ++ch) {
        if (c[ch] > 0) finish(s[ch], q[ch], c[ch], im.shift[static_cast<std::size_t>(ch)], im.scale[static_cast<std::size_t>(ch)]);
    }
    // the phase channel is identically zero for non-Fourier architectures
    if (im.nef.arch != Arch::fouriernet) {
        im.shift[1] = 0.0;
        im.scale[1] = 1.0;
    }
}

double Classifier::train_step(std::span<const double> x, std::size_t n, std::span<const int> labels, std::size_t* correct)
{
    auto& im = *impl_;
    ad::Tape t;
    const Var z = im.forward(t, x, n, true);
    const Var L = ad::cross_entropy(z, std::vector<int>(labels.begin(), labels.end()));
    if (correct != nullptr) {
        const Matrix& zv = z.value();
        for (std::size_t i = 0; i < n; ++i) {
            const auto row = std::span<const double>(zv.data() + i * static_cast<std::size_t>(zv.cols()), static_cast<std::size_t>(zv.cols()));
            if (argmax_row(row) == labels[i]) ++*correct;
        }
    }
    im.zero_grads();
    t.backward(L);
    ++im.adam_t;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(im.adam_t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(im.adam_t));
    const double step = im.cfg.lr / bc1;
    const double sq_bc2 = std::sqrt(bc2);
    for (auto* p : im.all_params()) {
        p->m = b1 * p->m + (1.0 - b1) * p->grad;
        p->v = b2 * p->v + (1.0 - b2) * p->grad.cwiseProduct(p->grad);
        p->value.array() -= step * p->m.array() / (p->v.array().sqrt() / sq_bc2 + eps);
    }
    return L.value()(0, 0);
}

namespace {

constexpr char kCheckpointMagic[4] = {'N', 'F', 'C', '1'};

void put_f64(std::vector<std::byte>& out, double v)
{
    const auto bits = std::bit_cast<std::uint64_t>(v);
    le::put_u32(out, static_cast<std::uint32_t>(bits));
    le::put_u32(out, static_cast<std::uint32_t>(bits >> 32));
}

double get_f64(le::Reader& r)
{
    const std::uint64_t lo = r.u32();
    const std::uint64_t hi = r.u32();
    return std::bit_cast<double>(lo | (hi << 32));
}

} // namespace

std::vector<std::byte> Classifier::encode() const
{
    auto& im = *impl_;
    const json header{{"format_version", 1},
                      {"classifier", to_json(im.cfg)},
                      {"nef_config", to_json(im.nef)},
                      {"n_classes", im.n_classes},
                      {"input_dim", im.input_dim},
                      {"parameter_count", parameter_count()},
                      {"batch_norm_layers", im.bns.size()},
                      {"standardization_size", im.shift.size()}};
    std::vector<std::byte> out;
    for (char c : kCheckpointMagic) out.push_back(static_cast<std::byte>(c));
    const std::string h = header.dump();
    le::put_u32(out, static_cast<std::uint32_t>(h.size()));
    std::size_t begin = out.size();
    for (char c : h) out.push_back(static_cast<std::byte>(c));
    le::put_u32(out, crc32(std::span<const std::byte>(out).subspan(begin)));
    begin = out.size();
    for (double v : parameters()) put_f64(out, v);
    for (const auto& bn : im.bns) {
        for (Eigen::Index i = 0; i < bn.running_mean.size(); ++i) put_f64(out, bn.running_mean(i));
        for (Eigen::Index i = 0; i < bn.running_var.size(); ++i) put_f64(out, bn.running_var(i));
    }
    for (double v : im.shift) put_f64(out, v);
    for (double v : im.scale) put_f64(out, v);
    le::put_u32(out, crc32(std::span<const std::byte>(out).subspan(begin)));
    return out;
}

Classifier Classifier::decode(std::span<const std::byte> bytes)
{
    le::Reader r(bytes, "magic");
    const auto magic = r.take(4);
    for (int i = 0; i < 4; ++i) {
        if (std::to_integer<char>(magic[static_cast<std::size_t>(i)]) != kCheckpointMagic[i]) {
            throw FormatError("magic", "not a classifier checkpoint (bad magic)");
        }
    }
    r.set_section("header");
    const std::uint32_t hlen = r.u32();
    if (r.remaining() < static_cast<std::size_t>(hlen) + 4) throw FormatError("header", "checkpoint header is truncated");
    const auto hbytes = r.take(hlen);
    if (crc32(hbytes) != r.u32()) throw FormatError("header", "CRC mismatch in checkpoint header");
    json header;
    ClassifierConfig cfg;
    NefConfig nef;
    int n_classes = 0;
    std::size_t count = 0, n_bn = 0, n_std = 0;
    try {
        header = json::parse(std::string(reinterpret_cast<const char*>(hbytes.data()), hbytes.size()));
        if (header.at("format_version").get<int>() != 1) throw FormatError("header", "unsupported checkpoint version");
        cfg = classifier_config_from_json(header.at("classifier"));
        nef = config_from_json(header.at("nef_config"));
        n_classes = header.at("n_classes").get<int>();
        count = header.at("parameter_count").get<std::size_t>();
        n_bn = header.at("batch_norm_layers").get<std::size_t>();
        n_std = header.at("standardization_size").get<std::size_t>();
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError("header", std::string("malformed checkpoint header: ") + e.what());
    }
    Classifier model(cfg, nef, n_classes);
    auto& im = *model.impl_;
    if (model.parameter_count() != count || im.bns.size() != n_bn || im.shift.size() != n_std) {
        throw FormatError("header", "checkpoint shapes disagree with its configuration");
    }
    std::size_t payload = count + 2 * n_std;
    for (const auto& bn : im.bns) payload += 2 * static_cast<std::size_t>(bn.running_mean.size());
    r.set_section("payload");
    if (r.remaining() != payload * 8 + 4) throw FormatError("payload", "checkpoint payload size does not match the header");
    const auto data = r.take(payload * 8);
    if (crc32(data) != r.u32()) throw FormatError("payload", "CRC mismatch in checkpoint payload");
    le::Reader pr(data, "payload");
    std::vector<double> values(count);
    for (auto& v : values) v = get_f64(pr);
    model.set_parameters(values);
    for (auto& bn : im.bns) {
        for (Eigen::Index i = 0; i < bn.running_mean.size(); ++i) bn.running_mean(i) = get_f64(pr);
        for (Eigen::Index i = 0; i < bn.running_var.size(); ++i) bn.running_var(i) = get_f64(pr);
    }
    for (auto& v : im.shift) v = get_f64(pr);
    for (auto& v : im.scale) v = get_f64(pr);
    return model;
}

void Classifier::save(const std::filesystem::path& path) const { write_file(path, encode()); }

Classifier Classifier::load(const std::filesystem::path& path)
{
    const auto bytes = read_file(path);
    try {
        return decode(bytes);
    } catch (const FormatError& e) {
        throw FormatError(e.section(), path.string() + ": " + e.what());
    }
}

int argmax_row(std::span<const double> row) noexcept
{
    int best = 0;
    for (std::size_t k = 1; k < row.size(); ++k) {
        if (row[k] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
    }
    return best;
}

int dataset_classes(const NeuralDataset& ds)
{
    if (!ds.class_names.empty()) return static_cast<int>(ds.class_names.size());
    int mx = -1;
    for (auto l : ds.labels) mx = std::max(mx, static_cast<int>(l));
    return mx + 1;
}

std::vector<double> classify(const Classifier& model, const NeuralDataset& ds)
{
    const int k = dataset_classes(ds);
    if (k != model.n_classes()) {
        throw DataError("classify: dataset has " + std::to_string(k) + " classes, model expects " +
                        std::to_string(model.n_classes()));
    }
    if (!(ds.config == model.nef_config())) throw DataError("classify: dataset NeF config does not match the model");
    return model.logits(ds.params);
}

namespace {

struct Scored {
    double loss = 0.0;
    double acc = 0.0;
};

Scored evaluate(const Classifier& model, const std::vector<double>& x, const std::vector<int>& labels,
                const std::vector<std::size_t>& rows)
{
    const std::size_t D = model.input_dim();
    std::vector<double> sub(rows.size() * D);
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(rows[i] * D), D, sub.begin() + static_cast<std::ptrdiff_t>(i * D));
    const auto z = model.logits(sub, rows.size());
    const auto K = static_cast<std::size_t>(model.n_classes());
    Scored s;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::span<const double> row(z.data() + i * K, K);
        const int y = labels[rows[i]];
        const double mx = *std::max_element(row.begin(), row.end());
        double se = 0.0;
        for (double v : row) se += std::exp(v - mx);
        s.loss += -(row[static_cast<std::size_t>(y)] - mx - std::log(se));
        if (argmax_row(row) == y) s.acc += 1.0;
    }
    if (!rows.empty()) {
        s.loss /= static_cast<double>(rows.size());
        s.acc /= static_cast<double>(rows.size());
    }
    return s;
}

void require_classes(const std::vector<std::size_t>& rows, const std::vector<int>& labels, const char* name)
{
    std::set<int> seen;
    for (auto i : rows) seen.insert(labels[i]);
    if (seen.size() < 2) throw DataError(std::string("degenerate split: ") + name + " split has fewer than two classes");
}

} // namespace

TrainReport train_classifier(const NeuralDataset& ds, const SplitSpec& spec, const ClassifierConfig& cfg,
                             Classifier* best_model)
{
    cfg.validate();
    ds.validate();
    TrainReport rep;
    rep.config = cfg;
    rep.split = spec;
    rep.n_classes = dataset_classes(ds);
    const Split sp = split(ds, spec);
    rep.n_train = sp.train.size();
    rep.n_val = sp.val.size();
    rep.n_test = sp.test.size();
    std::vector<int> labels(ds.labels.begin(), ds.labels.end());
    require_classes(sp.train, labels, "train");
    require_classes(sp.val, labels, "val");
    require_classes(sp.test, labels, "test");

    const std::vector<double> x(ds.params.values.begin(), ds.params.values.end());
    const std::size_t D = ds.params.param_dim;
    Classifier model(cfg, ds.config, rep.n_classes);
    if (cfg.standardize) {
        std::vector<double> tx(sp.train.size() * D);
        for (std::size_t i = 0; i < sp.train.size(); ++i) std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(sp.train[i] * D), D, tx.begin() + static_cast<std::ptrdiff_t>(i * D));
        model.fit_standardization(tx, sp.train.size());
    }

    // batches of one sample would give degenerate batch statistics; they join the previous batch
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    std::vector<std::size_t> bounds;
    for (std::size_t b = 0; b < sp.train.size(); b += bs) bounds.push_back(b);
    if (bounds.size() > 1 && sp.train.size() - bounds.back() == 1) bounds.pop_back();
    bounds.push_back(sp.train.size());

    Classifier best = model;
    rep.best_val_acc = -1.0;
    std::vector<std::size_t> order = sp.train;
    std::vector<double> bx;
    std::vector<int> by;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        order = sp.train;
        Stream rng(derive_key(cfg.seed, kShuffleStream), static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t k = 0; k + 1 < bounds.size(); ++k) {
            const std::size_t count = bounds[k + 1] - bounds[k];
            bx.resize(count * D);
            by.resize(count);
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t row = order[bounds[k] + i];
                std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(row * D), D, bx.begin() + static_cast<std::ptrdiff_t>(i * D));
                by[i] = labels[row];
            }
            loss_sum += model.train_step(bx, count, by, &correct) * static_cast<double>(count);
        }
        EpochRecord er;
        er.epoch = epoch;
        er.train_loss = loss_sum / static_cast<double>(order.size());
        er.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
        const Scored val = evaluate(model, x, labels, sp.val);
        er.val_loss = val.loss;
        er.val_acc = val.acc;
        rep.epochs.push_back(er);
        if (val.acc > rep.best_val_acc) {
            rep.best_val_acc = val.acc;
            rep.best_epoch = epoch;
            best = model;
        }
    }
    const Scored test = evaluate(best, x, labels, sp.test);
    rep.test_acc = test.acc;
    rep.test_loss = test.loss;
    rep.test_evaluations = 1;
    if (best_model != nullptr) *best_model = std::move(best);
    return rep;
}

json to_json(const TrainReport& r)
{
    json epochs = json::array();
    for (const auto& e : r.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"train_acc", e.train_acc},
                          {"val_loss", e.val_loss},
                          {"val_acc", e.val_acc}});
    }
    return json{{"config", to_json(r.config)},
                {"split", {{"train", r.split.train}, {"val", r.split.val}, {"test", r.split.test}, {"seed", r.split.seed}}},
                {"n_classes", r.n_classes},
                {"n_train", r.n_train},
                {"n_val", r.n_val},
                {"n_test", r.n_test},
                {"epochs", epochs},
                {"best_epoch", r.best_epoch},
                {"best_val_acc", r.best_val_acc},
                {"test_acc", r.test_acc},
                {"test_loss", r.test_loss},
                {"test_evaluations", r.test_evaluations}};
}

std::string epochs_csv(const TrainReport& r)
{
    std::ostringstream os;
    os.precision(17);
    os << "epoch,train_loss,train_acc,val_loss,val_acc\n";
    for (const auto& e : r.epochs) {
        os << e.epoch << ',' << e.train_loss << ',' << e.train_acc << ',' << e.val_loss << ',' << e.val_acc << '\n';
    }
    return os.str();
}

} // namespace nef
