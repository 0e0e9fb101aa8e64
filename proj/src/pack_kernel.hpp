#pragma once

// Lane-interleaved evaluation and reverse-mode differentiation of a pack of
// NeFs. A pack holds L networks of identical architecture; every parameter is
// stored as L consecutive values (one per network), and activations of a block
// of B coordinates are stored as [unit][coordinate][lane]. All inner loops run
// over lanes, so the same arithmetic is issued for every network in the pack
// and vector width maps onto the NeF axis. With L = 1 the code reduces to the
// plain single-network implementation and produces bit-identical results.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "nef/config.hpp"
#include "nef/sincos.hpp"

namespace nef::detail {

inline constexpr int kBlock = 8;

template <class T>
inline constexpr int native_lanes = 64 / static_cast<int>(sizeof(T));

enum class LossKind { mse, bce };

template <class T, int L, int B = kBlock>
class PackKernel {
public:
    static constexpr int S = B * L;

    PackKernel(const NefConfig& config, const ParamLayout& layout) : config_(config), layout_(layout)
    {
        d_ = config.in_dim;
        c_ = config.out_dim;
        h_ = config.hidden_dim;
        k_ = config.num_layers;
        switch (config.arch) {
        case Arch::siren: plan_siren(); break;
        case Arch::rffnet: plan_rffnet(); break;
        case Arch::fouriernet: plan_fouriernet(); break;
        }
        scratch_.assign(static_cast<std::size_t>(std::max(h_, c_)) * S, T(0));
    }

    int in_dim() const noexcept { return d_; }
    int out_dim() const noexcept { return c_; }
    std::size_t param_dim() const noexcept { return layout_.param_dim; }

    // Forward on one block. x: [d][S]; out: [c][S].
    void forward(const T* P, const T* x, T* out)
    {
        switch (config_.arch) {
        case Arch::siren: forward_siren(P, x, out); break;
        case Arch::rffnet: forward_rffnet(P, x, out); break;
        case Arch::fouriernet: forward_fouriernet(P, x, out); break;
        }
    }

    // Reverse pass for the block most recently passed to forward().
    // g_out: [c][S] = dLoss/dout. Gradients are accumulated into G.
    void backward(const T* P, const T* x, const T* g_out, T* G)
    {
        switch (config_.arch) {
        case Arch::siren: backward_siren(P, x, g_out, G); break;
        case Arch::rffnet: backward_rffnet(P, x, g_out, G); break;
        case Arch::fouriernet: backward_fouriernet(P, x, g_out, G); break;
        }
    }

    // Activations retained by the last forward() call, in evaluation order.
    struct Stage {
        std::string name;
        int width;
        const T* data; // [width][S]
    };
    std::vector<Stage> stages() const
    {
        std::vector<Stage> out;
        for (const auto& s : stage_index_) out.push_back({s.name, s.width, bufs_[s.buffer].data()});
        return out;
    }

private:
    struct StageRef {
        std::string name;
        int width;
        std::size_t buffer;
    };

    std::size_t buffer(int width)
    {
        bufs_.emplace_back(static_cast<std::size_t>(width) * S, T(0));
        return bufs_.size() - 1;
    }
    T* buf(std::size_t id) { return bufs_[id].data(); }
    std::size_t off(const std::string& name) const { return layout_.entry(name).offset * L; }

    // ---- plans -------------------------------------------------------------

    struct Dense {
        std::size_t w = 0, b = 0;
        int n_in = 0, n_out = 0;
    };

    void plan_siren()
    {
        omega0_ = static_cast<T>(*config_.omega0);
        int n_in = d_;
        for (int l = 0; l < k_; ++l) {
            const bool last = l == k_ - 1;
            Dense layer{off("W" + std::to_string(l)), off("b" + std::to_string(l)), n_in, last ? c_ : h_};
            layers_.push_back(layer);
            if (!last) {
                pre_.push_back(buffer(h_));
                act_.push_back(buffer(h_));
                cos_.push_back(buffer(h_));
                grad_.push_back(buffer(h_));
                stage_index_.push_back({"h" + std::to_string(l + 1), h_, act_.back()});
            }
            n_in = h_;
        }
    }

    void plan_rffnet()
    {
        rff_scale_ = static_cast<T>(*config_.rff_std);
        emb_ = off("emb");
        z_ = buffer(h_);
        zs_ = buffer(h_);
        zc_ = buffer(h_);
        gzs_ = buffer(h_);
        gzc_ = buffer(h_);
        stage_index_.push_back({"z", h_, z_});
        stage_index_.push_back({"sin", h_, zs_});
        stage_index_.push_back({"cos", h_, zc_});
        for (int l = 1; l < k_; ++l) {
            const bool last = l == k_ - 1;
            const std::string tag = "L" + std::to_string(l);
            Dense layer;
            layer.n_out = last ? c_ : h_;
            layer.b = off(tag + ".b");
            if (l == 1) {
                layer.w = off(tag + ".sin");
                first_cos_w_ = off(tag + ".cos");
                layer.n_in = h_;
            } else {
                layer.w = off(tag + ".W");
                layer.n_in = h_;
            }
            layers_.push_back(layer);
            if (!last) {
                pre_.push_back(buffer(h_));
                act_.push_back(buffer(h_));
                grad_.push_back(buffer(h_));
                stage_index_.push_back({"h" + std::to_string(l), h_, act_.back()});
            }
        }
    }

    void plan_fouriernet()
    {
        const int filters = k_ - 1;
        for (int i = 1; i <= filters; ++i) {
            filters_.push_back({off("F" + std::to_string(i) + ".omega"), off("F" + std::to_string(i) + ".phase"), d_, h_});
            fsin_.push_back(buffer(h_));
            fcos_.push_back(buffer(h_));
            z_list_.push_back(buffer(h_));
            gz_.push_back(buffer(h_));
            stage_index_.push_back({"g" + std::to_string(i), h_, fsin_.back()});
        }
        for (int i = 1; i <= filters; ++i) {
            const bool last = i == filters;
            const std::string tag = "L" + std::to_string(i);
            layers_.push_back({off(tag + ".W"), off(tag + ".b"), h_, last ? c_ : h_});
            if (!last) {
                u_.push_back(buffer(h_));
                stage_index_.push_back({"z" + std::to_string(i + 1), h_, z_list_[static_cast<std::size_t>(i)]});
            }
        }
        // z1 equals the first filter output; it gets its own stage entry for clarity.
        stage_index_.insert(stage_index_.begin() + 1, StageRef{"z1", h_, z_list_[0]});
    }

    // ---- building blocks ---------------------------------------------------

    // out[j] = sum_i W[j,i] * in[i]   (or += when accumulate)
    static void dense_forward(const T* __restrict W, int n_in, int n_out, const T* __restrict in, T* __restrict out,
                              bool accumulate)
    {
        for (int j = 0; j < n_out; ++j) {
            T acc[S];
            T* o = out + static_cast<std::size_t>(j) * S;
            if (accumulate) {
                for (int s = 0; s < S; ++s) acc[s] = o[s];
            } else {
                for (int s = 0; s < S; ++s) acc[s] = T(0);
            }
            const T* wrow = W + static_cast<std::size_t>(j) * n_in * L;
            for (int i = 0; i < n_in; ++i) {
                const T* w = wrow + static_cast<std::size_t>(i) * L;
                const T* x = in + static_cast<std::size_t>(i) * S;
                for (int b = 0; b < B; ++b) {
                    for (int l = 0; l < L; ++l) acc[b * L + l] += w[l] * x[b * L + l];
                }
            }
            for (int s = 0; s < S; ++s) o[s] = acc[s];
        }
    }

    // out[j] = scale * out[j] + bias[j]
    static void affine(T* __restrict out, int n, T scale, const T* __restrict bias)
    {
        for (int j = 0; j < n; ++j) {
            T* o = out + static_cast<std::size_t>(j) * S;
            const T* bj = bias + static_cast<std::size_t>(j) * L;
            for (int b = 0; b < B; ++b) {
                for (int l = 0; l < L; ++l) o[b * L + l] = scale * o[b * L + l] + bj[l];
            }
        }
    }

    static void add_bias(T* __restrict out, int n, const T* __restrict bias)
    {
        for (int j = 0; j < n; ++j) {
            T* o = out + static_cast<std::size_t>(j) * S;
            const T* bj = bias + static_cast<std::size_t>(j) * L;
            for (int b = 0; b < B; ++b) {
                for (int l = 0; l < L; ++l) o[b * L + l] = o[b * L + l] + bj[l];
            }
        }
    }

    static void sincos_block(const T* __restrict a, T* __restrict s, T* __restrict c, int n)
    {
        const std::size_t total = static_cast<std::size_t>(n) * S;
        for (std::size_t i = 0; i < total; ++i) nef::sincos(a[i], s[i], c[i]);
    }

    // gW[j,i] += sum_b g[j,b] * in[i,b];  gin[i] += sum_j W[j,i] * g[j]  (gin optional)
    static void dense_backward(const T* __restrict W, T* __restrict gW, int n_in, int n_out, const T* __restrict in,
                               const T* __restrict g, T* __restrict gin)
    {
        for (int j = 0; j < n_out; ++j) {
            const T* gj = g + static_cast<std::size_t>(j) * S;
            const T* wrow = W + static_cast<std::size_t>(j) * n_in * L;
            T* gwrow = gW + static_cast<std::size_t>(j) * n_in * L;
            for (int i = 0; i < n_in; ++i) {
                const T* x = in + static_cast<std::size_t>(i) * S;
                T* gw = gwrow + static_cast<std::size_t>(i) * L;
                T accw[L];
                for (int l = 0; l < L; ++l) accw[l] = gw[l];
                for (int b = 0; b < B; ++b) {
                    for (int l = 0; l < L; ++l) accw[l] += gj[b * L + l] * x[b * L + l];
                }
                for (int l = 0; l < L; ++l) gw[l] = accw[l];
                if (gin != nullptr) {
                    const T* w = wrow + static_cast<std::size_t>(i) * L;
                    T* gi = gin + static_cast<std::size_t>(i) * S;
                    for (int b = 0; b < B; ++b) {
                        for (int l = 0; l < L; ++l) gi[b * L + l] += w[l] * gj[b * L + l];
                    }
                }
            }
        }
    }

    static void bias_backward(T* __restrict gb, int n, const T* __restrict g)
    {
        for (int j = 0; j < n; ++j) {
            const T* gj = g + static_cast<std::size_t>(j) * S;
            T* gbj = gb + static_cast<std::size_t>(j) * L;
            T acc[L];
            for (int l = 0; l < L; ++l) acc[l] = gbj[l];
            for (int b = 0; b < B; ++b) {
                for (int l = 0; l < L; ++l) acc[l] += gj[b * L + l];
            }
            for (int l = 0; l < L; ++l) gbj[l] = acc[l];
        }
    }

    static void zero(T* p, int n)
    {
        const std::size_t total = static_cast<std::size_t>(n) * S;
        for (std::size_t i = 0; i < total; ++i) p[i] = T(0);
    }

    // ---- Siren -------------------------------------------------------------
    // h_{l+1} = sin(omega0 * W_l h_l + b_l), out = W_{k-1} h_{k-1} + b_{k-1}

    void forward_siren(const T* P, const T* x, T* out)
    {
        const T* in = x;
        for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
            const Dense& D = layers_[l];
            T* pre = buf(pre_[l]);
            dense_forward(P + D.w, D.n_in, D.n_out, in, pre, false);
            affine(pre, D.n_out, omega0_, P + D.b);
            sincos_block(pre, buf(act_[l]), buf(cos_[l]), D.n_out);
            in = buf(act_[l]);
        }
        const Dense& D = layers_.back();
        dense_forward(P + D.w, D.n_in, D.n_out, in, out, false);
        add_bias(out, D.n_out, P + D.b);
    }

    void backward_siren(const T* P, const T* x, const T* g_out, T* G)
    {
        const std::size_t hidden_layers = layers_.size() - 1;
        {
            const Dense& D = layers_.back();
            T* gin = buf(grad_[hidden_layers - 1]);
            zero(gin, D.n_in);
            bias_backward(G + D.b, D.n_out, g_out);
            dense_backward(P + D.w, G + D.w, D.n_in, D.n_out, buf(act_[hidden_layers - 1]), g_out, gin);
        }
        T* gwh = scratch_.data();
        for (std::size_t l = hidden_layers; l-- > 0;) {
            const Dense& D = layers_[l];
            T* gh = buf(grad_[l]);
            const T* cs = buf(cos_[l]);
            const std::size_t total = static_cast<std::size_t>(D.n_out) * S;
            // gh becomes dL/dpre in place.
            for (std::size_t i = 0; i < total; ++i) gh[i] = gh[i] * cs[i];
            bias_backward(G + D.b, D.n_out, gh);
            for (std::size_t i = 0; i < total; ++i) gwh[i] = omega0_ * gh[i];
            T* gin = nullptr;
            const T* in = x;
            if (l > 0) {
                gin = buf(grad_[l - 1]);
                zero(gin, D.n_in);
                in = buf(act_[l - 1]);
            }
            dense_backward(P + D.w, G + D.w, D.n_in, D.n_out, in, gwh, gin);
        }
    }

    // ---- RFFNet ------------------------------------------------------------
    // z = s * E x, h1 = relu(Ws sin z + Wc cos z + b1), h_l = relu(W_l h_{l-1} + b_l), out = W h + b

    void forward_rffnet(const T* P, const T* x, T* out)
    {
        T* z = buf(z_);
        dense_forward(P + emb_, d_, h_, x, z, false);
        const std::size_t total = static_cast<std::size_t>(h_) * S;
        for (std::size_t i = 0; i < total; ++i) z[i] = rff_scale_ * z[i];
        sincos_block(z, buf(zs_), buf(zc_), h_);

        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const Dense& D = layers_[l];
            const bool last = l + 1 == layers_.size();
            T* a = last ? out : buf(pre_[l]);
            if (l == 0) {
                dense_forward(P + D.w, D.n_in, D.n_out, buf(zs_), a, false);
                dense_forward(P + first_cos_w_, D.n_in, D.n_out, buf(zc_), a, true);
            } else {
                dense_forward(P + D.w, D.n_in, D.n_out, buf(act_[l - 1]), a, false);
            }
            add_bias(a, D.n_out, P + D.b);
            if (!last) {
                T* h = buf(act_[l]);
                const std::size_t n = static_cast<std::size_t>(D.n_out) * S;
                for (std::size_t i = 0; i < n; ++i) h[i] = a[i] > T(0) ? a[i] : T(0);
            }
        }
    }

    void backward_rffnet(const T* P, const T* x, const T* g_out, T* G)
    {
        const T* g = g_out;
        for (std::size_t l = layers_.size(); l-- > 0;) {
            const Dense& D = layers_[l];
            const bool last = l + 1 == layers_.size();
            if (!last) {
                // grad_[l] holds dL/dh_l; turn it into dL/da_l.
                T* gh = buf(grad_[l]);
                const T* a = buf(pre_[l]);
                const std::size_t n = static_cast<std::size_t>(D.n_out) * S;
                for (std::size_t i = 0; i < n; ++i) gh[i] = a[i] > T(0) ? gh[i] : T(0);
                g = gh;
            }
            bias_backward(G + D.b, D.n_out, g);
            if (l == 0) {
                T* gs = buf(gzs_);
                T* gc = buf(gzc_);
                zero(gs, h_);
                zero(gc, h_);
                dense_backward(P + D.w, G + D.w, D.n_in, D.n_out, buf(zs_), g, gs);
                dense_backward(P + first_cos_w_, G + first_cos_w_, D.n_in, D.n_out, buf(zc_), g, gc);
            } else {
                T* gin = buf(grad_[l - 1]);
                zero(gin, D.n_in);
                dense_backward(P + D.w, G + D.w, D.n_in, D.n_out, buf(act_[l - 1]), g, gin);
            }
        }
        // dL/dz = gs * cos z - gc * sin z, then through the scaled embedding.
        T* gz = scratch_.data();
        const T* gs = buf(gzs_);
        const T* gc = buf(gzc_);
        const T* sn = buf(zs_);
        const T* cs = buf(zc_);
        const std::size_t total = static_cast<std::size_t>(h_) * S;
        for (std::size_t i = 0; i < total; ++i) gz[i] = rff_scale_ * (gs[i] * cs[i] - gc[i] * sn[i]);
        dense_backward(P + emb_, G + emb_, d_, h_, x, gz, nullptr);
    }

    // ---- FourierNet --------------------------------------------------------
    // g_i = sin(omega_i x + phi_i), z1 = g1, z_{i+1} = (W_i z_i + b_i) * g_{i+1}, out = W z + b

    void forward_fouriernet(const T* P, const T* x, T* out)
    {
        T* fa = scratch_.data();
        for (std::size_t i = 0; i < filters_.size(); ++i) {
            const Dense& F = filters_[i];
            dense_forward(P + F.w, F.n_in, F.n_out, x, fa, false);
            add_bias(fa, F.n_out, P + F.b);
            sincos_block(fa, buf(fsin_[i]), buf(fcos_[i]), F.n_out);
        }
        {
            const T* g1 = buf(fsin_[0]);
            T* z1 = buf(z_list_[0]);
            const std::size_t total = static_cast<std::size_t>(h_) * S;
            for (std::size_t s = 0; s < total; ++s) z1[s] = g1[s];
        }
        for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
            const Dense& D = layers_[i];
            T* u = buf(u_[i]);
            dense_forward(P + D.w, D.n_in, D.n_out, buf(z_list_[i]), u, false);
            add_bias(u, D.n_out, P + D.b);
            const T* gnext = buf(fsin_[i + 1]);
            T* znext = buf(z_list_[i + 1]);
            const std::size_t total = static_cast<std::size_t>(D.n_out) * S;
            for (std::size_t s = 0; s < total; ++s) znext[s] = u[s] * gnext[s];
        }
        const Dense& D = layers_.back();
        dense_forward(P + D.w, D.n_in, D.n_out, buf(z_list_.back()), out, false);
        add_bias(out, D.n_out, P + D.b);
    }

    void backward_fouriernet(const T* P, const T* x, const T* g_out, T* G)
    {
        const std::size_t last_z = z_list_.size() - 1;
        {
            const Dense& D = layers_.back();
            T* gz = buf(gz_[last_z]);
            zero(gz, D.n_in);
            bias_backward(G + D.b, D.n_out, g_out);
            dense_backward(P + D.w, G + D.w, D.n_in, D.n_out, buf(z_list_[last_z]), g_out, gz);
        }
        T* gtmp = scratch_.data();
        const std::size_t total = static_cast<std::size_t>(h_) * S;
        for (std::size_t i = last_z; i-- > 0;) {
            // z_{i+1} = u_i * g_{i+1}
            const Dense& D = layers_[i];
            T* gzn = buf(gz_[i + 1]);
            const T* u = buf(u_[i]);
            const T* gf = buf(fsin_[i + 1]);
            const T* fc = buf(fcos_[i + 1]);
            // gtmp = dL/du, gzn becomes dL/d(filter pre-activation) of filter i+1.
            for (std::size_t s = 0; s < total; ++s) {
                gtmp[s] = gzn[s] * gf[s];
                gzn[s] = gzn[s] * u[s] * fc[s];
            }
            bias_backward(G + D.b, D.n_out, gtmp);
            T* gz = buf(gz_[i]);
            zero(gz, D.n_in);
            dense_backward(P + D.w, G + D.w, D.n_in, D.n_out, buf(z_list_[i]), gtmp, gz);
            const Dense& F = filters_[i + 1];
            bias_backward(G + F.b, F.n_out, gzn);
            dense_backward(P + F.w, G + F.w, F.n_in, F.n_out, x, gzn, nullptr);
        }
        // z1 = g1
        T* gz1 = buf(gz_[0]);
        const T* fc1 = buf(fcos_[0]);
        for (std::size_t s = 0; s < total; ++s) gz1[s] = gz1[s] * fc1[s];
        const Dense& F = filters_[0];
        bias_backward(G + F.b, F.n_out, gz1);
        dense_backward(P + F.w, G + F.w, F.n_in, F.n_out, x, gz1, nullptr);
    }

    NefConfig config_;
    ParamLayout layout_;
    int d_ = 0, c_ = 0, h_ = 0, k_ = 0;
    T omega0_ = T(1);
    T rff_scale_ = T(1);

    std::vector<std::vector<T>> bufs_;
    std::vector<T> scratch_;
    std::vector<StageRef> stage_index_;

    std::vector<Dense> layers_;
    std::vector<std::size_t> pre_, act_, cos_, grad_;

    std::size_t emb_ = 0, first_cos_w_ = 0;
    std::size_t z_ = 0, zs_ = 0, zc_ = 0, gzs_ = 0, gzc_ = 0;

    std::vector<Dense> filters_;
    std::vector<std::size_t> fsin_, fcos_, z_list_, gz_, u_;
};

} // namespace nef::detail
