#pragma once

// Minimal reverse-mode differentiation over row-major double matrices, enough
// for MLPs with batch norm and batched message passing on fixed topologies.

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

namespace nef::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Param {
    Matrix value;
    Matrix grad;
    Matrix m, v; // Adam moments

    explicit Param(Matrix init = {}) : value(std::move(init))
    {
        grad = Matrix::Zero(value.rows(), value.cols());
        m = grad;
        v = grad;
    }
};

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;
    const Matrix& value() const;
    Matrix& grad() const;
};

class Tape {
public:
    Var constant(Matrix value)
    {
        nodes_.push_back({std::move(value), {}, nullptr, {}});
        return {this, static_cast<int>(nodes_.size() - 1)};
    }

    // Gradients flow into p.grad (accumulated) when backward() runs.
    Var param(Param& p)
    {
        Var v = constant(p.value);
        params_.push_back({v.id, &p});
        return v;
    }

    Var record(Matrix value, std::vector<int> inputs, std::function<void(Tape&, int)> backward)
    {
        nodes_.push_back({std::move(value), {}, std::move(backward), std::move(inputs)});
        return {this, static_cast<int>(nodes_.size() - 1)};
    }

    const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    Matrix& grad(int id)
    {
        auto& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    // Seeds d(out)/d(out) = 1 for a 1x1 output and runs every recorded backward.
    void backward(Var out)
    {
        grad(out.id)(0, 0) = 1.0;
        for (int i = out.id; i >= 0; --i) {
            auto& n = nodes_[static_cast<std::size_t>(i)];
            if (n.backward && n.grad.size() != 0) n.backward(*this, i);
        }
        for (auto& [id, p] : params_) {
            auto& n = nodes_[static_cast<std::size_t>(id)];
            if (n.grad.size() != 0) p->grad += n.grad;
        }
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        std::function<void(Tape&, int)> backward;
        std::vector<int> inputs;
    };
    std::vector<Node> nodes_;
    std::vector<std::pair<int, Param*>> params_;

    friend struct Var;
};

inline const Matrix& Var::value() const { return tape->value(id); }
inline Matrix& Var::grad() const { return tape->grad(id); }

// y = x W^T (+ b)
inline Var linear(Var x, Var W, const Var* b)
{
    Tape& t = *x.tape;
    Matrix y = x.value() * W.value().transpose();
    if (b != nullptr) y.rowwise() += b->value().row(0);
    const int xi = x.id, wi = W.id, bi = b != nullptr ? b->id : -1;
    return t.record(std::move(y), {xi, wi, bi}, [xi, wi, bi](Tape& tp, int self) {
        const Matrix g = tp.grad(self);
        tp.grad(xi).noalias() += g * tp.value(wi);
        tp.grad(wi).noalias() += g.transpose() * tp.value(xi);
        if (bi >= 0) tp.grad(bi).row(0) += g.colwise().sum();
    });
}

inline Var relu(Var x)
{
    Tape& t = *x.tape;
    Matrix y = x.value().cwiseMax(0.0);
    const int xi = x.id;
    return t.record(std::move(y), {xi}, [xi](Tape& tp, int self) {
        const Matrix& xv = tp.value(xi);
        const Matrix& g = tp.grad(self);
        tp.grad(xi) += (xv.array() > 0.0).select(g, 0.0);
    });
}

inline Var add(Var a, Var b)
{
    Tape& t = *a.tape;
    Matrix y = a.value() + b.value();
    const int ai = a.id, bi = b.id;
    return t.record(std::move(y), {ai, bi}, [ai, bi](Tape& tp, int self) {
        const Matrix g = tp.grad(self);
        tp.grad(ai) += g;
        tp.grad(bi) += g;
    });
}

inline Var concat_cols(Var a, Var b)
{
    Tape& t = *a.tape;
    Matrix y(a.value().rows(), a.value().cols() + b.value().cols());
    y << a.value(), b.value();
    const int ai = a.id, bi = b.id;
    const auto ca = a.value().cols();
    return t.record(std::move(y), {ai, bi}, [ai, bi, ca](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        tp.grad(ai) += g.leftCols(ca);
        tp.grad(bi) += g.rightCols(g.cols() - ca);
    });
}

// y[i] = x[index[i]]
inline Var gather_rows(Var x, std::shared_ptr<const std::vector<int>> index)
{
    Tape& t = *x.tape;
    const Matrix& xv = x.value();
    Matrix y(static_cast<Eigen::Index>(index->size()), xv.cols());
    for (std::size_t i = 0; i < index->size(); ++i) y.row(static_cast<Eigen::Index>(i)) = xv.row((*index)[i]);
    const int xi = x.id;
    return t.record(std::move(y), {xi}, [xi, index](Tape& tp, int self) {
        const Matrix g = tp.grad(self);
        Matrix& gx = tp.grad(xi);
        for (std::size_t i = 0; i < index->size(); ++i) gx.row((*index)[i]) += g.row(static_cast<Eigen::Index>(i));
    });
}

// y[s] = mean of x[i] over rows with segment[i] == s (zero for empty segments).
inline Var segment_mean(Var x, std::shared_ptr<const std::vector<int>> segment, int n_segments)
{
    Tape& t = *x.tape;
    const Matrix& xv = x.value();
    Matrix y = Matrix::Zero(n_segments, xv.cols());
    auto counts = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n_segments), 0.0);
    for (std::size_t i = 0; i < segment->size(); ++i) {
        y.row((*segment)[i]) += xv.row(static_cast<Eigen::Index>(i));
        (*counts)[static_cast<std::size_t>((*segment)[i])] += 1.0;
    }
    for (int s = 0; s < n_segments; ++s) {
        if ((*counts)[static_cast<std::size_t>(s)] > 0) y.row(s) /= (*counts)[static_cast<std::size_t>(s)];
    }
    const int xi = x.id;
    return t.record(std::move(y), {xi}, [xi, segment, counts](Tape& tp, int self) {
        const Matrix g = tp.grad(self);
        Matrix& gx = tp.grad(xi);
        for (std::size_t i = 0; i < segment->size(); ++i) {
            const int s = (*segment)[i];
            gx.row(static_cast<Eigen::Index>(i)) += g.row(s) / (*counts)[static_cast<std::size_t>(s)];
        }
    });
}

struct EdgeIndex {
    std::vector<int> src, dst;
    std::vector<double> inv_count; // per node, 1 / in-degree (0 for isolated nodes)
};

// out[v] = mean over edges e into v of relu(ps[src e] + pd[v] + We ef[e] + b),
// the first layer of a per-edge MLP followed by mean aggregation, evaluated
// without materializing per-edge activations.
inline Var edge_relu_mean(Var ps, Var pd, Var We, Var b, std::shared_ptr<const Matrix> ef,
                          std::shared_ptr<const EdgeIndex> idx)
{
    Tape& t = *ps.tape;
    const Matrix& P = ps.value();
    const Matrix& D = pd.value();
    const Matrix WeT = We.value().transpose(); // F x W
    const RowVector bias = b.value().row(0);
    const auto n_edges = static_cast<Eigen::Index>(idx->src.size());
    const auto width = P.cols();
    auto pre = [&P, &D, &WeT, &bias, &ef, &idx](Eigen::Index e, RowVector& z) {
        z = P.row(idx->src[static_cast<std::size_t>(e)]) + D.row(idx->dst[static_cast<std::size_t>(e)]) + bias;
        for (Eigen::Index f = 0; f < ef->cols(); ++f) {
            const double a = (*ef)(e, f);
            if (a != 0.0) z += a * WeT.row(f);
        }
    };
    Matrix out = Matrix::Zero(P.rows(), width);
    RowVector z(width);
    for (Eigen::Index e = 0; e < n_edges; ++e) {
        pre(e, z);
        out.row(idx->dst[static_cast<std::size_t>(e)]) += z.cwiseMax(0.0);
    }
    for (Eigen::Index v = 0; v < out.rows(); ++v) out.row(v) *= idx->inv_count[static_cast<std::size_t>(v)];

    const int pi = ps.id, di = pd.id, wi = We.id, bi = b.id;
    return t.record(std::move(out), {pi, di, wi, bi}, [pi, di, wi, bi, ef, idx](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        const Matrix& P = tp.value(pi);
        const Matrix& D = tp.value(di);
        const Matrix WeT = tp.value(wi).transpose();
        const RowVector bias = tp.value(bi).row(0);
        Matrix& gP = tp.grad(pi);
        Matrix& gD = tp.grad(di);
        Matrix gWeT = Matrix::Zero(WeT.rows(), WeT.cols());
        RowVector gb = RowVector::Zero(bias.cols());
        RowVector z(P.cols());
        RowVector gz(P.cols());
        for (Eigen::Index e = 0; e < static_cast<Eigen::Index>(idx->src.size()); ++e) {
            const int s = idx->src[static_cast<std::size_t>(e)];
            const int d = idx->dst[static_cast<std::size_t>(e)];
            z = P.row(s) + D.row(d) + bias;
            for (Eigen::Index f = 0; f < ef->cols(); ++f) {
                const double a = (*ef)(e, f);
                if (a != 0.0) z += a * WeT.row(f);
            }
            gz = (z.array() > 0.0).select(g.row(d) * idx->inv_count[static_cast<std::size_t>(d)], 0.0);
            gP.row(s) += gz;
            gD.row(d) += gz;
            gb += gz;
            for (Eigen::Index f = 0; f < ef->cols(); ++f) {
                const double a = (*ef)(e, f);
                if (a != 0.0) gWeT.row(f) += a * gz;
            }
        }
        tp.grad(wi) += gWeT.transpose();
        tp.grad(bi).row(0) += gb;
    });
}

struct BatchNormState {
    Param gamma, beta;
    RowVector running_mean, running_var;
    double momentum = 0.9; // running = momentum * running + (1 - momentum) * batch
    double eps = 1e-5;

    explicit BatchNormState(int width)
        : gamma(Matrix::Ones(1, width)), beta(Matrix::Zero(1, width)), running_mean(RowVector::Zero(width)),
          running_var(RowVector::Ones(width))
    {
    }
};

// Training mode normalizes with batch statistics (biased variance) and updates
// the running estimates with the unbiased variance; eval mode uses running stats.
inline Var batch_norm(Var x, BatchNormState& bn, bool training)
{
    Tape& t = *x.tape;
    Var gamma = t.param(bn.gamma);
    Var beta = t.param(bn.beta);
    const Matrix& xv = x.value();
    const auto n = static_cast<double>(xv.rows());
    RowVector mean, var;
    if (training) {
        mean = xv.colwise().mean();
        var = (xv.rowwise() - mean).array().square().colwise().mean();
        const RowVector unbiased = n > 1 ? RowVector(var * (n / (n - 1))) : var;
        bn.running_mean = bn.momentum * bn.running_mean + (1.0 - bn.momentum) * mean;
        bn.running_var = bn.momentum * bn.running_var + (1.0 - bn.momentum) * unbiased;
    } else {
        mean = bn.running_mean;
        var = bn.running_var;
    }
    const RowVector inv_std = (var.array() + bn.eps).rsqrt();
    Matrix xhat = (xv.rowwise() - mean).array().rowwise() * inv_std.array();
    Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
    const int xi = x.id, gi = gamma.id, bi = beta.id;
    return t.record(std::move(y), {xi, gi, bi}, [xi, gi, bi, xhat = std::move(xhat), inv_std, training](Tape& tp, int self) {
        const Matrix g = tp.grad(self);
        tp.grad(gi).row(0) += (g.array() * xhat.array()).colwise().sum().matrix();
        tp.grad(bi).row(0) += g.colwise().sum();
        const RowVector gam = tp.value(gi).row(0);
        const Matrix gxhat = g.array().rowwise() * gam.array();
        if (!training) {
            tp.grad(xi) += Matrix(gxhat.array().rowwise() * inv_std.array());
            return;
        }
        const double m = static_cast<double>(g.rows());
        const RowVector sum_g = gxhat.colwise().sum();
        const RowVector sum_gx = (gxhat.array() * xhat.array()).colwise().sum().matrix();
        Matrix gx = (gxhat * m).rowwise() - sum_g;
        gx -= Matrix(xhat.array().rowwise() * sum_gx.array());
        gx = gx.array().rowwise() * (inv_std.array() / m);
        tp.grad(xi) += gx;
    });
}

// Mean softmax cross-entropy over rows; returns a 1x1 Var.
inline Var cross_entropy(Var logits, const std::vector<int>& labels)
{
    Tape& t = *logits.tape;
    const Matrix& z = logits.value();
    Matrix prob(z.rows(), z.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double mx = z.row(i).maxCoeff();
        const RowVector e = (z.row(i).array() - mx).exp().matrix();
        const double s = e.sum();
        prob.row(i) = e / s;
        loss += -(z(i, labels[static_cast<std::size_t>(i)]) - mx - std::log(s));
    }
    const double n = static_cast<double>(z.rows());
    Matrix out(1, 1);
    out(0, 0) = loss / n;
    const int zi = logits.id;
    return t.record(std::move(out), {zi}, [zi, prob = std::move(prob), labels, n](Tape& tp, int self) {
        Matrix g = prob;
        for (std::size_t i = 0; i < labels.size(); ++i) g(static_cast<Eigen::Index>(i), labels[i]) -= 1.0;
        tp.grad(zi) += g * (tp.grad(self)(0, 0) / n);
    });
}

} // namespace nef::ad
