#pragma once

// Reference implementations written straight from the defining formulas.
// They share no code with the library beyond the tensor container.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "cmtf/forecast/forecaster.hpp"
#include "cmtf/tensor/graph.hpp"

namespace oracle {

using cmtf::tensor::Graph;
using cmtf::tensor::Tensor;
using cmtf::tensor::Var;

inline Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(shape);
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = u(rng);
    return t;
}

/// Like random_tensor but keeps every entry at least `gap` away from zero.
inline Tensor away_from_zero(std::vector<std::size_t> shape, std::mt19937_64& rng, double gap = 0.05) {
    Tensor t = random_tensor(shape, rng);
    for (std::size_t k = 0; k < t.size(); ++k)
        if (std::abs(t[k]) < gap) t[k] = t[k] < 0 ? t[k] - gap : t[k] + gap;
    return t;
}

using Builder = std::function<Var(Graph&, const std::vector<Var>&)>;

inline double eval_loss(const Builder& f, const std::vector<Tensor>& inputs) {
    Graph g;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t));
    return f(g, leaves).value()[0];
}

/// Worst relative error ||analytic - numeric|| / (||analytic|| + ||numeric||)
/// over the inputs, numeric gradients by central differences.
inline double grad_check(const Builder& f, std::vector<Tensor> inputs, double h = 1e-6) {
    Graph g;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t));
    g.backward(f(g, leaves));
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor analytic = leaves[i].grad();
        double diff = 0.0, na = 0.0, nn = 0.0;
        for (std::size_t k = 0; k < inputs[i].size(); ++k) {
            const double orig = inputs[i][k];
            inputs[i][k] = orig + h;
            const double up = eval_loss(f, inputs);
            inputs[i][k] = orig - h;
            const double down = eval_loss(f, inputs);
            inputs[i][k] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic.empty() ? 0.0 : analytic[k];
            diff += (a - numeric) * (a - numeric);
            na += a * a;
            nn += numeric * numeric;
        }
        const double denom = std::sqrt(na) + std::sqrt(nn);
        if (denom > 1e-12) worst = std::max(worst, std::sqrt(diff) / denom);
    }
    return worst;
}

/// Collapses a matrix-valued op to a scalar with fixed random weights so the
/// whole Jacobian is exercised.
inline Var weighted_sum(Graph& g, Var v, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return cmtf::tensor::sum(cmtf::tensor::mul(v, g.constant(random_tensor(v.value().shape(), rng))));
}

/// Finite-difference error of every differentiable op on one random instance.
inline std::vector<std::pair<const char*, double>> op_suite(std::uint64_t seed, double h = 1e-6) {
    namespace t = cmtf::tensor;
    std::mt19937_64 rng(seed);
    const auto m = [&](std::size_t r, std::size_t c) { return random_tensor({r, c}, rng); };
    const auto vec = [&](std::size_t n) { return Tensor::vector(m(1, n).values()); };
    std::vector<std::pair<const char*, double>> out;
    const auto run = [&](const char* name, const Builder& f, std::vector<Tensor> in) {
        out.emplace_back(name, grad_check(f, std::move(in), h));
    };
    run("matmul", [&](Graph& g, const std::vector<Var>& v) { return weighted_sum(g, t::matmul(v[0], v[1]), seed); },
        {m(3, 4), m(4, 2)});
    run("transpose", [&](Graph& g, const std::vector<Var>& v) { return weighted_sum(g, t::transpose(v[0]), seed); },
        {m(3, 5)});
    run("add", [&](Graph& g, const std::vector<Var>& v) { return weighted_sum(g, t::add(v[0], v[1]), seed); },
        {m(2, 3), m(2, 3)});
    run("add_row", [&](Graph& g, const std::vector<Var>& v) { return weighted_sum(g, t::add_row(v[0], v[1]), seed); },
        {m(4, 3), vec(3)});
    run("mul", [&](Graph& g, const std::vector<Var>& v) { return weighted_sum(g, t::mul(v[0], v[1]), seed); },
        {m(3, 3), m(3, 3)});
    run("scale", [&](Graph& g, const std::vector<Var>& v) { return weighted_sum(g, t::scale(v[0], -1.7), seed); },
        {m(2, 4)});
    run("relu", [&](Graph& g, const std::vector<Var>& v) { return weighted_sum(g, t::relu(v[0]), seed); },
        {away_from_zero({3, 4}, rng)});
    run("sigmoid", [&](Graph& g, const std::vector<Var>& v) { return weighted_sum(g, t::sigmoid(v[0]), seed); },
        {m(3, 4)});
    run("softmax", [&](Graph& g, const std::vector<Var>& v) { return weighted_sum(g, t::softmax_rows(v[0]), seed); },
        {m(3, 5)});
    run("layer_norm",
        [&](Graph& g, const std::vector<Var>& v) { return weighted_sum(g, t::layer_norm(v[0], v[1], v[2], 1e-5), seed); },
        {m(4, 6), vec(6), vec(6)});
    run("concat_cols",
        [&](Graph& g, const std::vector<Var>& v) {
            const std::vector<Var> parts{v[0], v[1]};
            return weighted_sum(g, t::concat_cols(parts), seed);
        },
        {m(3, 2), m(3, 4)});
    run("concat_rows",
        [&](Graph& g, const std::vector<Var>& v) {
            const std::vector<Var> parts{v[0], v[1]};
            return weighted_sum(g, t::concat_rows(parts), seed);
        },
        {m(2, 3), m(4, 3)});
    run("slice", [&](Graph& g, const std::vector<Var>& v) { return weighted_sum(g, t::slice(v[0], 1, 2, 1, 3), seed); },
        {m(4, 5)});
    run("sum", [&](Graph& g, const std::vector<Var>& v) { return weighted_sum(g, t::sum(v[0]), seed); }, {m(3, 2)});
    run("mean", [&](Graph&, const std::vector<Var>& v) { return t::mean(t::mul(v[0], v[0])); }, {m(3, 3)});
    Tensor targets({2, 3});
    for (std::size_t k = 0; k < targets.size(); ++k) targets[k] = static_cast<double>(rng() % 2);
    run("bce_with_logits", [&](Graph& g, const std::vector<Var>& v) { return t::bce_with_logits(v[0], g.constant(targets)); },
        {m(2, 3)});
    run("mse", [&](Graph&, const std::vector<Var>& v) { return t::mse(v[0], v[1]); }, {m(2, 3), m(2, 3)});
    return out;
}

/// Gradient check of a full transformer forward pass plus loss on random data.
inline double transformer_grad_check(const cmtf::forecast::TransformerConfig& cfg, std::size_t input_dim,
                                     std::size_t outputs, std::size_t batch, std::uint64_t seed) {
    namespace fc = cmtf::forecast;
    auto params = fc::init_params(cfg, input_dim, outputs);
    std::mt19937_64 rng(seed);
    // Perturb every parameter so gains/biases are not at their init values.
    for (auto& t : params.tensors)
        for (std::size_t k = 0; k < t.size(); ++k) t[k] += 0.1 * std::normal_distribution<double>(0, 1)(rng);
    const auto w = static_cast<std::size_t>(cfg.lookback);
    const Tensor x = random_tensor({batch * w, input_dim}, rng);
    Tensor y({batch, outputs});
    for (std::size_t k = 0; k < y.size(); ++k) {
        y[k] = cfg.mode == fc::TaskMode::Classification ? static_cast<double>(rng() % 2) : random_tensor({1}, rng)[0];
    }
    const Builder f = [&](Graph& g, const std::vector<Var>& p) {
        const auto out = fc::forward(g, p, cfg, x, batch).output;
        return cfg.mode == fc::TaskMode::Classification ? cmtf::tensor::bce_with_logits(out, g.constant(y))
                                                        : cmtf::tensor::mse(out, g.constant(y));
    };
    return grad_check(f, params.tensors, 1e-5);
}

/// Linearly weighted moving average in the index form
/// sum_{a=1}^{b} a * x_{t-(b-a)} / sum_{a=1}^{b} a, with b shrunk to t+1 while
/// the prefix is shorter than the window.
inline std::vector<double> wma(const std::vector<double>& x, int b) {
    std::vector<double> out(x.size());
    for (std::size_t t = 0; t < x.size(); ++t) {
        const long bb = std::min<long>(b, static_cast<long>(t) + 1);
        long double num = 0, den = 0;
        for (long a = 1; a <= bb; ++a) {
            num += static_cast<long double>(a) * x[t - static_cast<std::size_t>(bb - a)];
            den += a;
        }
        out[t] = static_cast<double>(num / den);
    }
    return out;
}

/// Least squares with intercept via column-pivoted QR.
inline Eigen::VectorXd ols_with_intercept(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    Eigen::MatrixXd a(x.rows(), x.cols() + 1);
    a << x, Eigen::VectorXd::Ones(x.rows());
    return a.colPivHouseholderQr().solve(y);
}

inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double n = static_cast<double>(a.size());
    const double ma = a.sum() / n, mb = b.sum() / n;
    double sab = 0, saa = 0, sbb = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        sab += (a(i) - ma) * (b(i) - mb);
        saa += (a(i) - ma) * (a(i) - ma);
        sbb += (b(i) - mb) * (b(i) - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace oracle
