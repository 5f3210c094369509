#include "cmtf/tensor/adam.hpp"

#include <cmath>

#include "cmtf/error.hpp"

namespace cmtf::tensor {

AdamState::AdamState(AdamConfig cfg) : cfg_(cfg) {
    if (!(cfg_.learning_rate > 0.0)) throw ConfigError("adam: learning rate must be positive");
    if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0) {
        throw ConfigError("adam: betas must lie in [0, 1)");
    }
    if (cfg_.epsilon < 0.0) throw ConfigError("adam: epsilon must be non-negative");
}

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state) {
    if (params.size() != grads.size()) {
        throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                             std::to_string(grads.size()) + " gradients");
    }
    if (state.m_.empty()) {
        for (const auto& p : params) {
            state.m_.emplace_back(p.shape(), 0.0);
            state.v_.emplace_back(p.shape(), 0.0);
        }
    }
    if (state.m_.size() != params.size()) throw DimensionError("adam_step: parameter count changed between steps");
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (!params[k].same_shape(grads[k]) || !params[k].same_shape(state.m_[k])) {
            throw DimensionError("adam_step: parameter " + std::to_string(k) + " shape " + params[k].shape_string() +
                                 " vs gradient " + grads[k].shape_string());
        }
    }

    const auto& c = state.cfg_;
    ++state.step_;
    const double t = static_cast<double>(state.step_);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);

    for (std::size_t k = 0; k < params.size(); ++k) {
        auto p = params[k].data();
        auto g = grads[k].data();
        auto m = state.m_[k].data();
        auto v = state.v_[k].data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double denom = std::sqrt(v[i] / bc2) + c.epsilon;
            if (denom > 0.0) p[i] -= c.learning_rate * mhat / denom;
        }
        require_finite(params[k], "adam_step");
    }
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    Tensor w = Tensor::zeros(fan_in, fan_out);
    for (auto& x : w.data()) x = dist(rng);
    return w;
}

}  // namespace cmtf::tensor
