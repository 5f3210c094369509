#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "cmtf/tensor/tensor.hpp"

namespace cmtf::tensor {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// First/second moment accumulators for a fixed list of parameters.
class AdamState {
public:
    explicit AdamState(AdamConfig cfg = {});

    const AdamConfig& config() const noexcept { return cfg_; }
    std::int64_t step() const noexcept { return step_; }
    const std::vector<Tensor>& first_moment() const noexcept { return m_; }
    const std::vector<Tensor>& second_moment() const noexcept { return v_; }

private:
    friend void adam_step(std::span<Tensor>, std::span<const Tensor>, AdamState&);

    AdamConfig cfg_;
    std::int64_t step_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

/// One bias-corrected Adam update applied in place. Accumulators are sized
/// from `params` on the first call; later calls must pass the same layout.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state);

/// Xavier/Glorot uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

}  // namespace cmtf::tensor
