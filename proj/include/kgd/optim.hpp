#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "kgd/matrix.hpp"

namespace kgd {

enum class OptimizerKind {
    GradientDescent,
    Adam,
    AdamW,  // Adam with decoupled weight decay
};

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer_kind(std::string_view text);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    /// lr(t) = lr0 * (1 + cos(pi * t / total_steps)) / 2, no warm-up.
    bool cosine_schedule = false;
    std::size_t total_steps = 0;
};

/// Stateful first-order optimizer over a fixed list of parameter matrices.
/// The moment buffers are sized on the first step; later calls must pass
/// parameters of the same shapes in the same order.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config) : config_(config) {}

    void step(std::span<Matrix* const> params, std::span<const Matrix* const> grads);

    double learning_rate() const;
    std::size_t steps_taken() const { return t_; }
    const OptimizerConfig& config() const { return config_; }

private:
    OptimizerConfig config_;
    std::size_t t_ = 0;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
};

}  // namespace kgd
