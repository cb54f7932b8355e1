#include "kgd/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "kgd/error.hpp"

namespace kgd {

std::string_view to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::GradientDescent: return "gd";
        case OptimizerKind::Adam: return "adam";
        case OptimizerKind::AdamW: return "adamw";
    }
    return "adam";
}

OptimizerKind parse_optimizer_kind(std::string_view text) {
    if (text == "gd" || text == "sgd") return OptimizerKind::GradientDescent;
    if (text == "adam") return OptimizerKind::Adam;
    if (text == "adamw") return OptimizerKind::AdamW;
    throw Error(ErrorCode::InvalidConfig, "unknown optimizer '" + std::string(text) + "'");
}

double Optimizer::learning_rate() const {
    if (!config_.cosine_schedule || config_.total_steps == 0) return config_.lr;
    const double progress = std::min(1.0, static_cast<double>(t_) / static_cast<double>(config_.total_steps));
    return config_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void Optimizer::step(std::span<Matrix* const> params, std::span<const Matrix* const> grads) {
    if (params.size() != grads.size()) throw Error(ErrorCode::DimMismatch, "optimizer: params/grads count differ");
    if (m_.empty() && config_.kind != OptimizerKind::GradientDescent) {
        for (const Matrix* p : params) {
            m_.emplace_back(p->rows(), p->cols());
            v_.emplace_back(p->rows(), p->cols());
        }
    }
    const double lr = learning_rate();
    ++t_;

    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& w = params[k]->data();
        const auto& g = grads[k]->data();
        if (w.size() != g.size()) throw Error(ErrorCode::DimMismatch, "optimizer: parameter/gradient shape differ");

        switch (config_.kind) {
            case OptimizerKind::GradientDescent:
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (g[i] + config_.weight_decay * w[i]);
                break;
            case OptimizerKind::Adam:
            case OptimizerKind::AdamW: {
                auto& m = m_[k].data();
                auto& v = v_[k].data();
                const bool decoupled = config_.kind == OptimizerKind::AdamW;
                const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
                const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
                for (std::size_t i = 0; i < w.size(); ++i) {
                    const double gi = decoupled ? g[i] : g[i] + config_.weight_decay * w[i];
                    m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
                    v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
                    const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
                    if (decoupled) w[i] -= lr * config_.weight_decay * w[i];
                    w[i] -= lr * update;
                }
                break;
            }
        }
    }
}

}  // namespace kgd
