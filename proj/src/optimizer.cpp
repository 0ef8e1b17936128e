#include "aub/optimizer.hpp"

#include <cmath>

namespace aub {

Optimizer::Optimizer(const OptimizerConfig& config, std::size_t param_count)
    : config_(config) {
    require(config.learning_rate > 0.0, "learning rate must be positive, got ",
            config.learning_rate);
    if (config_.kind == OptimizerKind::Adam) {
        m_.assign(param_count, 0.0);
        v_.assign(param_count, 0.0);
    }
}

void Optimizer::step(ParameterStore& params) {
    auto values = params.values();
    auto grads = params.grads();
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!std::isfinite(grads[i])) {
            fail("non-finite gradient at ", params.coordinate_name(i));
        }
    }
    step_count_ += 1;
    const double lr = config_.learning_rate;
    if (config_.kind == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * grads[i];
    } else {
        require(m_.size() == values.size(), "optimizer bound to a different parameter count");
        const double b1 = config_.beta1;
        const double b2 = config_.beta2;
        const double bias1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
        const double bias2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
        for (std::size_t i = 0; i < values.size(); ++i) {
            m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
            v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i] * grads[i];
            const double m_hat = m_[i] / bias1;
            const double v_hat = v_[i] / bias2;
            values[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
        }
    }
    params.zero_grads();
}

}  // namespace aub
