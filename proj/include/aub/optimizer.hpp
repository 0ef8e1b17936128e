#pragma once

#include <cstdint>
#include <vector>

#include "aub/param_store.hpp"

namespace aub {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Stochastic descent state bound to one ParameterStore layout. step() consumes
/// the accumulated gradients (they are zeroed on exit) and refuses to touch the
/// values if any gradient component is non-finite.
class Optimizer {
public:
    Optimizer(const OptimizerConfig& config, std::size_t param_count);

    void step(ParameterStore& params);

    std::uint64_t step_count() const { return step_count_; }
    const OptimizerConfig& config() const { return config_; }

private:
    OptimizerConfig config_;
    std::vector<double> m_;  // Adam first moment
    std::vector<double> v_;  // Adam second moment
    std::uint64_t step_count_ = 0;
};

}  // namespace aub
