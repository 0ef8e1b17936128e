#pragma once

#include <memory>
#include <vector>

#include <json.hpp>

#include "aub/flow.hpp"
#include "aub/matrix.hpp"
#include "aub/param_store.hpp"
#include "aub/rng.hpp"

namespace aub {

/// Variational density model: exact log-probability, exact sampling, analytic
/// gradients of log-probability with respect to parameters and inputs.
class Density {
public:
    virtual ~Density() = default;

    virtual std::size_t dim() const = 0;

    virtual void log_prob(const Matrix& z, std::vector<double>& out) const = 0;

    std::vector<double> log_prob(const Matrix& z) const {
        std::vector<double> out;
        log_prob(z, out);
        return out;
    }

    virtual Matrix sample(std::size_t n, SeededRng& rng) const = 0;

    /// Accumulates d(sum_i upstream_i * log_prob_i)/dtheta into the store and
    /// writes the same gradient with respect to z into grad_z. Parameter-free
    /// densities accumulate nothing but still report grad_z.
    virtual void backward(const Matrix& z, const std::vector<double>& upstream,
                          Matrix& grad_z) = 0;

    virtual ParameterStore& params() = 0;
    virtual const ParameterStore& params() const = 0;
    std::size_t param_count() const { return params().size(); }

    virtual nlohmann::json spec() const = 0;
};

class FixedStandardNormal final : public Density {
public:
    explicit FixedStandardNormal(std::size_t dim);

    std::size_t dim() const override { return dim_; }
    using Density::log_prob;
    void log_prob(const Matrix& z, std::vector<double>& out) const override;
    Matrix sample(std::size_t n, SeededRng& rng) const override;
    void backward(const Matrix& z, const std::vector<double>& upstream,
                  Matrix& grad_z) override;
    ParameterStore& params() override { return store_; }
    const ParameterStore& params() const override { return store_; }
    nlohmann::json spec() const override;

private:
    std::size_t dim_;
    ParameterStore store_;  // intentionally empty
};

/// Gaussian with learnable per-coordinate mean and log-variance. The variance
/// is floored at 1e-6 to keep the density from collapsing onto points.
class DiagonalGaussian final : public Density {
public:
    explicit DiagonalGaussian(std::size_t dim);
    DiagonalGaussian(std::vector<double> mean, std::vector<double> log_var);

    std::size_t dim() const override { return dim_; }
    using Density::log_prob;
    void log_prob(const Matrix& z, std::vector<double>& out) const override;
    Matrix sample(std::size_t n, SeededRng& rng) const override;
    void backward(const Matrix& z, const std::vector<double>& upstream,
                  Matrix& grad_z) override;
    ParameterStore& params() override { return store_; }
    const ParameterStore& params() const override { return store_; }
    nlohmann::json spec() const override;

    std::span<const double> mean() const { return store_.values(mean_off_, dim_); }
    std::span<const double> log_var() const { return store_.values(log_var_off_, dim_); }
    /// Closed-form differential entropy (uses the floored variances).
    double entropy() const;

private:
    std::size_t dim_;
    ParameterStore store_;
    std::size_t mean_off_ = 0;
    std::size_t log_var_off_ = 0;
};

/// Mixture of diagonal Gaussians; weights are a softmax over free logits and
/// the mixture log-probability goes through log_sum_exp.
class GaussianMixture final : public Density {
public:
    /// Means drawn from N(0, I), unit variances, uniform logits.
    GaussianMixture(std::size_t dim, std::size_t n_components, SeededRng& rng);

    std::size_t dim() const override { return dim_; }
    std::size_t n_components() const { return k_; }
    using Density::log_prob;
    void log_prob(const Matrix& z, std::vector<double>& out) const override;
    Matrix sample(std::size_t n, SeededRng& rng) const override;
    void backward(const Matrix& z, const std::vector<double>& upstream,
                  Matrix& grad_z) override;
    ParameterStore& params() override { return store_; }
    const ParameterStore& params() const override { return store_; }
    nlohmann::json spec() const override;

    std::vector<double> mixture_weights() const;
    void set_component(std::size_t k, std::span<const double> mean,
                       std::span<const double> log_var);

private:
    void component_log_probs(std::span<const double> row, std::span<double> out) const;

    std::size_t dim_;
    std::size_t k_;
    ParameterStore store_;
    std::size_t means_off_ = 0;     // k x dim
    std::size_t log_vars_off_ = 0;  // k x dim
    std::size_t logits_off_ = 0;    // k
};

/// Normalized density defined by an invertible map to a standard normal base:
/// log q(z) = log N(T(z)) + log|J_T(z)|. Sampling inverts the map.
class FlowDensity final : public Density {
public:
    explicit FlowDensity(std::shared_ptr<FlowSequence> flow);

    std::size_t dim() const override { return flow_->dim(); }
    using Density::log_prob;
    void log_prob(const Matrix& z, std::vector<double>& out) const override;
    Matrix sample(std::size_t n, SeededRng& rng) const override;
    void backward(const Matrix& z, const std::vector<double>& upstream,
                  Matrix& grad_z) override;
    ParameterStore& params() override { return flow_->params(); }
    const ParameterStore& params() const override { return flow_->params(); }
    nlohmann::json spec() const override;

    const FlowSequence& flow() const { return *flow_; }

private:
    std::shared_ptr<FlowSequence> flow_;
};

std::shared_ptr<Density> density_from_spec(const nlohmann::json& spec);

constexpr double kLogVarFloor = -13.815510557964274;  // ln(1e-6)

}  // namespace aub
