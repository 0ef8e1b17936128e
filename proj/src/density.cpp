#include "aub/density.hpp"

#include <cmath>

#include "aub/numeric.hpp"

namespace aub {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double floored_log_var(double lv) { return lv < kLogVarFloor ? kLogVarFloor : lv; }
}  // namespace

// ---------------------------------------------------------------------------
// FixedStandardNormal

FixedStandardNormal::FixedStandardNormal(std::size_t dim) : dim_(dim) {
    require(dim > 0, "density needs a positive dimension");
}

void FixedStandardNormal::log_prob(const Matrix& z, std::vector<double>& out) const {
    require(z.cols() == dim_, "density dim mismatch: ", z.cols(), " vs ", dim_);
    out.assign(z.rows(), 0.0);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        double sq = 0.0;
        for (double v : z.row(r)) sq += v * v;
        out[r] = -0.5 * (sq + static_cast<double>(dim_) * kLog2Pi);
    }
}

Matrix FixedStandardNormal::sample(std::size_t n, SeededRng& rng) const {
    require(n >= 1, "sample count must be at least 1");
    Matrix out(n, dim_);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < dim_; ++c) out(r, c) = rng.normal();
    }
    return out;
}

void FixedStandardNormal::backward(const Matrix& z, const std::vector<double>& upstream,
                                   Matrix& grad_z) {
    require(z.rows() == upstream.size(), "upstream length mismatch");
    grad_z.resize(z.rows(), dim_);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        for (std::size_t c = 0; c < dim_; ++c) grad_z(r, c) = -upstream[r] * z(r, c);
    }
}

nlohmann::json FixedStandardNormal::spec() const {
    return {{"type", "standard_normal"}, {"dim", dim_}};
}

// ---------------------------------------------------------------------------
// DiagonalGaussian

DiagonalGaussian::DiagonalGaussian(std::size_t dim) : dim_(dim) {
    require(dim > 0, "density needs a positive dimension");
    mean_off_ = store_.add_segment("mean", dim);
    log_var_off_ = store_.add_segment("log_var", dim);
}

DiagonalGaussian::DiagonalGaussian(std::vector<double> mean, std::vector<double> log_var)
    : DiagonalGaussian(mean.size()) {
    require(mean.size() == log_var.size(), "mean/log_var length mismatch");
    std::copy(mean.begin(), mean.end(), store_.values(mean_off_, dim_).begin());
    std::copy(log_var.begin(), log_var.end(), store_.values(log_var_off_, dim_).begin());
}

void DiagonalGaussian::log_prob(const Matrix& z, std::vector<double>& out) const {
    require(z.cols() == dim_, "density dim mismatch: ", z.cols(), " vs ", dim_);
    auto mu = store_.values(mean_off_, dim_);
    auto lv = store_.values(log_var_off_, dim_);
    out.assign(z.rows(), 0.0);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dim_; ++c) {
            const double l = floored_log_var(lv[c]);
            const double d = z(r, c) - mu[c];
            acc += d * d * std::exp(-l) + l + kLog2Pi;
        }
        out[r] = -0.5 * acc;
    }
}

Matrix DiagonalGaussian::sample(std::size_t n, SeededRng& rng) const {
    require(n >= 1, "sample count must be at least 1");
    auto mu = store_.values(mean_off_, dim_);
    auto lv = store_.values(log_var_off_, dim_);
    Matrix out(n, dim_);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < dim_; ++c) {
            out(r, c) = mu[c] + std::exp(0.5 * floored_log_var(lv[c])) * rng.normal();
        }
    }
    return out;
}

void DiagonalGaussian::backward(const Matrix& z, const std::vector<double>& upstream,
                                Matrix& grad_z) {
    require(z.rows() == upstream.size(), "upstream length mismatch");
    auto mu = store_.values(mean_off_, dim_);
    auto lv = store_.values(log_var_off_, dim_);
    auto d_mu = store_.grads(mean_off_, dim_);
    auto d_lv = store_.grads(log_var_off_, dim_);
    grad_z.resize(z.rows(), dim_);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        const double u = upstream[r];
        for (std::size_t c = 0; c < dim_; ++c) {
            const double l = floored_log_var(lv[c]);
            const double inv_v = std::exp(-l);
            const double d = z(r, c) - mu[c];
            d_mu[c] += u * d * inv_v;
            if (lv[c] >= kLogVarFloor) {
                d_lv[c] += u * 0.5 * (d * d * inv_v - 1.0);
            }
            grad_z(r, c) = -u * d * inv_v;
        }
    }
}

double DiagonalGaussian::entropy() const {
    auto lv = store_.values(log_var_off_, dim_);
    double h = 0.5 * static_cast<double>(dim_) * (kLog2Pi + 1.0);
    for (double l : lv) h += 0.5 * floored_log_var(l);
    return h;
}

nlohmann::json DiagonalGaussian::spec() const {
    return {{"type", "diagonal_gaussian"}, {"dim", dim_}};
}

// ---------------------------------------------------------------------------
// GaussianMixture

GaussianMixture::GaussianMixture(std::size_t dim, std::size_t n_components, SeededRng& rng)
    : dim_(dim), k_(n_components) {
    require(dim > 0, "density needs a positive dimension");
    require(n_components >= 1, "mixture needs at least one component");
    means_off_ = store_.add_segment("means", k_ * dim_);
    log_vars_off_ = store_.add_segment("log_vars", k_ * dim_);
    logits_off_ = store_.add_segment("logits", k_);
    auto means = store_.values(means_off_, k_ * dim_);
    for (double& m : means) m = rng.normal();
}

std::vector<double> GaussianMixture::mixture_weights() const {
    auto logits = store_.values(logits_off_, k_);
    const double lse = log_sum_exp(logits);
    std::vector<double> w(k_);
    for (std::size_t k = 0; k < k_; ++k) w[k] = std::exp(logits[k] - lse);
    return w;
}

void GaussianMixture::set_component(std::size_t k, std::span<const double> mean,
                                    std::span<const double> log_var) {
    require(k < k_, "component index out of range");
    require(mean.size() == dim_ && log_var.size() == dim_, "component shape mismatch");
    auto m = store_.values(means_off_ + k * dim_, dim_);
    auto lv = store_.values(log_vars_off_ + k * dim_, dim_);
    std::copy(mean.begin(), mean.end(), m.begin());
    std::copy(log_var.begin(), log_var.end(), lv.begin());
}

void GaussianMixture::component_log_probs(std::span<const double> row,
                                          std::span<double> out) const {
    auto means = store_.values(means_off_, k_ * dim_);
    auto lvs = store_.values(log_vars_off_, k_ * dim_);
    for (std::size_t k = 0; k < k_; ++k) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dim_; ++c) {
            const double l = floored_log_var(lvs[k * dim_ + c]);
            const double d = row[c] - means[k * dim_ + c];
            acc += d * d * std::exp(-l) + l + kLog2Pi;
        }
        out[k] = -0.5 * acc;
    }
}

void GaussianMixture::log_prob(const Matrix& z, std::vector<double>& out) const {
    require(z.cols() == dim_, "density dim mismatch: ", z.cols(), " vs ", dim_);
    auto logits = store_.values(logits_off_, k_);
    const double lse_logits = log_sum_exp(logits);
    std::vector<double> terms(k_);
    out.assign(z.rows(), 0.0);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        component_log_probs(z.row(r), terms);
        for (std::size_t k = 0; k < k_; ++k) terms[k] += logits[k] - lse_logits;
        out[r] = log_sum_exp(terms);
    }
}

Matrix GaussianMixture::sample(std::size_t n, SeededRng& rng) const {
    require(n >= 1, "sample count must be at least 1");
    const auto w = mixture_weights();
    auto means = store_.values(means_off_, k_ * dim_);
    auto lvs = store_.values(log_vars_off_, k_ * dim_);
    Matrix out(n, dim_);
    for (std::size_t r = 0; r < n; ++r) {
        const double u = rng.uniform();
        std::size_t k = 0;
        double acc = 0.0;
        for (; k + 1 < k_; ++k) {
            acc += w[k];
            if (u < acc) break;
        }
        for (std::size_t c = 0; c < dim_; ++c) {
            const double sd = std::exp(0.5 * floored_log_var(lvs[k * dim_ + c]));
            out(r, c) = means[k * dim_ + c] + sd * rng.normal();
        }
    }
    return out;
}

void GaussianMixture::backward(const Matrix& z, const std::vector<double>& upstream,
                               Matrix& grad_z) {
    require(z.rows() == upstream.size(), "upstream length mismatch");
    auto logits = store_.values(logits_off_, k_);
    auto means = store_.values(means_off_, k_ * dim_);
    auto lvs = store_.values(log_vars_off_, k_ * dim_);
    auto d_logits = store_.grads(logits_off_, k_);
    auto d_means = store_.grads(means_off_, k_ * dim_);
    auto d_lvs = store_.grads(log_vars_off_, k_ * dim_);

    const double lse_logits = log_sum_exp(logits);
    std::vector<double> soft(k_);
    for (std::size_t k = 0; k < k_; ++k) soft[k] = std::exp(logits[k] - lse_logits);

    std::vector<double> terms(k_);
    grad_z.resize(z.rows(), dim_);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        component_log_probs(z.row(r), terms);
        for (std::size_t k = 0; k < k_; ++k) terms[k] += logits[k] - lse_logits;
        const double lp = log_sum_exp(terms);
        const double u = upstream[r];
        for (std::size_t k = 0; k < k_; ++k) {
            const double resp = std::exp(terms[k] - lp);  // posterior over components
            d_logits[k] += u * (resp - soft[k]);
            for (std::size_t c = 0; c < dim_; ++c) {
                const double l = floored_log_var(lvs[k * dim_ + c]);
                const double inv_v = std::exp(-l);
                const double d = z(r, c) - means[k * dim_ + c];
                d_means[k * dim_ + c] += u * resp * d * inv_v;
                if (lvs[k * dim_ + c] >= kLogVarFloor) {
                    d_lvs[k * dim_ + c] += u * resp * 0.5 * (d * d * inv_v - 1.0);
                }
                grad_z(r, c) -= u * resp * d * inv_v;
            }
        }
    }
}

nlohmann::json GaussianMixture::spec() const {
    return {{"type", "gaussian_mixture"}, {"dim", dim_}, {"components", k_}};
}

// ---------------------------------------------------------------------------
// FlowDensity

FlowDensity::FlowDensity(std::shared_ptr<FlowSequence> flow) : flow_(std::move(flow)) {
    require(flow_ != nullptr, "flow density needs a flow");
}

void FlowDensity::log_prob(const Matrix& z, std::vector<double>& out) const {
    Matrix y;
    std::vector<double> logdet;
    flow_->forward(z, y, logdet);
    out.assign(z.rows(), 0.0);
    const double d = static_cast<double>(dim());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        double sq = 0.0;
        for (double v : y.row(r)) sq += v * v;
        out[r] = -0.5 * (sq + d * kLog2Pi) + logdet[r];
    }
}

Matrix FlowDensity::sample(std::size_t n, SeededRng& rng) const {
    require(n >= 1, "sample count must be at least 1");
    Matrix eps(n, dim());
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < dim(); ++c) eps(r, c) = rng.normal();
    }
    Matrix out;
    flow_->inverse(eps, out);
    return out;
}

void FlowDensity::backward(const Matrix& z, const std::vector<double>& upstream,
                           Matrix& grad_z) {
    require(z.rows() == upstream.size(), "upstream length mismatch");
    Matrix y;
    std::vector<double> logdet;
    auto cache = flow_->forward_cached(z, y, logdet);
    Matrix grad_y(z.rows(), dim());
    std::vector<double> grad_logdet(z.rows());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        grad_logdet[r] = upstream[r];
        for (std::size_t c = 0; c < dim(); ++c) grad_y(r, c) = -upstream[r] * y(r, c);
    }
    flow_->backward(*cache, grad_y, grad_logdet, grad_z);
}

nlohmann::json FlowDensity::spec() const {
    return {{"type", "flow"}, {"dim", dim()}, {"flow", flow_->spec()}};
}

// ---------------------------------------------------------------------------

std::shared_ptr<Density> density_from_spec(const nlohmann::json& spec) {
    const std::string type = spec.at("type").get<std::string>();
    const std::size_t dim = spec.at("dim").get<std::size_t>();
    if (type == "standard_normal") return std::make_shared<FixedStandardNormal>(dim);
    if (type == "diagonal_gaussian") return std::make_shared<DiagonalGaussian>(dim);
    if (type == "gaussian_mixture") {
        SeededRng rng(0);
        return std::make_shared<GaussianMixture>(dim, spec.at("components").get<std::size_t>(), rng);
    }
    if (type == "flow") {
        auto flow = flow_from_spec(spec.at("flow"));
        auto seq = std::dynamic_pointer_cast<FlowSequence>(flow);
        require(seq != nullptr, "flow density requires a coupling stack");
        return std::make_shared<FlowDensity>(std::move(seq));
    }
    fail("unknown density spec type '", type, "'");
}

}  // namespace aub
