#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "aub/common.hpp"
#include "aub/matrix.hpp"
#include "aub/rng.hpp"

namespace aub {

/// Pointwise-evaluable density used by the quadrature oracles (1-D or 2-D).
class AnalyticDensity {
public:
    virtual ~AnalyticDensity() = default;
    virtual std::size_t dim() const = 0;
    /// log pdf; may return -inf outside the support.
    virtual double log_density(std::span<const double> x) const = 0;
    /// Axis-aligned box holding essentially all mass (mean +- nsigma scales).
    virtual void bounding_box(double nsigma, std::span<double> lo,
                              std::span<double> hi) const = 0;
};

class Gaussian1D final : public AnalyticDensity {
public:
    Gaussian1D(double mean, double sd);
    std::size_t dim() const override { return 1; }
    double log_density(std::span<const double> x) const override;
    void bounding_box(double nsigma, std::span<double> lo, std::span<double> hi) const override;
    double mean() const { return mean_; }
    double sd() const { return sd_; }
    double entropy() const;

private:
    double mean_, sd_;
};

class Uniform1D final : public AnalyticDensity {
public:
    Uniform1D(double lo, double hi);
    std::size_t dim() const override { return 1; }
    double log_density(std::span<const double> x) const override;
    void bounding_box(double nsigma, std::span<double> lo, std::span<double> hi) const override;
    double lo() const { return lo_; }
    double hi() const { return hi_; }
    double entropy() const;

private:
    double lo_, hi_;
};

/// Diagonal Gaussian in any dimension (the oracles use 1-D and 2-D).
class DiagonalGaussianAnalytic final : public AnalyticDensity {
public:
    DiagonalGaussianAnalytic(std::vector<double> mean, std::vector<double> sd);
    std::size_t dim() const override { return mean_.size(); }
    double log_density(std::span<const double> x) const override;
    void bounding_box(double nsigma, std::span<double> lo, std::span<double> hi) const override;
    double entropy() const;
    Matrix sample(std::size_t n, SeededRng& rng) const;

private:
    std::vector<double> mean_, sd_;
};

class AnalyticMixture final : public AnalyticDensity {
public:
    AnalyticMixture(std::vector<std::shared_ptr<const AnalyticDensity>> components,
                    std::vector<double> weights);
    std::size_t dim() const override;
    double log_density(std::span<const double> x) const override;
    void bounding_box(double nsigma, std::span<double> lo, std::span<double> hi) const override;

private:
    std::vector<std::shared_ptr<const AnalyticDensity>> components_;
    std::vector<double> weights_;
};

/// Image of a 1-D analytic density under z = a*x + b (closed form for
/// Gaussians and uniforms).
std::shared_ptr<const AnalyticDensity> affine_image_1d(
    const std::shared_ptr<const AnalyticDensity>& source, double a, double b);

struct QuadratureOptions {
    std::size_t points_per_dim = 4001;  // coarse grid; the result uses 2n-1
    double nsigma = 10.0;
    double refine_tol = 1e-6;  // max |coarse - refined| before "too coarse"
    std::optional<std::vector<double>> box_lo;
    std::optional<std::vector<double>> box_hi;
};

/// Trapezoid integral over a 1-D or 2-D box with an internal refinement check:
/// integrates on n and 2n-1 points per axis and fails when they disagree by
/// more than refine_tol. Returns the refined value.
double integrate_checked(const std::function<double(std::span<const double>)>& f,
                         std::span<const double> lo, std::span<const double> hi,
                         std::size_t points_per_dim, double refine_tol,
                         const char* what);

/// -int p log p  over the density's (or the option's) box.
double entropy_quadrature(const AnalyticDensity& p, const QuadratureOptions& opt = {});

/// -int p log q  where log_q is any pointwise log-density.
double cross_entropy_quadrature(const AnalyticDensity& p,
                                const std::function<double(std::span<const double>)>& log_q,
                                const QuadratureOptions& opt = {});

/// int p (log p - log q).
double kl_quadrature(const AnalyticDensity& p,
                     const std::function<double(std::span<const double>)>& log_q,
                     const QuadratureOptions& opt = {});

struct GjsdResult {
    double value = 0.0;         // entropy form on the refined grid
    double entropy_form = 0.0;  // H(mix) - sum_j w_j H(P_j)
    double kl_form = 0.0;       // sum_j w_j KL(P_j, mix)
};

/// Generalized Jensen-Shannon divergence of analytic densities by quadrature.
/// Both definitional forms are computed independently and must agree within
/// 1e-6, otherwise this fails.
GjsdResult gjsd_quadrature(std::span<const std::shared_ptr<const AnalyticDensity>> components,
                           std::span<const double> weights,
                           const QuadratureOptions& opt = {});

}  // namespace aub
