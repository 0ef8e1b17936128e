#include "aub/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "aub/numeric.hpp"

namespace aub {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}  // namespace

// ---------------------------------------------------------------------------
// analytic densities

Gaussian1D::Gaussian1D(double mean, double sd) : mean_(mean), sd_(sd) {
    require(sd > 0.0, "Gaussian sd must be positive");
}

double Gaussian1D::log_density(std::span<const double> x) const {
    const double u = (x[0] - mean_) / sd_;
    return -0.5 * (u * u + kLog2Pi) - std::log(sd_);
}

void Gaussian1D::bounding_box(double nsigma, std::span<double> lo, std::span<double> hi) const {
    lo[0] = mean_ - nsigma * sd_;
    hi[0] = mean_ + nsigma * sd_;
}

double Gaussian1D::entropy() const { return 0.5 * (kLog2Pi + 1.0) + std::log(sd_); }

Uniform1D::Uniform1D(double lo, double hi) : lo_(lo), hi_(hi) {
    require(hi > lo, "uniform support must be non-degenerate");
}

double Uniform1D::log_density(std::span<const double> x) const {
    if (x[0] < lo_ || x[0] > hi_) return kNegInf;
    return -std::log(hi_ - lo_);
}

void Uniform1D::bounding_box(double nsigma, std::span<double> lo, std::span<double> hi) const {
    (void)nsigma;
    lo[0] = lo_;
    hi[0] = hi_;
}

double Uniform1D::entropy() const { return std::log(hi_ - lo_); }

DiagonalGaussianAnalytic::DiagonalGaussianAnalytic(std::vector<double> mean,
                                                   std::vector<double> sd)
    : mean_(std::move(mean)), sd_(std::move(sd)) {
    require(mean_.size() == sd_.size() && !mean_.empty(), "mean/sd shape mismatch");
    for (double s : sd_) require(s > 0.0, "Gaussian sd must be positive");
}

double DiagonalGaussianAnalytic::log_density(std::span<const double> x) const {
    double acc = 0.0;
    for (std::size_t c = 0; c < mean_.size(); ++c) {
        const double u = (x[c] - mean_[c]) / sd_[c];
        acc += u * u + kLog2Pi + 2.0 * std::log(sd_[c]);
    }
    return -0.5 * acc;
}

void DiagonalGaussianAnalytic::bounding_box(double nsigma, std::span<double> lo,
                                            std::span<double> hi) const {
    for (std::size_t c = 0; c < mean_.size(); ++c) {
        lo[c] = mean_[c] - nsigma * sd_[c];
        hi[c] = mean_[c] + nsigma * sd_[c];
    }
}

double DiagonalGaussianAnalytic::entropy() const {
    double h = 0.5 * static_cast<double>(mean_.size()) * (kLog2Pi + 1.0);
    for (double s : sd_) h += std::log(s);
    return h;
}

Matrix DiagonalGaussianAnalytic::sample(std::size_t n, SeededRng& rng) const {
    Matrix out(n, mean_.size());
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < mean_.size(); ++c) {
            out(r, c) = mean_[c] + sd_[c] * rng.normal();
        }
    }
    return out;
}

AnalyticMixture::AnalyticMixture(std::vector<std::shared_ptr<const AnalyticDensity>> components,
                                 std::vector<double> weights)
    : components_(std::move(components)), weights_(std::move(weights)) {
    require(!components_.empty() && components_.size() == weights_.size(),
            "mixture components/weights mismatch");
    double sum = 0.0;
    for (double w : weights_) {
        require(w > 0.0, "mixture weights must be positive");
        sum += w;
    }
    require(std::abs(sum - 1.0) < 1e-9, "mixture weights must sum to 1, got ", sum);
    for (const auto& c : components_) {
        require(c->dim() == components_[0]->dim(), "mixture component dims differ");
    }
}

std::size_t AnalyticMixture::dim() const { return components_[0]->dim(); }

double AnalyticMixture::log_density(std::span<const double> x) const {
    // log sum_j w_j p_j(x), tolerating -inf component logs (outside support)
    double best = kNegInf;
    std::vector<double> terms(components_.size());
    for (std::size_t j = 0; j < components_.size(); ++j) {
        const double lp = components_[j]->log_density(x);
        terms[j] = lp == kNegInf ? kNegInf : lp + std::log(weights_[j]);
        best = std::max(best, terms[j]);
    }
    if (best == kNegInf) return kNegInf;
    double acc = 0.0;
    for (double t : terms) {
        if (t != kNegInf) acc += std::exp(t - best);
    }
    return best + std::log(acc);
}

void AnalyticMixture::bounding_box(double nsigma, std::span<double> lo,
                                   std::span<double> hi) const {
    std::vector<double> clo(dim()), chi(dim());
    for (std::size_t c = 0; c < dim(); ++c) {
        lo[c] = std::numeric_limits<double>::infinity();
        hi[c] = -std::numeric_limits<double>::infinity();
    }
    for (const auto& comp : components_) {
        comp->bounding_box(nsigma, clo, chi);
        for (std::size_t c = 0; c < dim(); ++c) {
            lo[c] = std::min(lo[c], clo[c]);
            hi[c] = std::max(hi[c], chi[c]);
        }
    }
}

namespace {
class AffineImage1D final : public AnalyticDensity {
public:
    AffineImage1D(std::shared_ptr<const AnalyticDensity> src, double a, double b)
        : src_(std::move(src)), a_(a), b_(b) {
        require(a_ != 0.0, "affine image needs a nonzero scale");
    }
    std::size_t dim() const override { return 1; }
    double log_density(std::span<const double> z) const override {
        const double x = (z[0] - b_) / a_;
        const double lp = src_->log_density(std::span<const double>(&x, 1));
        return lp == kNegInf ? kNegInf : lp - std::log(std::abs(a_));
    }
    void bounding_box(double nsigma, std::span<double> lo, std::span<double> hi) const override {
        double slo, shi;
        src_->bounding_box(nsigma, std::span<double>(&slo, 1), std::span<double>(&shi, 1));
        const double z0 = a_ * slo + b_;
        const double z1 = a_ * shi + b_;
        lo[0] = std::min(z0, z1);
        hi[0] = std::max(z0, z1);
    }

private:
    std::shared_ptr<const AnalyticDensity> src_;
    double a_, b_;
};
}  // namespace

std::shared_ptr<const AnalyticDensity> affine_image_1d(
    const std::shared_ptr<const AnalyticDensity>& source, double a, double b) {
    require(source->dim() == 1, "affine_image_1d expects a 1-D density");
    if (const auto* g = dynamic_cast<const Gaussian1D*>(source.get())) {
        return std::make_shared<Gaussian1D>(a * g->mean() + b, std::abs(a) * g->sd());
    }
    if (const auto* u = dynamic_cast<const Uniform1D*>(source.get())) {
        const double z0 = a * u->lo() + b;
        const double z1 = a * u->hi() + b;
        return std::make_shared<Uniform1D>(std::min(z0, z1), std::max(z0, z1));
    }
    return std::make_shared<AffineImage1D>(source, a, b);
}

// ---------------------------------------------------------------------------
// trapezoid integration

namespace {

double trapezoid_nd(const std::function<double(std::span<const double>)>& f,
                    std::span<const double> lo, std::span<const double> hi,
                    std::size_t n) {
    const std::size_t d = lo.size();
    require(d == 1 || d == 2, "quadrature supports 1-D and 2-D only, got dim ", d);
    require(n >= 3, "quadrature grid too small");
    if (d == 1) {
        const double h = (hi[0] - lo[0]) / static_cast<double>(n - 1);
        double acc = 0.0;
        double x = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            x = lo[0] + static_cast<double>(i) * h;
            const double v = f(std::span<const double>(&x, 1));
            acc += (i == 0 || i == n - 1) ? 0.5 * v : v;
        }
        return acc * h;
    }
    const double hx = (hi[0] - lo[0]) / static_cast<double>(n - 1);
    const double hy = (hi[1] - lo[1]) / static_cast<double>(n - 1);
    double acc = 0.0;
    double pt[2];
    for (std::size_t i = 0; i < n; ++i) {
        pt[0] = lo[0] + static_cast<double>(i) * hx;
        const double wx = (i == 0 || i == n - 1) ? 0.5 : 1.0;
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            pt[1] = lo[1] + static_cast<double>(j) * hy;
            const double wy = (j == 0 || j == n - 1) ? 0.5 : 1.0;
            row += wy * f(std::span<const double>(pt, 2));
        }
        acc += wx * row;
    }
    return acc * hx * hy;
}

void resolve_box(const AnalyticDensity& p, const QuadratureOptions& opt,
                 std::vector<double>& lo, std::vector<double>& hi) {
    lo.resize(p.dim());
    hi.resize(p.dim());
    if (opt.box_lo && opt.box_hi) {
        require(opt.box_lo->size() == p.dim() && opt.box_hi->size() == p.dim(),
                "quadrature box dim mismatch");
        lo = *opt.box_lo;
        hi = *opt.box_hi;
        return;
    }
    p.bounding_box(opt.nsigma, lo, hi);
}

// x * log-ish terms with the p -> 0 limit handled: p * q_log is 0 when p
// underflows to zero mass.
inline double plogterm(double log_p, double other_log) {
    if (log_p == kNegInf || log_p < -745.0) return 0.0;
    return std::exp(log_p) * other_log;
}

}  // namespace

double integrate_checked(const std::function<double(std::span<const double>)>& f,
                         std::span<const double> lo, std::span<const double> hi,
                         std::size_t points_per_dim, double refine_tol,
                         const char* what) {
    const double coarse = trapezoid_nd(f, lo, hi, points_per_dim);
    const double refined = trapezoid_nd(f, lo, hi, 2 * points_per_dim - 1);
    if (std::abs(coarse - refined) > refine_tol) {
        fail("quadrature grid too coarse for ", what, ": coarse=", coarse,
             " refined=", refined);
    }
    return refined;
}

double entropy_quadrature(const AnalyticDensity& p, const QuadratureOptions& opt) {
    std::vector<double> lo, hi;
    resolve_box(p, opt, lo, hi);
    auto f = [&](std::span<const double> x) {
        const double lp = p.log_density(x);
        return -plogterm(lp, lp);
    };
    return integrate_checked(f, lo, hi, opt.points_per_dim, opt.refine_tol, "entropy");
}

double cross_entropy_quadrature(const AnalyticDensity& p,
                                const std::function<double(std::span<const double>)>& log_q,
                                const QuadratureOptions& opt) {
    std::vector<double> lo, hi;
    resolve_box(p, opt, lo, hi);
    auto f = [&](std::span<const double> x) {
        const double lp = p.log_density(x);
        return -plogterm(lp, log_q(x));
    };
    return integrate_checked(f, lo, hi, opt.points_per_dim, opt.refine_tol, "cross entropy");
}

double kl_quadrature(const AnalyticDensity& p,
                     const std::function<double(std::span<const double>)>& log_q,
                     const QuadratureOptions& opt) {
    std::vector<double> lo, hi;
    resolve_box(p, opt, lo, hi);
    auto f = [&](std::span<const double> x) {
        const double lp = p.log_density(x);
        if (lp == kNegInf || lp < -745.0) return 0.0;
        return std::exp(lp) * (lp - log_q(x));
    };
    return integrate_checked(f, lo, hi, opt.points_per_dim, opt.refine_tol, "kl divergence");
}

GjsdResult gjsd_quadrature(std::span<const std::shared_ptr<const AnalyticDensity>> components,
                           std::span<const double> weights,
                           const QuadratureOptions& opt) {
    require(components.size() >= 1 && components.size() == weights.size(),
            "gjsd needs matching components and weights");
    AnalyticMixture mix(
        std::vector<std::shared_ptr<const AnalyticDensity>>(components.begin(), components.end()),
        std::vector<double>(weights.begin(), weights.end()));

    std::vector<double> lo, hi;
    resolve_box(mix, opt, lo, hi);
    QuadratureOptions boxed = opt;
    boxed.box_lo = lo;
    boxed.box_hi = hi;

    GjsdResult out;
    // Entropy form: H(mix) - sum_j w_j H(P_j)
    double h_mix = entropy_quadrature(mix, boxed);
    double h_sum = 0.0;
    for (std::size_t j = 0; j < components.size(); ++j) {
        h_sum += weights[j] * entropy_quadrature(*components[j], boxed);
    }
    out.entropy_form = h_mix - h_sum;

    // KL form: sum_j w_j KL(P_j, mix)
    auto log_mix = [&](std::span<const double> x) { return mix.log_density(x); };
    double kl_sum = 0.0;
    for (std::size_t j = 0; j < components.size(); ++j) {
        kl_sum += weights[j] * kl_quadrature(*components[j], log_mix, boxed);
    }
    out.kl_form = kl_sum;

    require(std::abs(out.entropy_form - out.kl_form) <= 1e-6,
            "the two gjsd forms disagree: entropy form ", out.entropy_form,
            " vs kl form ", out.kl_form);
    out.value = out.entropy_form;
    return out;
}

}  // namespace aub
