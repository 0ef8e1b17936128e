#include "aub/numeric.hpp"

#include <algorithm>
#include <cmath>

namespace aub {

double log_sum_exp(std::span<const double> values) {
    require(!values.empty(), "empty log_sum_exp");
    double m = values[0];
    for (double v : values) m = std::max(m, v);
    double acc = 0.0;
    for (double v : values) acc += std::exp(v - m);
    return m + std::log(acc);
}

std::vector<double> finite_difference_gradient(
    const std::function<double(ParameterStore&)>& loss, ParameterStore& params,
    double eps) {
    require(eps > 0.0 && eps <= 1e-2, "finite difference eps must be in (0, 1e-2], got ", eps);
    auto values = params.values();
    std::vector<double> grad(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + eps;
        const double plus = loss(params);
        values[i] = saved - eps;
        const double minus = loss(params);
        values[i] = saved;
        if (!std::isfinite(plus) || !std::isfinite(minus)) {
            fail("non-finite loss while probing coordinate ", params.coordinate_name(i));
        }
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    return grad;
}

double gradient_discrepancy(std::span<const double> analytic,
                            std::span<const double> numeric, double abs_switch) {
    require(analytic.size() == numeric.size(), "gradient length mismatch: ",
            analytic.size(), " vs ", numeric.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double diff = std::abs(analytic[i] - numeric[i]);
        const double scale = std::abs(analytic[i]);
        worst = std::max(worst, scale < abs_switch ? diff : diff / scale);
    }
    return worst;
}

bool gradients_close(std::span<const double> analytic, std::span<const double> numeric,
                     double rel_tol, double abs_tol, double abs_switch) {
    require(analytic.size() == numeric.size(), "gradient length mismatch: ",
            analytic.size(), " vs ", numeric.size());
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double diff = std::abs(analytic[i] - numeric[i]);
        const double scale = std::abs(analytic[i]);
        if (scale < abs_switch) {
            if (diff > abs_tol) return false;
        } else if (diff / scale > rel_tol) {
            return false;
        }
    }
    return true;
}

}  // namespace aub
