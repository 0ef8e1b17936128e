#pragma once

#include <functional>
#include <span>
#include <vector>

#include "aub/param_store.hpp"

namespace aub {

/// log(sum_i exp(values_i)) via max-shift; safe for spreads up to ~700.
double log_sum_exp(std::span<const double> values);

/// Central-difference gradient of a deterministic scalar loss with respect to
/// every coordinate of `params`. The store is restored bit-exactly afterward.
/// The caller is responsible for freezing any randomness inside `loss`.
std::vector<double> finite_difference_gradient(
    const std::function<double(ParameterStore&)>& loss, ParameterStore& params,
    double eps = 1e-5);

/// Comparison rule used everywhere an analytic gradient is checked against the
/// finite-difference oracle: relative error below `rel_tol`, falling back to an
/// absolute tolerance when the analytic value is tiny.
bool gradients_close(std::span<const double> analytic, std::span<const double> numeric,
                     double rel_tol = 1e-4, double abs_tol = 1e-6,
                     double abs_switch = 1e-3);

/// Worst per-coordinate discrepancy under the gradients_close rule, for
/// diagnostics (relative where |analytic| >= abs_switch, absolute otherwise).
double gradient_discrepancy(std::span<const double> analytic,
                            std::span<const double> numeric,
                            double abs_switch = 1e-3);

}  // namespace aub
