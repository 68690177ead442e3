// grad_check.hpp - Central finite-difference oracle for analytic gradients.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "xvad/rng.hpp"
#include "xvad/tensor.hpp"

namespace xvad::testing {

inline double central_fd(const std::function<double()>& loss, real* coord, double h) {
    const real orig = *coord;
    *coord = static_cast<real>(orig + h);
    const double lp = loss();
    *coord = static_cast<real>(orig - h);
    const double lm = loss();
    *coord = orig;
    return (lp - lm) / (2 * h);
}

inline double rel_err(double analytic, double fd) {
    const double denom = std::max({1e-6, std::abs(analytic), std::abs(fd)});
    return std::abs(analytic - fd) / denom;
}

// Checks `coords` random coordinates of each (param, grad) pair against the
// finite-difference oracle; returns the worst relative error observed.
// `loss` must recompute the objective from scratch (it is called with
// perturbed parameters), and `grad` must already hold the analytic gradient
// of that objective at the unperturbed point.
inline double check_gradients(
    const std::function<double()>& loss,
    const std::vector<std::pair<Tensor*, const Tensor*>>& param_grad, Rng& rng,
    int coords = 10, double h = 1e-5) {
    double worst = 0;
    for (const auto& [param, grad] : param_grad) {
        for (int c = 0; c < coords; ++c) {
            const size_t i = static_cast<size_t>(rng.uniform_u64(param->v.size()));
            const double fd = central_fd(loss, &param->v[i], h);
            worst = std::max(worst, rel_err(static_cast<double>(grad->v[i]), fd));
        }
    }
    return worst;
}

}  // namespace xvad::testing
