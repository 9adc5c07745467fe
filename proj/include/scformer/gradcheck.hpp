#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "scformer/tensor.hpp"

namespace scformer {

struct GradcheckOptions {
    double eps = 1e-5;
    // Relative-error denominator floor; coordinates whose analytic and
    // numeric gradients both sit below it are compared against it instead,
    // which turns the check into an absolute one of eps_tol * floor there.
    double denom_floor = 1e-4;
    // Below this magnitude the central difference is pure cancellation
    // noise; such coordinates are flagged, not failed.
    double cancellation_floor = 1e-12;
};

struct GradcheckCoord {
    std::string param;
    std::size_t index = 0;
    double analytic = 0;
    double numeric = 0;
    double rel_err = 0;
};

struct GradcheckReport {
    double max_rel_err = 0;
    std::size_t coords_checked = 0;
    std::size_t coords_flagged = 0;
    GradcheckCoord worst;
};

// Compares reverse-mode gradients of a scalar-valued forward function
// against central finite differences over every coordinate of the given
// parameter tensors. `forward` must rebuild its graph from the current
// parameter values on each call; the tensors passed here must be the same
// handles the forward reads.
template <typename F>
GradcheckReport gradcheck(F&& forward,
                          std::vector<std::pair<std::string, Tensor<double>>> params,
                          const GradcheckOptions& opt = {}) {
    GradcheckReport report;

    for (auto& [name, p] : params) p.zero_grad();
    Tensor<double> loss = forward();
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& [name, p] : params) analytic.push_back(p.grad());

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& [name, p] = params[pi];
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double saved = p.at(i);
            p.at(i) = saved + opt.eps;
            const double lp = forward().item();
            p.at(i) = saved - opt.eps;
            const double lm = forward().item();
            p.at(i) = saved;

            const double numeric = (lp - lm) / (2.0 * opt.eps);
            const double a = analytic[pi][i];
            const double mag = std::max(std::abs(a), std::abs(numeric));
            if (mag < opt.cancellation_floor) {
                ++report.coords_flagged;
                continue;
            }
            const double denom = std::max(mag, opt.denom_floor);
            const double rel = std::abs(a - numeric) / denom;
            ++report.coords_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = {name, i, a, numeric, rel};
            }
        }
    }
    return report;
}

}  // namespace scformer
