#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "scformer/random.hpp"
#include "scformer/tensor.hpp"

namespace test_helpers {

inline bool close(double a, double b, double tol = 1e-12) {
    return std::abs(a - b) <= tol;
}

inline bool all_close(const std::vector<double>& a, const std::vector<double>& b,
                      double tol = 1e-12) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!close(a[i], b[i], tol)) return false;
    return true;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

template <typename T = double>
scformer::Tensor<T> random_matrix(std::size_t rows, std::size_t cols, scformer::Rng& rng,
                                  bool requires_grad = true, double lo = -1.0,
                                  double hi = 1.0) {
    std::vector<T> data(rows * cols);
    for (auto& v : data) v = static_cast<T>(rng.uniform(lo, hi));
    return scformer::Tensor<T>::matrix(rows, cols, std::move(data), requires_grad);
}

template <typename T = double>
scformer::Tensor<T> random_vector(std::size_t n, scformer::Rng& rng,
                                  bool requires_grad = true, double lo = -1.0,
                                  double hi = 1.0) {
    std::vector<T> data(n);
    for (auto& v : data) v = static_cast<T>(rng.uniform(lo, hi));
    return scformer::Tensor<T>::vector(std::move(data), requires_grad);
}

}  // namespace test_helpers
