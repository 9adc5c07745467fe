#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "scformer/error.hpp"

namespace scformer {

// Discrete LegS operator pair. A is lower triangular:
//   A[n][k] = sqrt(2n+1)*sqrt(2k+1)  for n > k
//   A[n][n] = n+1
// B[n] = sqrt(2n+1). Always built in double; the recurrence at small k is
// too ill-conditioned for float32.
struct LegsOperator {
    std::size_t order = 0;
    std::vector<double> A;  // order x order, row-major
    std::vector<double> B;  // order
};

inline LegsOperator legs_matrices(std::size_t order) {
    if (order == 0) {
        throw ScfError(errc::shape_mismatch, "legs_matrices: order must be positive");
    }
    LegsOperator op;
    op.order = order;
    op.A.assign(order * order, 0.0);
    op.B.resize(order);
    for (std::size_t n = 0; n < order; ++n) {
        const double sn = std::sqrt(2.0 * static_cast<double>(n) + 1.0);
        for (std::size_t k = 0; k < n; ++k)
            op.A[n * order + k] = sn * std::sqrt(2.0 * static_cast<double>(k) + 1.0);
        op.A[n * order + n] = static_cast<double>(n) + 1.0;
        op.B[n] = sn;
    }
    return op;
}

// Running projection state for C channels. `k` is the 1-based subscript of
// the next update (the divisor Eq-style recurrences see), so a fresh state
// has k=1 and zero coefficients and the first update never divides by zero.
struct HippoState {
    std::size_t order = 0;
    std::size_t channels = 0;
    std::size_t k = 1;
    std::vector<double> coeffs;  // channels x order, row-major

    std::size_t samples_consumed() const { return k - 1; }
};

inline HippoState hippo_initial(std::size_t order, std::size_t channels) {
    if (order == 0 || channels == 0) {
        throw ScfError(errc::shape_mismatch, "hippo_initial: order and channels must be positive");
    }
    HippoState s;
    s.order = order;
    s.channels = channels;
    s.k = 1;
    s.coeffs.assign(order * channels, 0.0);
    return s;
}

// c <- (I - A/k) c + (1/k) B x, independently per channel.
inline void hippo_step_inplace(HippoState& s, const LegsOperator& op, const double* x) {
    if (s.k == 0) {
        throw ScfError(errc::internal, "hippo step with k=0 would divide by zero");
    }
    if (s.order != op.order) {
        throw ScfError(errc::shape_mismatch, "hippo step: state order " +
                                                 std::to_string(s.order) +
                                                 " vs operator order " +
                                                 std::to_string(op.order));
    }
    const std::size_t N = s.order;
    const double inv_k = 1.0 / static_cast<double>(s.k);
    std::vector<double> ac(N);
    for (std::size_t ch = 0; ch < s.channels; ++ch) {
        double* c = s.coeffs.data() + ch * N;
        for (std::size_t n = 0; n < N; ++n) {
            const double* arow = op.A.data() + n * N;
            double acc = 0.0;
            for (std::size_t j = 0; j <= n; ++j) acc += arow[j] * c[j];
            ac[n] = acc;
        }
        const double xv = x[ch];
        for (std::size_t n = 0; n < N; ++n) c[n] += inv_k * (op.B[n] * xv - ac[n]);
    }
    ++s.k;
}

inline HippoState hippo_step(HippoState s, const LegsOperator& op,
                             const std::vector<double>& x) {
    if (x.size() != s.channels) {
        throw ScfError(errc::shape_mismatch,
                       "hippo step: sample has " + std::to_string(x.size()) +
                           " channels, state has " + std::to_string(s.channels));
    }
    hippo_step_inplace(s, op, x.data());
    return s;
}

// One state per prefix of a rows x channels series (row-major); states[t]
// covers samples 0..t inclusive.
inline std::vector<HippoState> hippo_scan(const std::vector<double>& values, std::size_t rows,
                                          std::size_t channels, const LegsOperator& op) {
    if (rows == 0) {
        throw ScfError(errc::shape_mismatch, "hippo_scan: empty series");
    }
    if (values.size() != rows * channels) {
        throw ScfError(errc::shape_mismatch, "hippo_scan: series buffer does not match dims");
    }
    std::vector<HippoState> states;
    states.reserve(rows);
    HippoState s = hippo_initial(op.order, channels);
    for (std::size_t t = 0; t < rows; ++t) {
        hippo_step_inplace(s, op, values.data() + t * channels);
        states.push_back(s);
    }
    return states;
}

// Memory-light scan: returns states only at the requested sample indices
// (strictly increasing). Used when only window-start states are needed.
inline std::vector<HippoState> hippo_scan_at(const std::vector<double>& values,
                                             std::size_t rows, std::size_t channels,
                                             const LegsOperator& op,
                                             const std::vector<std::size_t>& keep) {
    if (rows == 0) {
        throw ScfError(errc::shape_mismatch, "hippo_scan_at: empty series");
    }
    if (values.size() != rows * channels) {
        throw ScfError(errc::shape_mismatch, "hippo_scan_at: series buffer does not match dims");
    }
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (keep[i] >= rows || (i > 0 && keep[i] <= keep[i - 1])) {
            throw ScfError(errc::shape_mismatch,
                           "hippo_scan_at: keep indices must be strictly increasing and in range");
        }
    }
    std::vector<HippoState> out;
    out.reserve(keep.size());
    HippoState s = hippo_initial(op.order, channels);
    std::size_t next = 0;
    for (std::size_t t = 0; t < rows && next < keep.size(); ++t) {
        hippo_step_inplace(s, op, values.data() + t * channels);
        if (t == keep[next]) {
            out.push_back(s);
            ++next;
        }
    }
    return out;
}

// Scaled Legendre basis value phi_n(t) = sqrt(2n+1) * P_n(2t - 1) for
// t in [0,1] (fraction of the elapsed window).
inline void legendre_basis_row(double t, std::size_t order, double* out) {
    const double u = 2.0 * t - 1.0;
    double pm2 = 1.0, pm1 = u;
    for (std::size_t n = 0; n < order; ++n) {
        double pn;
        if (n == 0) {
            pn = 1.0;
        } else if (n == 1) {
            pn = u;
        } else {
            pn = ((2.0 * static_cast<double>(n) - 1.0) * u * pm1 -
                  (static_cast<double>(n) - 1.0) * pm2) /
                 static_cast<double>(n);
            pm2 = pm1;
            pm1 = pn;
        }
        out[n] = std::sqrt(2.0 * static_cast<double>(n) + 1.0) * pn;
    }
}

// Independent verification oracle: least-squares fit of the first `order`
// basis functions to one channel's samples, on the grid t_i = (i+1)/K.
// Solves the normal equations with a Cholesky factorization; the basis is
// near-orthogonal on the grid so they are well conditioned.
inline std::vector<double> project_oracle(const std::vector<double>& samples,
                                          std::size_t order) {
    const std::size_t K = samples.size();
    if (order == 0) {
        throw ScfError(errc::shape_mismatch, "project_oracle: order must be positive");
    }
    if (K < order) {
        throw ScfError(errc::shape_mismatch,
                       "project_oracle: " + std::to_string(K) + " samples cannot determine " +
                           std::to_string(order) + " coefficients");
    }
    std::vector<double> phi(order);
    std::vector<double> gram(order * order, 0.0);
    std::vector<double> rhs(order, 0.0);
    for (std::size_t i = 0; i < K; ++i) {
        const double t = static_cast<double>(i + 1) / static_cast<double>(K);
        legendre_basis_row(t, order, phi.data());
        for (std::size_t n = 0; n < order; ++n) {
            rhs[n] += phi[n] * samples[i];
            for (std::size_t m = 0; m <= n; ++m) gram[n * order + m] += phi[n] * phi[m];
        }
    }
    // Cholesky: gram = L L^T, stored in the lower triangle.
    for (std::size_t n = 0; n < order; ++n) {
        for (std::size_t m = 0; m <= n; ++m) {
            double acc = gram[n * order + m];
            for (std::size_t j = 0; j < m; ++j)
                acc -= gram[n * order + j] * gram[m * order + j];
            if (n == m) {
                if (acc <= 0.0) {
                    throw ScfError(errc::internal,
                                   "project_oracle: normal equations lost positive definiteness");
                }
                gram[n * order + n] = std::sqrt(acc);
            } else {
                gram[n * order + m] = acc / gram[m * order + m];
            }
        }
    }
    std::vector<double> y(order);
    for (std::size_t n = 0; n < order; ++n) {
        double acc = rhs[n];
        for (std::size_t j = 0; j < n; ++j) acc -= gram[n * order + j] * y[j];
        y[n] = acc / gram[n * order + n];
    }
    std::vector<double> coeffs(order);
    for (std::size_t n = order; n-- > 0;) {
        double acc = y[n];
        for (std::size_t j = n + 1; j < order; ++j) acc -= gram[j * order + n] * coeffs[j];
        coeffs[n] = acc / gram[n * order + n];
    }
    return coeffs;
}

// Pointwise basis expansion at normalized positions t in [0,1].
inline std::vector<double> reconstruct(const std::vector<double>& coeffs,
                                       const std::vector<double>& t_grid) {
    if (coeffs.empty()) {
        throw ScfError(errc::shape_mismatch, "reconstruct: empty coefficients");
    }
    const std::size_t order = coeffs.size();
    std::vector<double> phi(order);
    std::vector<double> out(t_grid.size());
    for (std::size_t i = 0; i < t_grid.size(); ++i) {
        legendre_basis_row(t_grid[i], order, phi.data());
        double acc = 0.0;
        for (std::size_t n = 0; n < order; ++n) acc += phi[n] * coeffs[n];
        out[i] = acc;
    }
    return out;
}

inline double relative_l2_error(const std::vector<double>& approx,
                                const std::vector<double>& reference) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double d = approx[i] - reference[i];
        num += d * d;
        den += reference[i] * reference[i];
    }
    if (den == 0.0) return std::sqrt(num);
    return std::sqrt(num / den);
}

}  // namespace scformer
