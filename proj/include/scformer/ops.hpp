#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "scformer/tensor.hpp"

namespace scformer {

namespace detail {

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(TensorNode<T>&)> backprop) {
    check_finite(op, value);
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    bool needs_grad = false;
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
    if (needs_grad) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const auto& in : inputs) node->parents.push_back(in.handle());
        node->backprop = std::move(backprop);
    }
    return Tensor<T>::wrap(std::move(node));
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ScfError(errc::shape_mismatch, std::string(op) + ": shapes " +
                                                 shape_str(a.shape()) + " and " +
                                                 shape_str(b.shape()) + " differ");
    }
}

template <typename T>
void require_rank2(const char* op, const Tensor<T>& a) {
    if (a.rank() != 2) {
        throw ScfError(errc::shape_mismatch,
                       std::string(op) + ": expected a matrix, got shape " + shape_str(a.shape()));
    }
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("add", a, b);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
    return detail::make_result<T>("add", a.shape(), std::move(out), {a, b},
                                  [](TensorNode<T>& n) {
                                      for (int p = 0; p < 2; ++p) {
                                          auto& par = *n.parents[p];
                                          if (!par.requires_grad) continue;
                                          par.ensure_grad();
                                          for (std::size_t i = 0; i < n.grad.size(); ++i)
                                              par.grad[i] += n.grad[i];
                                      }
                                  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("sub", a, b);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
    return detail::make_result<T>("sub", a.shape(), std::move(out), {a, b},
                                  [](TensorNode<T>& n) {
                                      auto& pa = *n.parents[0];
                                      auto& pb = *n.parents[1];
                                      if (pa.requires_grad) {
                                          pa.ensure_grad();
                                          for (std::size_t i = 0; i < n.grad.size(); ++i)
                                              pa.grad[i] += n.grad[i];
                                      }
                                      if (pb.requires_grad) {
                                          pb.ensure_grad();
                                          for (std::size_t i = 0; i < n.grad.size(); ++i)
                                              pb.grad[i] -= n.grad[i];
                                      }
                                  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("mul", a, b);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
    return detail::make_result<T>("mul", a.shape(), std::move(out), {a, b},
                                  [](TensorNode<T>& n) {
                                      auto& pa = *n.parents[0];
                                      auto& pb = *n.parents[1];
                                      if (pa.requires_grad) {
                                          pa.ensure_grad();
                                          for (std::size_t i = 0; i < n.grad.size(); ++i)
                                              pa.grad[i] += n.grad[i] * pb.value[i];
                                      }
                                      if (pb.requires_grad) {
                                          pb.ensure_grad();
                                          for (std::size_t i = 0; i < n.grad.size(); ++i)
                                              pb.grad[i] += n.grad[i] * pa.value[i];
                                      }
                                  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * s;
    return detail::make_result<T>("scale", a.shape(), std::move(out), {a},
                                  [s](TensorNode<T>& n) {
                                      auto& pa = *n.parents[0];
                                      if (!pa.requires_grad) return;
                                      pa.ensure_grad();
                                      for (std::size_t i = 0; i < n.grad.size(); ++i)
                                          pa.grad[i] += n.grad[i] * s;
                                  });
}

// C[m,n] = A[m,k] * B[k,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank2("matmul", a);
    detail::require_rank2("matmul", b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ScfError(errc::shape_mismatch, "matmul: inner dims " + shape_str(a.shape()) +
                                                 " * " + shape_str(b.shape()));
    }
    std::vector<T> out(m * n, T(0));
    {
        const T* av = a.value().data();
        const T* bv = b.value().data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t t = 0; t < k; ++t) {
                const T aik = av[i * k + t];
                if (aik == T(0)) continue;
                const T* brow = bv + t * n;
                T* crow = out.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
            }
    }
    return detail::make_result<T>(
        "matmul", {m, n}, std::move(out), {a, b}, [m, k, n](TensorNode<T>& node) {
            auto& pa = *node.parents[0];
            auto& pb = *node.parents[1];
            const T* g = node.grad.data();
            if (pa.requires_grad) {
                pa.ensure_grad();
                const T* bv = pb.value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t t = 0; t < k; ++t) {
                        T acc = T(0);
                        const T* grow = g + i * n;
                        const T* brow = bv + t * n;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        pa.grad[i * k + t] += acc;
                    }
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                const T* av = pa.value.data();
                for (std::size_t t = 0; t < k; ++t)
                    for (std::size_t i = 0; i < m; ++i) {
                        const T ait = av[i * k + t];
                        if (ait == T(0)) continue;
                        const T* grow = g + i * n;
                        T* brow = pb.grad.data() + t * n;
                        for (std::size_t j = 0; j < n; ++j) brow[j] += ait * grow[j];
                    }
            }
        });
}

// C[m,n] = A[m,k] * B[n,k]^T; rows of B are dotted with rows of A.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank2("matmul_nt", a);
    detail::require_rank2("matmul_nt", b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw ScfError(errc::shape_mismatch, "matmul_nt: inner dims " + shape_str(a.shape()) +
                                                 " * " + shape_str(b.shape()) + "^T");
    }
    std::vector<T> out(m * n);
    {
        const T* av = a.value().data();
        const T* bv = b.value().data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                T acc = T(0);
                const T* arow = av + i * k;
                const T* brow = bv + j * k;
                for (std::size_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
                out[i * n + j] = acc;
            }
    }
    return detail::make_result<T>(
        "matmul_nt", {m, n}, std::move(out), {a, b}, [m, k, n](TensorNode<T>& node) {
            auto& pa = *node.parents[0];
            auto& pb = *node.parents[1];
            const T* g = node.grad.data();
            if (pa.requires_grad) {
                pa.ensure_grad();
                const T* bv = pb.value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const T gij = g[i * n + j];
                        if (gij == T(0)) continue;
                        const T* brow = bv + j * k;
                        T* arow = pa.grad.data() + i * k;
                        for (std::size_t t = 0; t < k; ++t) arow[t] += gij * brow[t];
                    }
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                const T* av = pa.value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const T gij = g[i * n + j];
                        if (gij == T(0)) continue;
                        const T* arow = av + i * k;
                        T* brow = pb.grad.data() + j * k;
                        for (std::size_t t = 0; t < k; ++t) brow[t] += gij * arow[t];
                    }
            }
        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    detail::require_rank2("transpose", a);
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<T> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.at(i, j);
    return detail::make_result<T>("transpose", {n, m}, std::move(out), {a},
                                  [m, n](TensorNode<T>& node) {
                                      auto& pa = *node.parents[0];
                                      if (!pa.requires_grad) return;
                                      pa.ensure_grad();
                                      for (std::size_t j = 0; j < n; ++j)
                                          for (std::size_t i = 0; i < m; ++i)
                                              pa.grad[i * n + j] += node.grad[j * m + i];
                                  });
}

// Broadcast a length-n vector over the rows of an [m,n] matrix.
template <typename T>
Tensor<T> add_rows(const Tensor<T>& a, const Tensor<T>& bias) {
    detail::require_rank2("add_rows", a);
    if (bias.rank() != 1 || bias.numel() != a.cols()) {
        throw ScfError(errc::shape_mismatch, "add_rows: bias " + shape_str(bias.shape()) +
                                                 " does not span columns of " +
                                                 shape_str(a.shape()));
    }
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<T> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.at(i, j) + bias.at(j);
    return detail::make_result<T>("add_rows", {m, n}, std::move(out), {a, bias},
                                  [m, n](TensorNode<T>& node) {
                                      auto& pa = *node.parents[0];
                                      auto& pbias = *node.parents[1];
                                      if (pa.requires_grad) {
                                          pa.ensure_grad();
                                          for (std::size_t i = 0; i < m * n; ++i)
                                              pa.grad[i] += node.grad[i];
                                      }
                                      if (pbias.requires_grad) {
                                          pbias.ensure_grad();
                                          for (std::size_t i = 0; i < m; ++i)
                                              for (std::size_t j = 0; j < n; ++j)
                                                  pbias.grad[j] += node.grad[i * n + j];
                                      }
                                  });
}

// Column-wise affine map with constant coefficients (no gradient path into
// scale/shift); used to denormalize inside the graph.
template <typename T>
Tensor<T> affine_cols(const Tensor<T>& a, std::vector<T> col_scale, std::vector<T> col_shift) {
    detail::require_rank2("affine_cols", a);
    const std::size_t m = a.rows(), n = a.cols();
    if (col_scale.size() != n || col_shift.size() != n) {
        throw ScfError(errc::shape_mismatch,
                       "affine_cols: coefficient length does not match " + shape_str(a.shape()));
    }
    std::vector<T> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] = a.at(i, j) * col_scale[j] + col_shift[j];
    return detail::make_result<T>("affine_cols", {m, n}, std::move(out), {a},
                                  [m, n, sc = std::move(col_scale)](TensorNode<T>& node) {
                                      auto& pa = *node.parents[0];
                                      if (!pa.requires_grad) return;
                                      pa.ensure_grad();
                                      for (std::size_t i = 0; i < m; ++i)
                                          for (std::size_t j = 0; j < n; ++j)
                                              pa.grad[i * n + j] += node.grad[i * n + j] * sc[j];
                                  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) > T(0) ? a.at(i) : T(0);
    return detail::make_result<T>("relu", a.shape(), std::move(out), {a},
                                  [](TensorNode<T>& node) {
                                      auto& pa = *node.parents[0];
                                      if (!pa.requires_grad) return;
                                      pa.ensure_grad();
                                      for (std::size_t i = 0; i < node.grad.size(); ++i)
                                          if (pa.value[i] > T(0)) pa.grad[i] += node.grad[i];
                                  });
}

// Row-wise softmax with max subtraction for stability.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
    detail::require_rank2("softmax_rows", a);
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<T> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        T mx = a.at(i, 0);
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, a.at(i, j));
        T sum = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = std::exp(a.at(i, j) - mx);
            sum += out[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= sum;
    }
    return detail::make_result<T>(
        "softmax_rows", {m, n}, std::move(out), {a}, [m, n](TensorNode<T>& node) {
            auto& pa = *node.parents[0];
            if (!pa.requires_grad) return;
            pa.ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                T dot = T(0);
                for (std::size_t j = 0; j < n; ++j)
                    dot += node.grad[i * n + j] * node.value[i * n + j];
                for (std::size_t j = 0; j < n; ++j)
                    pa.grad[i * n + j] +=
                        (node.grad[i * n + j] - dot) * node.value[i * n + j];
            }
        });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) {
        throw ScfError(errc::shape_mismatch, "concat_cols: no inputs");
    }
    const std::size_t m = parts[0].rows();
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        detail::require_rank2("concat_cols", p);
        if (p.rows() != m) {
            throw ScfError(errc::shape_mismatch, "concat_cols: row counts differ");
        }
        widths.push_back(p.cols());
        total += p.cols();
    }
    std::vector<T> out(m * total);
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const std::size_t w = widths[pi];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j)
                out[i * total + off + j] = parts[pi].at(i, j);
        off += w;
    }
    return detail::make_result<T>(
        "concat_cols", {m, total}, std::move(out), parts,
        [m, total, widths](TensorNode<T>& node) {
            std::size_t off2 = 0;
            for (std::size_t pi = 0; pi < node.parents.size(); ++pi) {
                auto& par = *node.parents[pi];
                const std::size_t w = widths[pi];
                if (par.requires_grad) {
                    par.ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j)
                            par.grad[i * w + j] += node.grad[i * total + off2 + j];
                }
                off2 += w;
            }
        });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t c0, std::size_t c1) {
    detail::require_rank2("slice_cols", a);
    const std::size_t m = a.rows(), n = a.cols();
    if (!(c0 < c1 && c1 <= n)) {
        throw ScfError(errc::shape_mismatch,
                       "slice_cols: [" + std::to_string(c0) + ", " + std::to_string(c1) +
                           ") out of range for " + shape_str(a.shape()));
    }
    const std::size_t w = c1 - c0;
    std::vector<T> out(m * w);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.at(i, c0 + j);
    return detail::make_result<T>("slice_cols", {m, w}, std::move(out), {a},
                                  [m, n, w, c0](TensorNode<T>& node) {
                                      auto& pa = *node.parents[0];
                                      if (!pa.requires_grad) return;
                                      pa.ensure_grad();
                                      for (std::size_t i = 0; i < m; ++i)
                                          for (std::size_t j = 0; j < w; ++j)
                                              pa.grad[i * n + c0 + j] += node.grad[i * w + j];
                                  });
}

// Correlation of each row with a kernel, output position i reads input
// positions i .. i+k-1; reads past the row end are dropped, so position i
// depends only on positions >= i.
template <typename T>
Tensor<T> conv1d_rows(const Tensor<T>& a, const Tensor<T>& kernel) {
    detail::require_rank2("conv1d_rows", a);
    if (kernel.rank() != 1 || kernel.numel() == 0) {
        throw ScfError(errc::shape_mismatch,
                       "conv1d_rows: kernel must be a nonempty vector, got " +
                           shape_str(kernel.shape()));
    }
    const std::size_t m = a.rows(), d = a.cols(), k = kernel.numel();
    std::vector<T> out(m * d, T(0));
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t i = 0; i < d; ++i) {
            T acc = T(0);
            const std::size_t jmax = std::min(k, d - i);
            for (std::size_t j = 0; j < jmax; ++j) acc += kernel.at(j) * a.at(r, i + j);
            out[r * d + i] = acc;
        }
    return detail::make_result<T>(
        "conv1d_rows", {m, d}, std::move(out), {a, kernel}, [m, d, k](TensorNode<T>& node) {
            auto& pa = *node.parents[0];
            auto& pk = *node.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t i = 0; i < d; ++i) {
                        const T g = node.grad[r * d + i];
                        if (g == T(0)) continue;
                        const std::size_t jmax = std::min(k, d - i);
                        for (std::size_t j = 0; j < jmax; ++j)
                            pa.grad[r * d + i + j] += pk.value[j] * g;
                    }
            }
            if (pk.requires_grad) {
                pk.ensure_grad();
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t i = 0; i < d; ++i) {
                        const T g = node.grad[r * d + i];
                        if (g == T(0)) continue;
                        const std::size_t jmax = std::min(k, d - i);
                        for (std::size_t j = 0; j < jmax; ++j)
                            pk.grad[j] += pa.value[r * d + i + j] * g;
                    }
            }
        });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T acc = T(0);
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a.at(i);
    return detail::make_result<T>("sum_all", {1}, {acc}, {a}, [](TensorNode<T>& node) {
        auto& pa = *node.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += node.grad[0];
    });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    if (a.numel() == 0) {
        throw ScfError(errc::shape_mismatch, "mean_all: empty tensor");
    }
    T acc = T(0);
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a.at(i);
    const T inv = T(1) / static_cast<T>(a.numel());
    return detail::make_result<T>("mean_all", {1}, {acc * inv}, {a},
                                  [inv](TensorNode<T>& node) {
                                      auto& pa = *node.parents[0];
                                      if (!pa.requires_grad) return;
                                      pa.ensure_grad();
                                      for (std::size_t i = 0; i < pa.grad.size(); ++i)
                                          pa.grad[i] += node.grad[0] * inv;
                                  });
}

// Row-wise standardization with population variance; no learned affine.
template <typename T>
Tensor<T> layernorm_rows(const Tensor<T>& a, T eps) {
    detail::require_rank2("layernorm_rows", a);
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<T> out(m * n);
    std::vector<T> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        T mean = T(0);
        for (std::size_t j = 0; j < n; ++j) mean += a.at(i, j);
        mean /= static_cast<T>(n);
        T var = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            const T d = a.at(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<T>(n);
        const T inv = T(1) / std::sqrt(var + eps);
        inv_std[i] = inv;
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = (a.at(i, j) - mean) * inv;
    }
    return detail::make_result<T>(
        "layernorm_rows", {m, n}, std::move(out), {a},
        [m, n, inv_std](TensorNode<T>& node) {
            auto& pa = *node.parents[0];
            if (!pa.requires_grad) return;
            pa.ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                T gmean = T(0), gymean = T(0);
                for (std::size_t j = 0; j < n; ++j) {
                    gmean += node.grad[i * n + j];
                    gymean += node.grad[i * n + j] * node.value[i * n + j];
                }
                gmean /= static_cast<T>(n);
                gymean /= static_cast<T>(n);
                for (std::size_t j = 0; j < n; ++j)
                    pa.grad[i * n + j] += inv_std[i] * (node.grad[i * n + j] - gmean -
                                                        node.value[i * n + j] * gymean);
            }
        });
}

}  // namespace scformer
