// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable primitives over 2-D tensors. Values are stored at T (float in
// training, double for gradient checks); every reduction accumulates in double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trialfuse/errors.hpp"
#include "trialfuse/numerics/autograd.hpp"
#include "trialfuse/numerics/tensor.hpp"

namespace trialfuse {

/// Multiply-accumulate counter for matmul and attention kernels (this thread only).
inline std::uint64_t& mac_counter() noexcept
{
    thread_local std::uint64_t count = 0;
    return count;
}

namespace detail {

template <typename T>
bool wants(const Node<T>& n, std::size_t i)
{
    return n.parents[i]->requires_grad;
}

template <typename T>
Tensor<T>& gbuf(Node<T>& n, std::size_t i)
{
    return n.parents[i]->grad_buffer();
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op)
{
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " + shape_string(t.shape()));
    }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op)
{
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs "
                             + shape_string(b.shape()));
    }
}

// C (m x n) += A (m x k) * B (k x n)
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n)
{
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                acc[j] += av * static_cast<double>(brow[j]);
            }
        }
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            crow[j] = static_cast<T>(static_cast<double>(crow[j]) + acc[j]);
        }
    }
}

// C (m x k) += A (m x n) * B^T, B is (k x n)
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k)
{
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * n;
        for (std::size_t j = 0; j < k; ++j) {
            const T* brow = b + j * n;
            double acc = 0.0;
            for (std::size_t l = 0; l < n; ++l) {
                acc += static_cast<double>(arow[l]) * static_cast<double>(brow[l]);
            }
            c[i * k + j] = static_cast<T>(static_cast<double>(c[i * k + j]) + acc);
        }
    }
}

// C (k x n) += A^T * B, A is (m x k), B is (m x n)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n)
{
    std::vector<double> acc(k * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* accrow = acc.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                accrow[j] += av * static_cast<double>(brow[j]);
            }
        }
    }
    for (std::size_t idx = 0; idx < k * n; ++idx) {
        c[idx] = static_cast<T>(static_cast<double>(c[idx]) + acc[idx]);
    }
}

} // namespace detail

template <typename T>
Var<T> constant(Tensor<T> value)
{
    return Var<T>::constant(std::move(value));
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b)
{
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0]) {
        throw DimensionError("matmul: incompatible shapes " + shape_string(av.shape()) + " and "
                             + shape_string(bv.shape()));
    }
    const std::size_t m = av.shape()[0];
    const std::size_t k = av.shape()[1];
    const std::size_t n = bv.shape()[1];
    Tensor<T> out({m, n});
    detail::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
    mac_counter() += static_cast<std::uint64_t>(m) * k * n;
    return make_result<T>(std::move(out), {a, b}, [m, k, n](Node<T>& self) {
        const auto& g = self.grad;
        const auto& a_val = self.parents[0]->value;
        const auto& b_val = self.parents[1]->value;
        if (detail::wants(self, 0)) {
            detail::gemm_nt(g.data().data(), b_val.data().data(), detail::gbuf(self, 0).data().data(), m, n, k);
        }
        if (detail::wants(self, 1)) {
            detail::gemm_tn(a_val.data().data(), g.data().data(), detail::gbuf(self, 1).data().data(), m, k, n);
        }
    });
}

template <typename T>
Var<T> transpose(const Var<T>& a)
{
    detail::require_matrix(a.value(), "transpose");
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    Tensor<T> out({n, m});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out(j, i) = a.value()(i, j);
        }
    }
    return make_result<T>(std::move(out), {a}, [m, n](Node<T>& self) {
        auto& ga = detail::gbuf(self, 0);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                ga(i, j) += self.grad(j, i);
            }
        }
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b)
{
    detail::require_same_shape(a.value(), b.value(), "add");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += b.value()[i];
    }
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (detail::wants(self, p)) {
                auto& g = detail::gbuf(self, p);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += self.grad[i];
                }
            }
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b)
{
    detail::require_same_shape(a.value(), b.value(), "sub");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] -= b.value()[i];
    }
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        if (detail::wants(self, 0)) {
            auto& g = detail::gbuf(self, 0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
        if (detail::wants(self, 1)) {
            auto& g = detail::gbuf(self, 1);
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] -= self.grad[i];
            }
        }
    });
}

/// Elementwise (Hadamard) product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b)
{
    detail::require_same_shape(a.value(), b.value(), "mul");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= b.value()[i];
    }
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (detail::wants(self, 0)) {
            auto& g = detail::gbuf(self, 0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * bv[i];
            }
        }
        if (detail::wants(self, 1)) {
            auto& g = detail::gbuf(self, 1);
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * av[i];
            }
        }
    });
}

/// x (m x n) + r (1 x n), broadcast over rows.
template <typename T>
Var<T> add_row(const Var<T>& x, const Var<T>& r)
{
    detail::require_matrix(x.value(), "add_row");
    const std::size_t m = x.rows();
    const std::size_t n = x.cols();
    if (r.value().size() != n) {
        throw DimensionError("add_row: row " + shape_string(r.shape()) + " does not match "
                             + shape_string(x.shape()));
    }
    Tensor<T> out = x.value();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out(i, j) += r.value()[j];
        }
    }
    return make_result<T>(std::move(out), {x, r}, [m, n](Node<T>& self) {
        if (detail::wants(self, 0)) {
            auto& g = detail::gbuf(self, 0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
        if (detail::wants(self, 1)) {
            auto& g = detail::gbuf(self, 1);
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    acc += self.grad(i, j);
                }
                g[j] += static_cast<T>(acc);
            }
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& x, double s)
{
    Tensor<T> out = x.value();
    for (auto& v : out.data()) {
        v = static_cast<T>(v * s);
    }
    return make_result<T>(std::move(out), {x}, [s](Node<T>& self) {
        auto& g = detail::gbuf(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += static_cast<T>(self.grad[i] * s);
        }
    });
}

/// x times a one-element Var.
template <typename T>
Var<T> scale_by(const Var<T>& x, const Var<T>& s)
{
    if (s.value().size() != 1) {
        throw DimensionError("scale_by: scale must have one element, got " + shape_string(s.shape()));
    }
    const T sv = s.value()[0];
    Tensor<T> out = x.value();
    for (auto& v : out.data()) {
        v *= sv;
    }
    return make_result<T>(std::move(out), {x, s}, [](Node<T>& self) {
        const T sv = self.parents[1]->value[0];
        const auto& xv = self.parents[0]->value;
        if (detail::wants(self, 0)) {
            auto& g = detail::gbuf(self, 0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * sv;
            }
        }
        if (detail::wants(self, 1)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < xv.size(); ++i) {
                acc += static_cast<double>(self.grad[i]) * xv[i];
            }
            detail::gbuf(self, 1)[0] += static_cast<T>(acc);
        }
    });
}

template <typename T>
Var<T> exp(const Var<T>& x)
{
    Tensor<T> out = x.value();
    for (auto& v : out.data()) {
        v = static_cast<T>(std::exp(static_cast<double>(v)));
    }
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        auto& g = detail::gbuf(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * self.value[i];
        }
    });
}

template <typename T>
Var<T> relu(const Var<T>& x)
{
    Tensor<T> out = x.value();
    for (auto& v : out.data()) {
        v = v > T{0} ? v : T{0};
    }
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        auto& g = detail::gbuf(self, 0);
        const auto& xv = self.parents[0]->value;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (xv[i] > T{0}) {
                g[i] += self.grad[i];
            }
        }
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x)
{
    Tensor<T> out = x.value();
    for (auto& v : out.data()) {
        const double z = v;
        v = static_cast<T>(z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)));
    }
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        auto& g = detail::gbuf(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = self.value[i];
            g[i] += static_cast<T>(self.grad[i] * y * (1.0 - y));
        }
    });
}

/// Sum of all entries, as a one-element tensor.
template <typename T>
Var<T> sum(const Var<T>& x)
{
    double acc = 0.0;
    for (const auto v : x.value().data()) {
        acc += v;
    }
    return make_result<T>(Tensor<T>::scalar(static_cast<T>(acc)), {x}, [](Node<T>& self) {
        auto& g = detail::gbuf(self, 0);
        const T gv = self.grad[0];
        for (auto& v : g.data()) {
            v += gv;
        }
    });
}

template <typename T>
Var<T> mean(const Var<T>& x)
{
    return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

/// Arithmetic mean over rows: (m x n) -> (1 x n).
template <typename T>
Var<T> mean_rows(const Var<T>& x)
{
    detail::require_matrix(x.value(), "mean_rows");
    const std::size_t m = x.rows();
    const std::size_t n = x.cols();
    Tensor<T> out({1, n});
    for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            acc += x.value()(i, j);
        }
        out[j] = static_cast<T>(acc / static_cast<double>(m));
    }
    return make_result<T>(std::move(out), {x}, [m, n](Node<T>& self) {
        auto& g = detail::gbuf(self, 0);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                g(i, j) += static_cast<T>(self.grad[j] / static_cast<double>(m));
            }
        }
    });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts)
{
    if (parts.empty()) {
        throw DimensionError("concat_rows: no inputs");
    }
    const std::size_t n = parts.front().cols();
    std::size_t m = 0;
    for (const auto& p : parts) {
        detail::require_matrix(p.value(), "concat_rows");
        if (p.cols() != n) {
            throw DimensionError("concat_rows: width mismatch " + shape_string(parts.front().shape()) + " vs "
                                 + shape_string(p.shape()));
        }
        m += p.rows();
    }
    Tensor<T> out({m, n});
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + offset);
        offset += p.value().size();
    }
    return make_result<T>(std::move(out), parts, [](Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            const std::size_t len = self.parents[p]->value.size();
            if (detail::wants(self, p)) {
                auto& g = detail::gbuf(self, p);
                for (std::size_t i = 0; i < len; ++i) {
                    g[i] += self.grad[off + i];
                }
            }
            off += len;
        }
    });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts)
{
    if (parts.empty()) {
        throw DimensionError("concat_cols: no inputs");
    }
    const std::size_t m = parts.front().rows();
    std::size_t n = 0;
    for (const auto& p : parts) {
        detail::require_matrix(p.value(), "concat_cols");
        if (p.rows() != m) {
            throw DimensionError("concat_cols: row-count mismatch " + shape_string(parts.front().shape()) + " vs "
                                 + shape_string(p.shape()));
        }
        n += p.cols();
    }
    Tensor<T> out({m, n});
    std::size_t col = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < p.cols(); ++j) {
                out(i, col + j) = p.value()(i, j);
            }
        }
        col += p.cols();
    }
    return make_result<T>(std::move(out), parts, [m](Node<T>& self) {
        std::size_t c0 = 0;
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            const std::size_t w = self.parents[p]->value.cols();
            if (detail::wants(self, p)) {
                auto& g = detail::gbuf(self, p);
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < w; ++j) {
                        g(i, j) += self.grad(i, c0 + j);
                    }
                }
            }
            c0 += w;
        }
    });
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t count)
{
    detail::require_matrix(x.value(), "slice_rows");
    if (count == 0 || begin + count > x.rows()) {
        throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(begin + count)
                             + ") out of bounds for " + shape_string(x.shape()));
    }
    const std::size_t n = x.cols();
    Tensor<T> out({count, n});
    std::copy_n(x.value().data().begin() + begin * n, count * n, out.data().begin());
    return make_result<T>(std::move(out), {x}, [begin, n](Node<T>& self) {
        auto& g = detail::gbuf(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            g[begin * n + i] += self.grad[i];
        }
    });
}

/// Rows of `table` selected by `indices` (embedding lookup).
template <typename T>
Var<T> gather_rows(const Var<T>& table, const std::vector<std::size_t>& indices)
{
    detail::require_matrix(table.value(), "gather_rows");
    const std::size_t n = table.cols();
    if (indices.empty()) {
        throw DimensionError("gather_rows: no indices");
    }
    Tensor<T> out({indices.size(), n});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= table.rows()) {
            throw DimensionError("gather_rows: index " + std::to_string(indices[i]) + " out of range for "
                                 + shape_string(table.shape()));
        }
        const auto src = table.value().row_span(indices[i]);
        std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    return make_result<T>(std::move(out), {table}, [indices, n](Node<T>& self) {
        auto& g = detail::gbuf(self, 0);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                g(indices[i], j) += self.grad(i, j);
            }
        }
    });
}

namespace detail {

/// In-place row softmax with row-max subtraction.
template <typename T>
void softmax_row_inplace(std::span<T> row)
{
    double mx = -std::numeric_limits<double>::infinity();
    for (const auto v : row) {
        mx = std::max(mx, static_cast<double>(v));
    }
    double total = 0.0;
    std::vector<double> e(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
        e[j] = std::exp(static_cast<double>(row[j]) - mx);
        total += e[j];
    }
    for (std::size_t j = 0; j < row.size(); ++j) {
        row[j] = static_cast<T>(e[j] / total);
    }
}

} // namespace detail

template <typename T>
Var<T> softmax_rows(const Var<T>& x)
{
    detail::require_matrix(x.value(), "softmax_rows");
    Tensor<T> out = x.value();
    for (std::size_t i = 0; i < out.rows(); ++i) {
        detail::softmax_row_inplace(out.row_span(i));
    }
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        auto& g = detail::gbuf(self, 0);
        const std::size_t n = self.value.cols();
        for (std::size_t i = 0; i < self.value.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                dot += static_cast<double>(self.grad(i, j)) * self.value(i, j);
            }
            for (std::size_t j = 0; j < n; ++j) {
                g(i, j) += static_cast<T>(self.value(i, j) * (self.grad(i, j) - dot));
            }
        }
    });
}

/// Per-row normalization to zero mean / unit variance, then `gain * x + bias`.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, double eps = 1e-5)
{
    detail::require_matrix(x.value(), "layer_norm");
    const std::size_t m = x.rows();
    const std::size_t n = x.cols();
    if (gain.value().size() != n || bias.value().size() != n) {
        throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" + shape_string(bias.shape())
                             + " do not match " + shape_string(x.shape()));
    }
    Tensor<T> out({m, n});
    std::vector<double> xhat(m * n);
    std::vector<double> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            mu += x.value()(i, j);
        }
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = x.value()(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            const double h = (x.value()(i, j) - mu) * inv_std[i];
            xhat[i * n + j] = h;
            out(i, j) = static_cast<T>(h * gain.value()[j] + bias.value()[j]);
        }
    }
    return make_result<T>(std::move(out), {x, gain, bias}, [m, n, xhat = std::move(xhat),
                                                            inv_std = std::move(inv_std)](Node<T>& self) {
        const auto& gv = self.parents[1]->value;
        if (detail::wants(self, 0)) {
            auto& gx = detail::gbuf(self, 0);
            for (std::size_t i = 0; i < m; ++i) {
                double mean_d = 0.0;
                double mean_dx = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double d = static_cast<double>(self.grad(i, j)) * gv[j];
                    mean_d += d;
                    mean_dx += d * xhat[i * n + j];
                }
                mean_d /= static_cast<double>(n);
                mean_dx /= static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    const double d = static_cast<double>(self.grad(i, j)) * gv[j];
                    gx(i, j) += static_cast<T>(inv_std[i] * (d - mean_d - xhat[i * n + j] * mean_dx));
                }
            }
        }
        if (detail::wants(self, 1)) {
            auto& gg = detail::gbuf(self, 1);
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    acc += static_cast<double>(self.grad(i, j)) * xhat[i * n + j];
                }
                gg[j] += static_cast<T>(acc);
            }
        }
        if (detail::wants(self, 2)) {
            auto& gb = detail::gbuf(self, 2);
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    acc += self.grad(i, j);
                }
                gb[j] += static_cast<T>(acc);
            }
        }
    });
}

/// Each row scaled to unit Euclidean norm.
template <typename T>
Var<T> l2_normalize_rows(const Var<T>& x, double eps = 1e-12)
{
    detail::require_matrix(x.value(), "l2_normalize_rows");
    const std::size_t m = x.rows();
    const std::size_t n = x.cols();
    Tensor<T> out({m, n});
    std::vector<double> norms(m);
    for (std::size_t i = 0; i < m; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            ss += static_cast<double>(x.value()(i, j)) * x.value()(i, j);
        }
        norms[i] = std::sqrt(ss) + eps;
        for (std::size_t j = 0; j < n; ++j) {
            out(i, j) = static_cast<T>(x.value()(i, j) / norms[i]);
        }
    }
    return make_result<T>(std::move(out), {x}, [m, n, norms = std::move(norms)](Node<T>& self) {
        auto& g = detail::gbuf(self, 0);
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                dot += static_cast<double>(self.grad(i, j)) * self.value(i, j);
            }
            for (std::size_t j = 0; j < n; ++j) {
                g(i, j) += static_cast<T>((self.grad(i, j) - self.value(i, j) * dot) / norms[i]);
            }
        }
    });
}

/// Mean over rows of -log softmax(logits)[i, labels[i]].
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<std::size_t>& labels)
{
    detail::require_matrix(logits.value(), "softmax_cross_entropy");
    const std::size_t m = logits.rows();
    const std::size_t n = logits.cols();
    if (labels.size() != m) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for "
                             + shape_string(logits.shape()));
    }
    std::vector<double> probs(m * n);
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (labels[i] >= n) {
            throw DimensionError("softmax_cross_entropy: label out of range");
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            mx = std::max(mx, static_cast<double>(logits.value()(i, j)));
        }
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            probs[i * n + j] = std::exp(static_cast<double>(logits.value()(i, j)) - mx);
            total += probs[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            probs[i * n + j] /= total;
        }
        loss += -(static_cast<double>(logits.value()(i, labels[i])) - mx - std::log(total));
    }
    loss /= static_cast<double>(m);
    return make_result<T>(Tensor<T>::scalar(static_cast<T>(loss)), {logits},
                          [m, n, labels, probs = std::move(probs)](Node<T>& self) {
                              auto& g = detail::gbuf(self, 0);
                              const double scale_factor = static_cast<double>(self.grad[0]) / static_cast<double>(m);
                              for (std::size_t i = 0; i < m; ++i) {
                                  for (std::size_t j = 0; j < n; ++j) {
                                      const double target = j == labels[i] ? 1.0 : 0.0;
                                      g(i, j) += static_cast<T>(scale_factor * (probs[i * n + j] - target));
                                  }
                              }
                          });
}

/// Probability clamp used by the class-weighted BCE.
inline constexpr double kProbabilityClamp = 1e-7;

/// Batch mean of -w_pos*y*ln(p) - w_neg*(1-y)*ln(1-p), with p clamped to
/// [1e-7, 1-1e-7]. `probs` holds one probability per example.
template <typename T>
Var<T> weighted_bce(const Var<T>& probs, const std::vector<int>& labels, double w_pos, double w_neg)
{
    const std::size_t m = probs.value().size();
    if (labels.size() != m) {
        throw DimensionError("weighted_bce: " + std::to_string(labels.size()) + " labels for "
                             + shape_string(probs.shape()));
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double p = std::clamp(static_cast<double>(probs.value()[i]), kProbabilityClamp, 1.0 - kProbabilityClamp);
        const double y = labels[i];
        loss += -w_pos * y * std::log(p) - w_neg * (1.0 - y) * std::log(1.0 - p);
    }
    loss /= static_cast<double>(m);
    return make_result<T>(Tensor<T>::scalar(static_cast<T>(loss)), {probs}, [m, labels, w_pos, w_neg](Node<T>& self) {
        auto& g = detail::gbuf(self, 0);
        const auto& pv = self.parents[0]->value;
        const double gs = static_cast<double>(self.grad[0]) / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
            const double p = pv[i];
            if (p < kProbabilityClamp || p > 1.0 - kProbabilityClamp) {
                continue;
            }
            const double y = labels[i];
            g[i] += static_cast<T>(gs * (-w_pos * y / p + w_neg * (1.0 - y) / (1.0 - p)));
        }
    });
}

namespace detail {

/// Columns [c0, c0 + w) of a row-major m x d matrix, transposed to w x m (double).
template <typename T>
void pack_transposed(const Tensor<T>& x, std::size_t c0, std::size_t w, std::vector<double>& out)
{
    const std::size_t m = x.rows();
    const std::size_t d = x.cols();
    const T* src = x.data().data();
    out.resize(w * m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t c = 0; c < w; ++c) {
            out[c * m + i] = src[i * d + c0 + c];
        }
    }
}

} // namespace detail

/// Scaled dot-product attention over `heads` column slices.
/// q: m x d, k: n x d, v: n x d -> m x d, each head using d/heads columns
/// and scale 1/sqrt(d/heads). No projections; see multi_head_attention.
template <typename T>
Var<T> attention_core(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads)
{
    detail::require_matrix(q.value(), "attention_core");
    detail::require_matrix(k.value(), "attention_core");
    detail::require_matrix(v.value(), "attention_core");
    const std::size_t m = q.rows();
    const std::size_t n = k.rows();
    const std::size_t d = q.cols();
    if (k.cols() != d || v.cols() != d || v.rows() != n) {
        throw DimensionError("attention_core: incompatible q/k/v shapes " + shape_string(q.shape()) + ", "
                             + shape_string(k.shape()) + ", " + shape_string(v.shape()));
    }
    if (heads == 0 || d % heads != 0) {
        throw DimensionError("attention_core: width " + std::to_string(d) + " not divisible by "
                             + std::to_string(heads) + " heads");
    }
    const std::size_t dk = d / heads;
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dk));
    const T* qv = q.value().data().data();

    Tensor<T> out({m, d});
    T* ov = out.data().data();
    std::vector<T> probs(heads * m * n);
    std::vector<double> kt;
    std::vector<double> vt;
    std::vector<double> row(n);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dk;
        detail::pack_transposed(k.value(), c0, dk, kt);
        detail::pack_transposed(v.value(), c0, dk, vt);
        for (std::size_t i = 0; i < m; ++i) {
            std::fill(row.begin(), row.end(), 0.0);
            for (std::size_t c = 0; c < dk; ++c) {
                const double qc = static_cast<double>(qv[i * d + c0 + c]) * scale_factor;
                const double* kc = kt.data() + c * n;
                for (std::size_t j = 0; j < n; ++j) {
                    row[j] += qc * kc[j];
                }
            }
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                mx = std::max(mx, row[j]);
            }
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                row[j] = std::exp(row[j] - mx);
                total += row[j];
            }
            const double inv = 1.0 / total;
            T* p = probs.data() + (h * m + i) * n;
            for (std::size_t j = 0; j < n; ++j) {
                row[j] *= inv;
                p[j] = static_cast<T>(row[j]);
            }
            for (std::size_t c = 0; c < dk; ++c) {
                const double* vc = vt.data() + c * n;
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    acc += row[j] * vc[j];
                }
                ov[i * d + c0 + c] = static_cast<T>(acc);
            }
        }
    }
    mac_counter() += 2ULL * m * n * d;

    return make_result<T>(std::move(out), {q, k, v},
                          [m, n, d, dk, heads, scale_factor, probs = std::move(probs)](Node<T>& self) {
                              const T* qv = self.parents[0]->value.data().data();
                              const T* go = self.grad.data().data();
                              const bool want_q = detail::wants(self, 0);
                              const bool want_k = detail::wants(self, 1);
                              const bool want_v = detail::wants(self, 2);
                              std::vector<double> dq(want_q ? m * d : 0, 0.0);
                              std::vector<double> dkt(want_k ? d * n : 0, 0.0);  // transposed: d x n
                              std::vector<double> dvt(want_v ? d * n : 0, 0.0);
                              std::vector<double> kt;
                              std::vector<double> vt;
                              std::vector<double> dp(n);
                              for (std::size_t h = 0; h < heads; ++h) {
                                  const std::size_t c0 = h * dk;
                                  detail::pack_transposed(self.parents[1]->value, c0, dk, kt);
                                  detail::pack_transposed(self.parents[2]->value, c0, dk, vt);
                                  for (std::size_t i = 0; i < m; ++i) {
                                      const T* p = probs.data() + (h * m + i) * n;
                                      // dP = dO V^T ; dV += P^T dO
                                      std::fill(dp.begin(), dp.end(), 0.0);
                                      for (std::size_t c = 0; c < dk; ++c) {
                                          const double g = go[i * d + c0 + c];
                                          const double* vc = vt.data() + c * n;
                                          for (std::size_t j = 0; j < n; ++j) {
                                              dp[j] += g * vc[j];
                                          }
                                          if (want_v) {
                                              double* dvc = dvt.data() + (c0 + c) * n;
                                              for (std::size_t j = 0; j < n; ++j) {
                                                  dvc[j] += static_cast<double>(p[j]) * g;
                                              }
                                          }
                                      }
                                      double rowdot = 0.0;
                                      for (std::size_t j = 0; j < n; ++j) {
                                          rowdot += dp[j] * static_cast<double>(p[j]);
                                      }
                                      // dS = P o (dP - <dP, P>), pre-scale logits
                                      for (std::size_t j = 0; j < n; ++j) {
                                          dp[j] = static_cast<double>(p[j]) * (dp[j] - rowdot) * scale_factor;
                                      }
                                      for (std::size_t c = 0; c < dk; ++c) {
                                          if (want_q) {
                                              const double* kc = kt.data() + c * n;
                                              double acc = 0.0;
                                              for (std::size_t j = 0; j < n; ++j) {
                                                  acc += dp[j] * kc[j];
                                              }
                                              dq[i * d + c0 + c] += acc;
                                          }
                                          if (want_k) {
                                              const double qc = qv[i * d + c0 + c];
                                              double* dkc = dkt.data() + (c0 + c) * n;
                                              for (std::size_t j = 0; j < n; ++j) {
                                                  dkc[j] += dp[j] * qc;
                                              }
                                          }
                                      }
                                  }
                              }
                              if (want_q) {
                                  auto& g = detail::gbuf(self, 0);
                                  for (std::size_t i = 0; i < dq.size(); ++i) {
                                      g[i] += static_cast<T>(dq[i]);
                                  }
                              }
                              auto scatter = [&](std::size_t parent, const std::vector<double>& t) {
                                  auto& g = detail::gbuf(self, parent);
                                  for (std::size_t j = 0; j < n; ++j) {
                                      for (std::size_t c = 0; c < d; ++c) {
                                          g[j * d + c] += static_cast<T>(t[c * n + j]);
                                      }
                                  }
                              };
                              if (want_k) {
                                  scatter(1, dkt);
                              }
                              if (want_v) {
                                  scatter(2, dvt);
                              }
                          });
}

} // namespace trialfuse
