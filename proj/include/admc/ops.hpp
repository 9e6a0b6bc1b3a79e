#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "admc/tensor.hpp"

// Differentiable operations over Tensor<T>. Every op validates shapes up
// front, computes the forward result, and (when gradients are being
// recorded) attaches a closure that scatters the output gradient into the
// parents. Backward closures read the output's own buffers through the
// Impl& they receive; anything else they need is captured by value.

namespace admc::ops {

enum class Trans { N, Tr };

namespace detail {

// C (m,n) = or += op(A) * op(B), row-major. op(X) has the logical shape
// implied by (m, n, k); the physical buffer is transposed when requested.
template <typename T>
void gemm(Trans ta, Trans tb, int64_t m, int64_t n, int64_t k,
          const T* a, const T* b, T* c, bool accumulate) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<Mat> cm(c, m, n);
    auto apply = [&](const auto& prod) {
        if (accumulate)
            cm.noalias() += prod;
        else
            cm.noalias() = prod;
    };
    Eigen::Map<const Mat> an(a, ta == Trans::N ? m : k, ta == Trans::N ? k : m);
    Eigen::Map<const Mat> bn(b, tb == Trans::N ? k : n, tb == Trans::N ? n : k);
    if (ta == Trans::N && tb == Trans::N)
        apply(an * bn);
    else if (ta == Trans::N)
        apply(an * bn.transpose());
    else if (tb == Trans::N)
        apply(an.transpose() * bn);
    else
        apply(an.transpose() * bn.transpose());
}

template <typename T>
void require_same_dims(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.dims() != b.dims())
        raise(ErrorCategory::Shape, std::string(op) + ": mismatched shapes " +
                                        shape_str(a.dims()) + " vs " + shape_str(b.dims()));
}

template <typename T>
void require_rank(const Tensor<T>& t, size_t rank, const char* op) {
    if (t.rank() != rank)
        raise(ErrorCategory::Shape, std::string(op) + ": expected rank " +
                                        std::to_string(rank) + ", got shape " +
                                        shape_str(t.dims()));
}

} // namespace detail

// out(..., n) = x(..., k) @ w(k, n). Leading axes of x are flattened into
// rows, so rank-2 and rank-3 inputs share one code path.
template <typename T>
Tensor<T> matmul(const Tensor<T>& x, const Tensor<T>& w) {
    detail::require_rank(w, 2, "matmul(weight)");
    if (x.rank() < 1 || x.dim(x.rank() - 1) != w.dim(0))
        raise(ErrorCategory::Shape, "matmul: inner dims disagree, " + shape_str(x.dims()) +
                                        " @ " + shape_str(w.dims()));
    const int64_t k = w.dim(0);
    const int64_t n = w.dim(1);
    const int64_t m = x.numel() / k;
    Shape out_dims(x.dims().begin(), x.dims().end() - 1);
    out_dims.push_back(n);
    Tensor<T> out = Tensor<T>::zeros(std::move(out_dims));
    detail::gemm(Trans::N, Trans::N, m, n, k, x.data(), w.data(), out.mutable_data(), false);
    OpBuilder<T>::check_finite(out, "matmul");
    OpBuilder<T>::attach(out, {x, w}, [x, w, m, n, k](typename Tensor<T>::Impl& self) {
        if (x.requires_grad()) {
            Tensor<T>::ensure_grad(*x.impl());
            detail::gemm(Trans::N, Trans::Tr, m, k, n, self.grad.data(), w.data(),
                         x.impl()->grad.data(), true);
        }
        if (w.requires_grad()) {
            Tensor<T>::ensure_grad(*w.impl());
            detail::gemm(Trans::Tr, Trans::N, k, n, m, x.data(), self.grad.data(),
                         w.impl()->grad.data(), true);
        }
    });
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_dims(a, b, "add");
    Tensor<T> out = Tensor<T>::zeros(a.dims());
    T* o = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) o[i] = a.data()[i] + b.data()[i];
    OpBuilder<T>::attach(out, {a, b}, [a, b](typename Tensor<T>::Impl& self) {
        for (const Tensor<T>& p : {a, b}) {
            if (!p.requires_grad()) continue;
            Tensor<T>::ensure_grad(*p.impl());
            auto& g = p.impl()->grad;
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_dims(a, b, "mul");
    Tensor<T> out = Tensor<T>::zeros(a.dims());
    T* o = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) o[i] = a.data()[i] * b.data()[i];
    OpBuilder<T>::attach(out, {a, b}, [a, b](typename Tensor<T>::Impl& self) {
        if (a.requires_grad()) {
            Tensor<T>::ensure_grad(*a.impl());
            auto& g = a.impl()->grad;
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * b.data()[i];
        }
        if (b.requires_grad()) {
            Tensor<T>::ensure_grad(*b.impl());
            auto& g = b.impl()->grad;
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * a.data()[i];
        }
    });
    return out;
}

// y = scale * x + shift, elementwise with scalar coefficients.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
    Tensor<T> out = Tensor<T>::zeros(x.dims());
    T* o = out.mutable_data();
    for (int64_t i = 0; i < x.numel(); ++i) o[i] = scale * x.data()[i] + shift;
    OpBuilder<T>::attach(out, {x}, [x, scale](typename Tensor<T>::Impl& self) {
        Tensor<T>::ensure_grad(*x.impl());
        auto& g = x.impl()->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] += scale * self.grad[i];
    });
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    return affine(x, s, T(0));
}

// x(..., d) + bias(d), broadcast over rows.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    detail::require_rank(bias, 1, "add_bias(bias)");
    const int64_t d = bias.dim(0);
    if (x.rank() < 1 || x.dim(x.rank() - 1) != d)
        raise(ErrorCategory::Shape, "add_bias: " + shape_str(x.dims()) + " with bias " +
                                        shape_str(bias.dims()));
    const int64_t rows = x.numel() / d;
    Tensor<T> out = Tensor<T>::zeros(x.dims());
    T* o = out.mutable_data();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) o[r * d + j] = x.data()[r * d + j] + bias.data()[j];
    OpBuilder<T>::attach(out, {x, bias}, [x, bias, rows, d](typename Tensor<T>::Impl& self) {
        if (x.requires_grad()) {
            Tensor<T>::ensure_grad(*x.impl());
            auto& g = x.impl()->grad;
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (bias.requires_grad()) {
            Tensor<T>::ensure_grad(*bias.impl());
            auto& g = bias.impl()->grad;
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
        }
    });
    return out;
}

// x(B, M, d) + table(M, d): per-token additive embedding shared across the
// batch (modality/position embeddings).
template <typename T>
Tensor<T> add_broadcast_batch(const Tensor<T>& x, const Tensor<T>& table) {
    detail::require_rank(x, 3, "add_broadcast_batch(x)");
    detail::require_rank(table, 2, "add_broadcast_batch(table)");
    const int64_t batch = x.dim(0), m = x.dim(1), d = x.dim(2);
    if (table.dim(0) != m || table.dim(1) != d)
        raise(ErrorCategory::Shape, "add_broadcast_batch: " + shape_str(x.dims()) + " with " +
                                        shape_str(table.dims()));
    Tensor<T> out = Tensor<T>::zeros(x.dims());
    T* o = out.mutable_data();
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t i = 0; i < m * d; ++i) o[b * m * d + i] = x.data()[b * m * d + i] + table.data()[i];
    OpBuilder<T>::attach(out, {x, table}, [x, table, batch, m, d](typename Tensor<T>::Impl& self) {
        if (x.requires_grad()) {
            Tensor<T>::ensure_grad(*x.impl());
            auto& g = x.impl()->grad;
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (table.requires_grad()) {
            Tensor<T>::ensure_grad(*table.impl());
            auto& g = table.impl()->grad;
            for (int64_t b = 0; b < batch; ++b)
                for (int64_t i = 0; i < m * d; ++i) g[i] += self.grad[b * m * d + i];
        }
    });
    return out;
}

// x(B, M, d) + e(B, d): one vector per batch element added to every token
// (timestep conditioning).
template <typename T>
Tensor<T> add_broadcast_tokens(const Tensor<T>& x, const Tensor<T>& e) {
    detail::require_rank(x, 3, "add_broadcast_tokens(x)");
    detail::require_rank(e, 2, "add_broadcast_tokens(e)");
    const int64_t batch = x.dim(0), m = x.dim(1), d = x.dim(2);
    if (e.dim(0) != batch || e.dim(1) != d)
        raise(ErrorCategory::Shape, "add_broadcast_tokens: " + shape_str(x.dims()) + " with " +
                                        shape_str(e.dims()));
    Tensor<T> out = Tensor<T>::zeros(x.dims());
    T* o = out.mutable_data();
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < d; ++j)
                o[(b * m + i) * d + j] = x.data()[(b * m + i) * d + j] + e.data()[b * d + j];
    OpBuilder<T>::attach(out, {x, e}, [x, e, batch, m, d](typename Tensor<T>::Impl& self) {
        if (x.requires_grad()) {
            Tensor<T>::ensure_grad(*x.impl());
            auto& g = x.impl()->grad;
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (e.requires_grad()) {
            Tensor<T>::ensure_grad(*e.impl());
            auto& g = e.impl()->grad;
            for (int64_t b = 0; b < batch; ++b)
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < d; ++j) g[b * d + j] += self.grad[(b * m + i) * d + j];
        }
    });
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.dims());
    T* o = out.mutable_data();
    for (int64_t i = 0; i < x.numel(); ++i) o[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
    OpBuilder<T>::attach(out, {x}, [x](typename Tensor<T>::Impl& self) {
        Tensor<T>::ensure_grad(*x.impl());
        auto& g = x.impl()->grad;
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (self.data[i] > T(0)) g[i] += self.grad[i];
    });
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.dims());
    T* o = out.mutable_data();
    for (int64_t i = 0; i < x.numel(); ++i)
        o[i] = T(1) / (T(1) + std::exp(-x.data()[i]));
    OpBuilder<T>::attach(out, {x}, [x](typename Tensor<T>::Impl& self) {
        Tensor<T>::ensure_grad(*x.impl());
        auto& g = x.impl()->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const T y = self.data[i];
            g[i] += self.grad[i] * y * (T(1) - y);
        }
    });
    return out;
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.dims());
    T* o = out.mutable_data();
    for (int64_t i = 0; i < x.numel(); ++i) o[i] = std::tanh(x.data()[i]);
    OpBuilder<T>::attach(out, {x}, [x](typename Tensor<T>::Impl& self) {
        Tensor<T>::ensure_grad(*x.impl());
        auto& g = x.impl()->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const T y = self.data[i];
            g[i] += self.grad[i] * (T(1) - y * y);
        }
    });
    return out;
}

// Normalizes the last axis; gamma/beta are (d).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    detail::require_rank(gamma, 1, "layer_norm(gamma)");
    detail::require_rank(beta, 1, "layer_norm(beta)");
    const int64_t d = gamma.dim(0);
    if (beta.dim(0) != d || x.rank() < 1 || x.dim(x.rank() - 1) != d)
        raise(ErrorCategory::Shape, "layer_norm: " + shape_str(x.dims()) + " with gamma " +
                                        shape_str(gamma.dims()) + ", beta " + shape_str(beta.dims()));
    const int64_t rows = x.numel() / d;
    Tensor<T> out = Tensor<T>::zeros(x.dims());
    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(x.numel()));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
    T* o = out.mutable_data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * d;
        T mean = T(0);
        for (int64_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (int64_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<T>(d);
        const T inv = T(1) / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = inv;
        for (int64_t j = 0; j < d; ++j) {
            const T xh = (xr[j] - mean) * inv;
            (*xhat)[static_cast<size_t>(r * d + j)] = xh;
            o[r * d + j] = gamma.data()[j] * xh + beta.data()[j];
        }
    }
    OpBuilder<T>::check_finite(out, "layer_norm");
    OpBuilder<T>::attach(out, {x, gamma, beta},
                         [x, gamma, beta, xhat, inv_std, rows, d](typename Tensor<T>::Impl& self) {
        if (gamma.requires_grad()) {
            Tensor<T>::ensure_grad(*gamma.impl());
            auto& g = gamma.impl()->grad;
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < d; ++j)
                    g[j] += self.grad[r * d + j] * (*xhat)[static_cast<size_t>(r * d + j)];
        }
        if (beta.requires_grad()) {
            Tensor<T>::ensure_grad(*beta.impl());
            auto& g = beta.impl()->grad;
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
        }
        if (x.requires_grad()) {
            Tensor<T>::ensure_grad(*x.impl());
            auto& g = x.impl()->grad;
            for (int64_t r = 0; r < rows; ++r) {
                const T inv = (*inv_std)[static_cast<size_t>(r)];
                T sum_dyg = T(0), sum_dyg_xh = T(0);
                for (int64_t j = 0; j < d; ++j) {
                    const T dyg = self.grad[r * d + j] * gamma.data()[j];
                    sum_dyg += dyg;
                    sum_dyg_xh += dyg * (*xhat)[static_cast<size_t>(r * d + j)];
                }
                for (int64_t j = 0; j < d; ++j) {
                    const T dyg = self.grad[r * d + j] * gamma.data()[j];
                    const T xh = (*xhat)[static_cast<size_t>(r * d + j)];
                    g[r * d + j] += inv * (dyg - (sum_dyg + xh * sum_dyg_xh) / static_cast<T>(d));
                }
            }
        }
    });
    return out;
}

// Softmax over the last axis.
template <typename T>
Tensor<T> softmax_last(const Tensor<T>& x) {
    if (x.rank() < 1) raise(ErrorCategory::Shape, "softmax_last: rank-0 input");
    const int64_t d = x.dim(x.rank() - 1);
    const int64_t rows = x.numel() / d;
    Tensor<T> out = Tensor<T>::zeros(x.dims());
    T* o = out.mutable_data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * d;
        T mx = xr[0];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
        T sum = T(0);
        for (int64_t j = 0; j < d; ++j) {
            o[r * d + j] = std::exp(xr[j] - mx);
            sum += o[r * d + j];
        }
        for (int64_t j = 0; j < d; ++j) o[r * d + j] /= sum;
    }
    OpBuilder<T>::attach(out, {x}, [x, rows, d](typename Tensor<T>::Impl& self) {
        Tensor<T>::ensure_grad(*x.impl());
        auto& g = x.impl()->grad;
        for (int64_t r = 0; r < rows; ++r) {
            T dot = T(0);
            for (int64_t j = 0; j < d; ++j) dot += self.grad[r * d + j] * self.data[r * d + j];
            for (int64_t j = 0; j < d; ++j)
                g[r * d + j] += self.data[r * d + j] * (self.grad[r * d + j] - dot);
        }
    });
    return out;
}

// Scaled dot-product multi-head self-attention. q/k/v are (B, M, d) or
// (M, d); heads must divide d. Softmax weights are stashed for backward.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int64_t heads) {
    detail::require_same_dims(q, k, "attention(q,k)");
    detail::require_same_dims(q, v, "attention(q,v)");
    if (q.rank() != 2 && q.rank() != 3)
        raise(ErrorCategory::Shape, "attention: expected rank 2 or 3, got " + shape_str(q.dims()));
    const int64_t batch = q.rank() == 3 ? q.dim(0) : 1;
    const int64_t m = q.dim(q.rank() - 2);
    const int64_t d = q.dim(q.rank() - 1);
    if (heads <= 0 || d % heads != 0)
        raise(ErrorCategory::Config, "attention: head count " + std::to_string(heads) +
                                         " must divide model dim " + std::to_string(d));
    const int64_t dh = d / heads;
    const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));

    Tensor<T> out = Tensor<T>::zeros(q.dims());
    auto weights = std::make_shared<std::vector<T>>(static_cast<size_t>(batch * heads * m * m));
    T* o = out.mutable_data();
    std::vector<T> row(static_cast<size_t>(m));
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t h = 0; h < heads; ++h) {
            const int64_t col0 = h * dh;
            T* w_bh = weights->data() + ((b * heads + h) * m * m);
            for (int64_t i = 0; i < m; ++i) {
                const T* qi = q.data() + ((b * m + i) * d + col0);
                T mx = -std::numeric_limits<T>::infinity();
                for (int64_t j = 0; j < m; ++j) {
                    const T* kj = k.data() + ((b * m + j) * d + col0);
                    T s = T(0);
                    for (int64_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                    row[static_cast<size_t>(j)] = s * inv_scale;
                    mx = std::max(mx, row[static_cast<size_t>(j)]);
                }
                T sum = T(0);
                for (int64_t j = 0; j < m; ++j) {
                    row[static_cast<size_t>(j)] = std::exp(row[static_cast<size_t>(j)] - mx);
                    sum += row[static_cast<size_t>(j)];
                }
                T* oi = o + ((b * m + i) * d + col0);
                for (int64_t j = 0; j < m; ++j) {
                    const T wij = row[static_cast<size_t>(j)] / sum;
                    w_bh[i * m + j] = wij;
                    const T* vj = v.data() + ((b * m + j) * d + col0);
                    for (int64_t c = 0; c < dh; ++c) oi[c] += wij * vj[c];
                }
            }
        }
    }
    OpBuilder<T>::check_finite(out, "attention");
    OpBuilder<T>::attach(out, {q, k, v},
                         [q, k, v, weights, batch, heads, m, dh, d,
                          inv_scale](typename Tensor<T>::Impl& self) {
        const bool need_q = q.requires_grad(), need_k = k.requires_grad(),
                   need_v = v.requires_grad();
        if (need_q) Tensor<T>::ensure_grad(*q.impl());
        if (need_k) Tensor<T>::ensure_grad(*k.impl());
        if (need_v) Tensor<T>::ensure_grad(*v.impl());
        std::vector<T> dw(static_cast<size_t>(m)), ds(static_cast<size_t>(m));
        for (int64_t b = 0; b < batch; ++b) {
            for (int64_t h = 0; h < heads; ++h) {
                const int64_t col0 = h * dh;
                const T* w_bh = weights->data() + ((b * heads + h) * m * m);
                for (int64_t i = 0; i < m; ++i) {
                    const T* doi = self.grad.data() + ((b * m + i) * d + col0);
                    if (need_v) {
                        auto& gv = v.impl()->grad;
                        for (int64_t j = 0; j < m; ++j) {
                            const T wij = w_bh[i * m + j];
                            T* gvj = gv.data() + ((b * m + j) * d + col0);
                            for (int64_t c = 0; c < dh; ++c) gvj[c] += wij * doi[c];
                        }
                    }
                    if (!need_q && !need_k) continue;
                    T dot = T(0);
                    for (int64_t j = 0; j < m; ++j) {
                        const T* vj = v.data() + ((b * m + j) * d + col0);
                        T s = T(0);
                        for (int64_t c = 0; c < dh; ++c) s += doi[c] * vj[c];
                        dw[static_cast<size_t>(j)] = s;
                        dot += s * w_bh[i * m + j];
                    }
                    for (int64_t j = 0; j < m; ++j)
                        ds[static_cast<size_t>(j)] =
                            w_bh[i * m + j] * (dw[static_cast<size_t>(j)] - dot) * inv_scale;
                    if (need_q) {
                        T* gqi = q.impl()->grad.data() + ((b * m + i) * d + col0);
                        for (int64_t j = 0; j < m; ++j) {
                            const T* kj = k.data() + ((b * m + j) * d + col0);
                            const T dsj = ds[static_cast<size_t>(j)];
                            for (int64_t c = 0; c < dh; ++c) gqi[c] += dsj * kj[c];
                        }
                    }
                    if (need_k) {
                        const T* qi = q.data() + ((b * m + i) * d + col0);
                        auto& gk = k.impl()->grad;
                        for (int64_t j = 0; j < m; ++j) {
                            T* gkj = gk.data() + ((b * m + j) * d + col0);
                            const T dsj = ds[static_cast<size_t>(j)];
                            for (int64_t c = 0; c < dh; ++c) gkj[c] += dsj * qi[c];
                        }
                    }
                }
            }
        }
    });
    return out;
}

// Inverted dropout; identity when not training or rate == 0. The stream is
// advanced once per element whenever active.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, rng::Stream& stream, bool training) {
    if (rate < 0.0 || rate >= 1.0)
        raise(ErrorCategory::Config, "dropout rate must lie in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return affine(x, T(1), T(0));
    Tensor<T> out = Tensor<T>::zeros(x.dims());
    auto mask = std::make_shared<std::vector<T>>(static_cast<size_t>(x.numel()));
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    T* o = out.mutable_data();
    for (int64_t i = 0; i < x.numel(); ++i) {
        const T mi = stream.next_double() < rate ? T(0) : keep_scale;
        (*mask)[static_cast<size_t>(i)] = mi;
        o[i] = x.data()[i] * mi;
    }
    OpBuilder<T>::attach(out, {x}, [x, mask](typename Tensor<T>::Impl& self) {
        Tensor<T>::ensure_grad(*x.impl());
        auto& g = x.impl()->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
    });
    return out;
}

// Concatenation along the last axis; all leading axes must match.
template <typename T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) raise(ErrorCategory::Usage, "concat_last: no inputs");
    const Shape& lead = parts[0].dims();
    int64_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != lead.size() ||
            !std::equal(lead.begin(), lead.end() - 1, p.dims().begin()))
            raise(ErrorCategory::Shape, "concat_last: incompatible shapes " + shape_str(lead) +
                                            " vs " + shape_str(p.dims()));
        total += p.dim(p.rank() - 1);
    }
    Shape out_dims(lead.begin(), lead.end() - 1);
    out_dims.push_back(total);
    const int64_t rows = shape_numel(out_dims) / total;
    Tensor<T> out = Tensor<T>::zeros(out_dims);
    T* o = out.mutable_data();
    int64_t col = 0;
    for (const auto& p : parts) {
        const int64_t w = p.dim(p.rank() - 1);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < w; ++j) o[r * total + col + j] = p.data()[r * w + j];
        col += w;
    }
    OpBuilder<T>::attach(out, parts, [parts, rows, total](typename Tensor<T>::Impl& self) {
        int64_t col = 0;
        for (const auto& p : parts) {
            const int64_t w = p.dim(p.rank() - 1);
            if (p.requires_grad()) {
                Tensor<T>::ensure_grad(*p.impl());
                auto& g = p.impl()->grad;
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < w; ++j) g[r * w + j] += self.grad[r * total + col + j];
            }
            col += w;
        }
    });
    return out;
}

// Stacks M equally shaped (B, d) tensors into (B, M, d) along a new middle axis.
template <typename T>
Tensor<T> stack_tokens(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) raise(ErrorCategory::Usage, "stack_tokens: no inputs");
    for (const auto& p : parts) {
        detail::require_rank(p, 2, "stack_tokens");
        detail::require_same_dims(p, parts[0], "stack_tokens");
    }
    const int64_t b = parts[0].dim(0), d = parts[0].dim(1);
    const int64_t m = static_cast<int64_t>(parts.size());
    Tensor<T> out = Tensor<T>::zeros({b, m, d});
    T* o = out.mutable_data();
    for (int64_t r = 0; r < b; ++r)
        for (int64_t i = 0; i < m; ++i)
            std::copy_n(parts[static_cast<size_t>(i)].data() + r * d, d, o + (r * m + i) * d);
    OpBuilder<T>::attach(out, parts, [parts, b, d, m](typename Tensor<T>::Impl& self) {
        for (int64_t i = 0; i < m; ++i) {
            const auto& p = parts[static_cast<size_t>(i)];
            if (!p.requires_grad()) continue;
            Tensor<T>::ensure_grad(*p.impl());
            auto& g = p.impl()->grad;
            for (int64_t r = 0; r < b; ++r)
                for (int64_t j = 0; j < d; ++j) g[r * d + j] += self.grad[(r * m + i) * d + j];
        }
    });
    return out;
}

// out(..., len) = x(..., start : start + len).
template <typename T>
Tensor<T> slice_last(const Tensor<T>& x, int64_t start, int64_t len) {
    const int64_t d = x.dim(x.rank() - 1);
    if (start < 0 || len <= 0 || start + len > d)
        raise(ErrorCategory::Shape, "slice_last: [" + std::to_string(start) + "," +
                                        std::to_string(start + len) + ") out of range for " +
                                        shape_str(x.dims()));
    Shape out_dims(x.dims().begin(), x.dims().end() - 1);
    out_dims.push_back(len);
    const int64_t rows = x.numel() / d;
    Tensor<T> out = Tensor<T>::zeros(out_dims);
    T* o = out.mutable_data();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < len; ++j) o[r * len + j] = x.data()[r * d + start + j];
    OpBuilder<T>::attach(out, {x}, [x, start, len, rows, d](typename Tensor<T>::Impl& self) {
        Tensor<T>::ensure_grad(*x.impl());
        auto& g = x.impl()->grad;
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < len; ++j) g[r * d + start + j] += self.grad[r * len + j];
    });
    return out;
}

// Elementwise max over a list of (B, h) step outputs, restricted per batch
// element to its first lengths[b] steps. Ties break toward the earliest step.
template <typename T>
Tensor<T> temporal_max(const std::vector<Tensor<T>>& steps, const std::vector<int64_t>& lengths) {
    if (steps.empty()) raise(ErrorCategory::Usage, "temporal_max: no steps");
    const int64_t batch = steps[0].dim(0), h = steps[0].dim(1);
    for (const auto& s : steps) detail::require_same_dims(s, steps[0], "temporal_max");
    if (static_cast<int64_t>(lengths.size()) != batch)
        raise(ErrorCategory::Shape, "temporal_max: lengths size " + std::to_string(lengths.size()) +
                                        " vs batch " + std::to_string(batch));
    for (int64_t b = 0; b < batch; ++b)
        if (lengths[static_cast<size_t>(b)] < 1 ||
            lengths[static_cast<size_t>(b)] > static_cast<int64_t>(steps.size()))
            raise(ErrorCategory::Input, "temporal_max: invalid sequence length " +
                                            std::to_string(lengths[static_cast<size_t>(b)]));
    Tensor<T> out = Tensor<T>::zeros({batch, h});
    auto argmax = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(batch * h), 0);
    T* o = out.mutable_data();
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t j = 0; j < h; ++j) {
            T best = steps[0].data()[b * h + j];
            int32_t best_t = 0;
            for (int64_t t = 1; t < lengths[static_cast<size_t>(b)]; ++t) {
                const T v = steps[static_cast<size_t>(t)].data()[b * h + j];
                if (v > best) {
                    best = v;
                    best_t = static_cast<int32_t>(t);
                }
            }
            o[b * h + j] = best;
            (*argmax)[static_cast<size_t>(b * h + j)] = best_t;
        }
    }
    OpBuilder<T>::attach(out, steps, [steps, argmax, batch, h](typename Tensor<T>::Impl& self) {
        for (const auto& s : steps)
            if (s.requires_grad()) Tensor<T>::ensure_grad(*s.impl());
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t j = 0; j < h; ++j) {
                const auto t = static_cast<size_t>((*argmax)[static_cast<size_t>(b * h + j)]);
                if (steps[t].requires_grad())
                    steps[t].impl()->grad[b * h + j] += self.grad[b * h + j];
            }
    });
    return out;
}

// Max over axis 1 of x(B, L, c), per-sample limited to valid[b] rows
// (masking out padded convolution windows).
template <typename T>
Tensor<T> rows_max_pool(const Tensor<T>& x, const std::vector<int64_t>& valid) {
    detail::require_rank(x, 3, "rows_max_pool");
    const int64_t batch = x.dim(0), rows = x.dim(1), c = x.dim(2);
    if (static_cast<int64_t>(valid.size()) != batch)
        raise(ErrorCategory::Shape, "rows_max_pool: valid size " + std::to_string(valid.size()) +
                                        " vs batch " + std::to_string(batch));
    for (int64_t b = 0; b < batch; ++b)
        if (valid[static_cast<size_t>(b)] < 1 || valid[static_cast<size_t>(b)] > rows)
            raise(ErrorCategory::Input,
                  "rows_max_pool: invalid row count " + std::to_string(valid[static_cast<size_t>(b)]));
    Tensor<T> out = Tensor<T>::zeros({batch, c});
    auto argmax = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(batch * c), 0);
    T* o = out.mutable_data();
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t j = 0; j < c; ++j) {
            T best = x.data()[(b * rows) * c + j];
            int32_t best_r = 0;
            for (int64_t r = 1; r < valid[static_cast<size_t>(b)]; ++r) {
                const T v = x.data()[(b * rows + r) * c + j];
                if (v > best) {
                    best = v;
                    best_r = static_cast<int32_t>(r);
                }
            }
            o[b * c + j] = best;
            (*argmax)[static_cast<size_t>(b * c + j)] = best_r;
        }
    OpBuilder<T>::attach(out, {x}, [x, argmax, batch, rows, c](typename Tensor<T>::Impl& self) {
        Tensor<T>::ensure_grad(*x.impl());
        auto& g = x.impl()->grad;
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t j = 0; j < c; ++j) {
                const auto r = (*argmax)[static_cast<size_t>(b * c + j)];
                g[(b * rows + r) * c + j] += self.grad[b * c + j];
            }
    });
    return out;
}

// Mean over axis 1: (B, M, d) -> (B, d).
template <typename T>
Tensor<T> mean_tokens(const Tensor<T>& x) {
    detail::require_rank(x, 3, "mean_tokens");
    const int64_t batch = x.dim(0), m = x.dim(1), d = x.dim(2);
    Tensor<T> out = Tensor<T>::zeros({batch, d});
    T* o = out.mutable_data();
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < d; ++j) o[b * d + j] += x.data()[(b * m + i) * d + j];
    const T inv = T(1) / static_cast<T>(m);
    for (int64_t i = 0; i < batch * d; ++i) o[i] *= inv;
    OpBuilder<T>::attach(out, {x}, [x, batch, m, d, inv](typename Tensor<T>::Impl& self) {
        Tensor<T>::ensure_grad(*x.impl());
        auto& g = x.impl()->grad;
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < d; ++j) g[(b * m + i) * d + j] += self.grad[b * d + j] * inv;
    });
    return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros({1});
    T acc = T(0);
    for (int64_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
    out.mutable_data()[0] = acc;
    OpBuilder<T>::attach(out, {x}, [x](typename Tensor<T>::Impl& self) {
        Tensor<T>::ensure_grad(*x.impl());
        auto& g = x.impl()->grad;
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
    });
    return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    const T inv = T(1) / static_cast<T>(x.numel());
    return scale(sum_all(x), inv);
}

// Mean squared error over all elements of pred vs target.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    detail::require_same_dims(pred, target, "mse_loss");
    Tensor<T> out = Tensor<T>::zeros({1});
    T acc = T(0);
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const T e = pred.data()[i] - target.data()[i];
        acc += e * e;
    }
    const T inv = T(1) / static_cast<T>(pred.numel());
    out.mutable_data()[0] = acc * inv;
    OpBuilder<T>::attach(out, {pred, target}, [pred, target, inv](typename Tensor<T>::Impl& self) {
        const T c = T(2) * inv * self.grad[0];
        if (pred.requires_grad()) {
            Tensor<T>::ensure_grad(*pred.impl());
            auto& g = pred.impl()->grad;
            for (int64_t i = 0; i < pred.numel(); ++i)
                g[i] += c * (pred.data()[i] - target.data()[i]);
        }
        if (target.requires_grad()) {
            Tensor<T>::ensure_grad(*target.impl());
            auto& g = target.impl()->grad;
            for (int64_t i = 0; i < pred.numel(); ++i)
                g[i] -= c * (pred.data()[i] - target.data()[i]);
        }
    });
    return out;
}

// Mean cross-entropy of logits (B, C) against integer labels.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int64_t>& labels) {
    detail::require_rank(logits, 2, "softmax_cross_entropy");
    const int64_t batch = logits.dim(0), classes = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != batch)
        raise(ErrorCategory::Shape, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                        " labels for batch " + std::to_string(batch));
    for (int64_t y : labels)
        if (y < 0 || y >= classes)
            raise(ErrorCategory::Input, "softmax_cross_entropy: label " + std::to_string(y) +
                                            " outside [0," + std::to_string(classes) + ")");
    auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(batch * classes));
    T loss = T(0);
    for (int64_t b = 0; b < batch; ++b) {
        const T* lr = logits.data() + b * classes;
        T mx = lr[0];
        for (int64_t j = 1; j < classes; ++j) mx = std::max(mx, lr[j]);
        T sum = T(0);
        for (int64_t j = 0; j < classes; ++j) {
            const T e = std::exp(lr[j] - mx);
            (*probs)[static_cast<size_t>(b * classes + j)] = e;
            sum += e;
        }
        for (int64_t j = 0; j < classes; ++j) (*probs)[static_cast<size_t>(b * classes + j)] /= sum;
        loss -= std::log((*probs)[static_cast<size_t>(b * classes + labels[static_cast<size_t>(b)])]);
    }
    Tensor<T> out = Tensor<T>::zeros({1});
    out.mutable_data()[0] = loss / static_cast<T>(batch);
    OpBuilder<T>::check_finite(out, "softmax_cross_entropy");
    OpBuilder<T>::attach(out, {logits},
                         [logits, labels, probs, batch, classes](typename Tensor<T>::Impl& self) {
        Tensor<T>::ensure_grad(*logits.impl());
        auto& g = logits.impl()->grad;
        const T c = self.grad[0] / static_cast<T>(batch);
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t j = 0; j < classes; ++j) {
                T p = (*probs)[static_cast<size_t>(b * classes + j)];
                if (j == labels[static_cast<size_t>(b)]) p -= T(1);
                g[b * classes + j] += c * p;
            }
    });
    return out;
}

// ---- gradient-free constructors (data prep; outputs are plain leaves) ----

// Sinusoidal position/timestep table, rows x dim, dim even.
template <typename T>
Tensor<T> sinusoidal_table(int64_t rows, int64_t dim) {
    if (dim <= 0 || dim % 2 != 0)
        raise(ErrorCategory::Config, "sinusoidal_table: dim must be positive even, got " +
                                         std::to_string(dim));
    Tensor<T> out = Tensor<T>::zeros({rows, dim});
    T* o = out.mutable_data();
    for (int64_t n = 0; n < rows; ++n)
        for (int64_t i = 0; i < dim / 2; ++i) {
            const double freq = std::exp(-std::log(10000.0) * (2.0 * static_cast<double>(i) /
                                                               static_cast<double>(dim)));
            o[n * dim + 2 * i] = static_cast<T>(std::sin(static_cast<double>(n) * freq));
            o[n * dim + 2 * i + 1] = static_cast<T>(std::cos(static_cast<double>(n) * freq));
        }
    return out;
}

// Row lookup into a constant table: (N, d) + B indices -> leaf (B, d).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int64_t>& indices) {
    detail::require_rank(table, 2, "gather_rows");
    if (table.requires_grad())
        raise(ErrorCategory::Usage, "gather_rows expects a constant table");
    const int64_t n = table.dim(0), d = table.dim(1);
    Tensor<T> out = Tensor<T>::zeros({static_cast<int64_t>(indices.size()), d});
    T* o = out.mutable_data();
    for (size_t b = 0; b < indices.size(); ++b) {
        if (indices[b] < 0 || indices[b] >= n)
            raise(ErrorCategory::Input, "gather_rows: index " + std::to_string(indices[b]) +
                                            " outside [0," + std::to_string(n) + ")");
        std::copy_n(table.data() + indices[b] * d, d, o + static_cast<int64_t>(b) * d);
    }
    return out;
}

// Sliding-window flatten for convolution-as-matmul: (B, L, d) -> leaf
// (B, L - w + 1, w * d). Gradient-free: used on raw input frames only.
template <typename T>
Tensor<T> unfold_windows(const Tensor<T>& x, int64_t w) {
    detail::require_rank(x, 3, "unfold_windows");
    if (x.requires_grad())
        raise(ErrorCategory::Usage, "unfold_windows expects a constant input");
    const int64_t batch = x.dim(0), len = x.dim(1), d = x.dim(2);
    if (w < 1 || w > len)
        raise(ErrorCategory::Input, "unfold_windows: window " + std::to_string(w) +
                                        " invalid for length " + std::to_string(len));
    const int64_t out_len = len - w + 1;
    Tensor<T> out = Tensor<T>::zeros({batch, out_len, w * d});
    T* o = out.mutable_data();
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t r = 0; r < out_len; ++r)
            std::copy_n(x.data() + (b * len + r) * d, w * d, o + (b * out_len + r) * w * d);
    return out;
}

} // namespace admc::ops
