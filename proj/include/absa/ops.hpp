#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "absa/autodiff.hpp"
#include "absa/error.hpp"
#include "absa/tensor.hpp"

namespace absa {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatView = Eigen::Map<const RowMat<T>>;
template <class T>
using MatRef = Eigen::Map<RowMat<T>>;

template <class T>
MatView<T> view(const T* p, std::size_t rows, std::size_t cols) {
    return MatView<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <class T>
MatRef<T> view(T* p, std::size_t rows, std::size_t cols) {
    return MatRef<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void require(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

inline std::string pair_str(const Shape& a, const Shape& b) {
    return shape_str(a) + " and " + shape_str(b);
}

/// Uniform double in [0,1) from the top 53 bits; platform independent.
inline double unit_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <class T>
void add_into(std::span<T> dst, std::span<const T> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and shape ops

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
    detail::require(shape_size(shape) == x.size(),
                    "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    Tensor<T> out(std::move(shape), x.value().values);
    const std::size_t xi = x.id();
    return x.tape().record("reshape", std::move(out), {x}, [xi](Tape<T>& t, std::size_t self) {
        detail::add_into(t.grad(xi), t.grad_view(self));
    });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    detail::require(a.shape() == b.shape(), "add: shape mismatch " + detail::pair_str(a.shape(), b.shape()));
    Tensor<T> out(a.shape());
    const auto& av = a.value().values;
    const auto& bv = b.value().values;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    const std::size_t ai = a.id(), bi = b.id();
    return a.tape().record("add", std::move(out), {a, b}, [ai, bi](Tape<T>& t, std::size_t self) {
        auto g = t.grad_view(self);
        if (t.requires_grad(ai)) detail::add_into(t.grad(ai), g);
        if (t.requires_grad(bi)) detail::add_into(t.grad(bi), g);
    });
}

/// Elementwise product of equally shaped tensors.
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    detail::require(a.shape() == b.shape(), "mul: shape mismatch " + detail::pair_str(a.shape(), b.shape()));
    Tensor<T> out(a.shape());
    const auto& av = a.value().values;
    const auto& bv = b.value().values;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    const std::size_t ai = a.id(), bi = b.id();
    return a.tape().record("mul", std::move(out), {a, b}, [ai, bi](Tape<T>& t, std::size_t self) {
        auto g = t.grad_view(self);
        if (t.requires_grad(ai)) {
            const auto& bv = t.value(bi).values;
            auto ga = t.grad(ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(bi)) {
            const auto& av = t.value(ai).values;
            auto gb = t.grad(bi);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

/// x[..., n] + bias[n], broadcast over leading rows.
template <class T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
    const std::size_t n = x.shape().back();
    detail::require(bias.size() == n, "add_bias: bias " + shape_str(bias.shape()) + " does not fit " +
                                          shape_str(x.shape()));
    Tensor<T> out = x.value();
    const std::size_t rows = leading_rows(out.shape);
    const auto& b = bias.value().values;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) out.values[r * n + j] += b[j];
    const std::size_t xi = x.id(), bi = bias.id();
    return x.tape().record("add_bias", std::move(out), {x, bias},
                           [xi, bi, rows, n](Tape<T>& t, std::size_t self) {
                               auto g = t.grad_view(self);
                               if (t.requires_grad(xi)) detail::add_into(t.grad(xi), g);
                               if (t.requires_grad(bi)) {
                                   auto gb = t.grad(bi);
                                   for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
                               }
                           });
}

template <class T>
Var<T> scale(Var<T> x, T s) {
    Tensor<T> out = x.value();
    for (auto& v : out.values) v *= s;
    const std::size_t xi = x.id();
    return x.tape().record("scale", std::move(out), {x}, [xi, s](Tape<T>& t, std::size_t self) {
        auto g = t.grad_view(self);
        auto gx = t.grad(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
    });
}

/// max(0, x); the subgradient at exactly 0 is 0.
template <class T>
Var<T> relu(Var<T> x) {
    Tensor<T> out = x.value();
    for (auto& v : out.values) v = v > T{0} ? v : T{0};
    const std::size_t xi = x.id();
    return x.tape().record("relu", std::move(out), {x}, [xi](Tape<T>& t, std::size_t self) {
        auto g = t.grad_view(self);
        const auto& xv = t.value(xi).values;
        auto gx = t.grad(xi);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > T{0}) gx[i] += g[i];
    });
}

template <class T>
Var<T> sum(Var<T> x) {
    T acc{0};
    for (T v : x.value().values) acc += v;
    const std::size_t xi = x.id();
    return x.tape().record("sum", Tensor<T>({1}, {acc}), {x}, [xi](Tape<T>& t, std::size_t self) {
        const T g = t.grad_view(self)[0];
        for (auto& v : t.grad(xi)) v += g;
    });
}

/// Inverted dropout: training zeroes each element with probability p and
/// scales survivors by 1/(1-p); evaluation is the identity.
template <class T>
Var<T> dropout(Var<T> x, double p, bool training, std::mt19937_64& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: probability must be in [0,1), got " + std::to_string(p));
    if (!training || p == 0.0) return x;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    std::vector<T> mask(x.size());
    for (auto& m : mask) m = detail::unit_uniform(rng) < p ? T{0} : keep_scale;
    Tensor<T> out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= mask[i];
    const std::size_t xi = x.id();
    return x.tape().record("dropout", std::move(out), {x},
                           [xi, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
                               auto g = t.grad_view(self);
                               auto gx = t.grad(xi);
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] += mask[i] * g[i];
                           });
}

// ---------------------------------------------------------------------------
// Matrix products

/// a[m x k] * b[k x n]
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    detail::require(as.size() == 2 && bs.size() == 2 && as[1] == bs[0],
                    "matmul: incompatible shapes " + detail::pair_str(as, bs));
    const std::size_t m = as[0], k = as[1], n = bs[1];
    Tensor<T> out({m, n});
    detail::view(out.values.data(), m, n).noalias() =
        detail::view(a.value().values.data(), m, k) * detail::view(b.value().values.data(), k, n);
    const std::size_t ai = a.id(), bi = b.id();
    return a.tape().record("matmul", std::move(out), {a, b}, [ai, bi, m, k, n](Tape<T>& t, std::size_t self) {
        auto g = detail::view(t.grad_view(self).data(), m, n);
        if (t.requires_grad(ai))
            detail::view(t.grad(ai).data(), m, k).noalias() +=
                g * detail::view(t.value(bi).values.data(), k, n).transpose();
        if (t.requires_grad(bi))
            detail::view(t.grad(bi).data(), k, n).noalias() +=
                detail::view(t.value(ai).values.data(), m, k).transpose() * g;
    });
}

/// a[m x k] * b[n x k]^T, the layout of weight matrices stored [out x in].
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    detail::require(as.size() == 2 && bs.size() == 2 && as[1] == bs[1],
                    "matmul_nt: incompatible shapes " + detail::pair_str(as, bs));
    const std::size_t m = as[0], k = as[1], n = bs[0];
    Tensor<T> out({m, n});
    detail::view(out.values.data(), m, n).noalias() =
        detail::view(a.value().values.data(), m, k) * detail::view(b.value().values.data(), n, k).transpose();
    const std::size_t ai = a.id(), bi = b.id();
    return a.tape().record("matmul_nt", std::move(out), {a, b},
                           [ai, bi, m, k, n](Tape<T>& t, std::size_t self) {
                               auto g = detail::view(t.grad_view(self).data(), m, n);
                               if (t.requires_grad(ai))
                                   detail::view(t.grad(ai).data(), m, k).noalias() +=
                                       g * detail::view(t.value(bi).values.data(), n, k);
                               if (t.requires_grad(bi))
                                   detail::view(t.grad(bi).data(), n, k).noalias() +=
                                       g.transpose() * detail::view(t.value(ai).values.data(), m, k);
                           });
}

/// Batched product over the leading dimension: a[G x m x k] * b[G x k x n],
/// or with `transpose_b` a[G x m x k] * b[G x n x k]^T.
template <class T>
Var<T> bmm(Var<T> a, Var<T> b, bool transpose_b = false) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    const bool ok = as.size() == 3 && bs.size() == 3 && as[0] == bs[0] &&
                    (transpose_b ? as[2] == bs[2] : as[2] == bs[1]);
    detail::require(ok, "bmm: incompatible shapes " + detail::pair_str(as, bs));
    const std::size_t G = as[0], m = as[1], k = as[2], n = transpose_b ? bs[1] : bs[2];
    Tensor<T> out({G, m, n});
    const T* ap = a.value().values.data();
    const T* bp = b.value().values.data();
    for (std::size_t g = 0; g < G; ++g) {
        auto A = detail::view(ap + g * m * k, m, k);
        auto C = detail::view(out.values.data() + g * m * n, m, n);
        if (transpose_b)
            C.noalias() = A * detail::view(bp + g * n * k, n, k).transpose();
        else
            C.noalias() = A * detail::view(bp + g * k * n, k, n);
    }
    const std::size_t ai = a.id(), bi = b.id();
    return a.tape().record("bmm", std::move(out), {a, b},
                           [ai, bi, G, m, k, n, transpose_b](Tape<T>& t, std::size_t self) {
                               const T* gp = t.grad_view(self).data();
                               const T* av = t.value(ai).values.data();
                               const T* bv = t.value(bi).values.data();
                               const bool ga = t.requires_grad(ai), gb = t.requires_grad(bi);
                               T* da = ga ? t.grad(ai).data() : nullptr;
                               T* db = gb ? t.grad(bi).data() : nullptr;
                               for (std::size_t g = 0; g < G; ++g) {
                                   auto dC = detail::view(gp + g * m * n, m, n);
                                   auto A = detail::view(av + g * m * k, m, k);
                                   if (transpose_b) {
                                       auto B = detail::view(bv + g * n * k, n, k);
                                       if (ga) detail::view(da + g * m * k, m, k).noalias() += dC * B;
                                       if (gb) detail::view(db + g * n * k, n, k).noalias() += dC.transpose() * A;
                                   } else {
                                       auto B = detail::view(bv + g * k * n, k, n);
                                       if (ga) detail::view(da + g * m * k, m, k).noalias() += dC * B.transpose();
                                       if (gb) detail::view(db + g * k * n, k, n).noalias() += A.transpose() * dC;
                                   }
                               }
                           });
}

// ---------------------------------------------------------------------------
// Normalisation and probabilities

/// Softmax over the last dimension with max subtraction.
template <class T>
Var<T> softmax_rows(Var<T> x) {
    if (x.shape().empty() || x.shape().back() == 0) throw DimensionError("softmax_rows: empty class dimension");
    const std::size_t c = x.shape().back();
    const std::size_t rows = leading_rows(x.shape());
    Tensor<T> out = x.value();
    for (std::size_t r = 0; r < rows; ++r) {
        T* row = out.values.data() + r * c;
        const T mx = *std::max_element(row, row + c);
        T total{0};
        for (std::size_t j = 0; j < c; ++j) total += (row[j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < c; ++j) row[j] /= total;
    }
    const std::size_t xi = x.id();
    return x.tape().record("softmax_rows", std::move(out), {x}, [xi, rows, c](Tape<T>& t, std::size_t self) {
        auto g = t.grad_view(self);
        const auto& y = t.value(self).values;
        auto gx = t.grad(xi);
        for (std::size_t r = 0; r < rows; ++r) {
            T dot{0};
            for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
            for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
        }
    });
}

/// Attention softmax over scores[G x Lq x Lk]. `key_mask` has one row of
/// length Lk per batch element and group g reads row g / groups_per_row.
/// Masked keys receive probability exactly 0, which equals an additive -inf.
template <class T>
Var<T> masked_softmax(Var<T> scores, std::span<const T> key_mask, std::size_t groups_per_row) {
    const Shape& s = scores.shape();
    detail::require(s.size() == 3, "masked_softmax: expected rank-3 scores, got " + shape_str(s));
    const std::size_t G = s[0], Lq = s[1], Lk = s[2];
    detail::require(groups_per_row >= 1 && G % groups_per_row == 0 && key_mask.size() == (G / groups_per_row) * Lk,
                    "masked_softmax: mask does not match scores " + shape_str(s));
    Tensor<T> out = scores.value();
    for (std::size_t g = 0; g < G; ++g) {
        const T* mask = key_mask.data() + (g / groups_per_row) * Lk;
        for (std::size_t q = 0; q < Lq; ++q) {
            T* row = out.values.data() + (g * Lq + q) * Lk;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < Lk; ++j)
                if (mask[j] != T{0}) mx = std::max(mx, row[j]);
            if (mx == -std::numeric_limits<T>::infinity())
                throw ContractError("masked_softmax: every key position is masked");
            T total{0};
            for (std::size_t j = 0; j < Lk; ++j) {
                row[j] = mask[j] != T{0} ? std::exp(row[j] - mx) : T{0};
                total += row[j];
            }
            for (std::size_t j = 0; j < Lk; ++j) row[j] /= total;
        }
    }
    const std::size_t xi = scores.id();
    const std::size_t rows = G * Lq;
    return scores.tape().record("masked_softmax", std::move(out), {scores},
                                [xi, rows, Lk](Tape<T>& t, std::size_t self) {
                                    auto g = t.grad_view(self);
                                    const auto& y = t.value(self).values;
                                    auto gx = t.grad(xi);
                                    for (std::size_t r = 0; r < rows; ++r) {
                                        const std::size_t o = r * Lk;
                                        T dot{0};
                                        for (std::size_t j = 0; j < Lk; ++j) dot += g[o + j] * y[o + j];
                                        for (std::size_t j = 0; j < Lk; ++j) gx[o + j] += y[o + j] * (g[o + j] - dot);
                                    }
                                });
}

/// Row-wise layer normalisation over the last dimension, then gamma * xhat + beta.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-12)) {
    const std::size_t d = x.shape().back();
    detail::require(gamma.size() == d && beta.size() == d,
                    "layer_norm: affine parameters do not match " + shape_str(x.shape()));
    const std::size_t rows = leading_rows(x.shape());
    const auto& xv = x.value().values;
    const auto& gv = gamma.value().values;
    const auto& bv = beta.value().values;
    Tensor<T> out(x.shape());
    std::vector<T> xhat(xv.size());
    std::vector<T> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xv.data() + r * d;
        T mean{0};
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var{0};
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<T>(d);
        inv_std[r] = T{1} / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (row[j] - mean) * inv_std[r];
            out.values[r * d + j] = gv[j] * xhat[r * d + j] + bv[j];
        }
    }
    const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
    return x.tape().record(
        "layer_norm", std::move(out), {x, gamma, beta},
        [xi, gi, bi, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, std::size_t self) {
            auto g = t.grad_view(self);
            if (t.requires_grad(gi)) {
                auto gg = t.grad(gi);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
            }
            if (t.requires_grad(bi)) {
                auto gb = t.grad(bi);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
            }
            if (t.requires_grad(xi)) {
                const auto& gam = t.value(gi).values;
                auto gx = t.grad(xi);
                std::vector<T> dxhat(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    T mean_d{0}, mean_dx{0};
                    for (std::size_t j = 0; j < d; ++j) {
                        dxhat[j] = g[r * d + j] * gam[j];
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xhat[r * d + j];
                    }
                    mean_d /= static_cast<T>(d);
                    mean_dx /= static_cast<T>(d);
                    for (std::size_t j = 0; j < d; ++j)
                        gx[r * d + j] += inv_std[r] * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
                }
            }
        });
}

/// Mean over the batch of -log softmax(logits)[i][label_i].
template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::size_t> labels) {
    const Shape& s = logits.shape();
    detail::require(s.size() == 2 && s[0] == labels.size() && s[0] > 0,
                    "cross_entropy: logits " + shape_str(s) + " vs " + std::to_string(labels.size()) + " labels");
    const std::size_t n = s[0], c = s[1];
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= c) {
            throw LabelError("cross_entropy: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                             " outside [0," + std::to_string(c) + ")");
        }
    }
    const auto& z = logits.value().values;
    std::vector<T> probs(n * c);
    T loss{0};
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = z.data() + i * c;
        const T mx = *std::max_element(row, row + c);
        T total{0};
        for (std::size_t j = 0; j < c; ++j) total += (probs[i * c + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= total;
        loss += mx + std::log(total) - row[labels[i]];
    }
    loss /= static_cast<T>(n);
    const std::size_t li = logits.id();
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    return logits.tape().record("cross_entropy", Tensor<T>({1}, {loss}), {logits},
                                [li, n, c, probs = std::move(probs), lab = std::move(lab)](Tape<T>& t, std::size_t self) {
                                    const T g = t.grad_view(self)[0] / static_cast<T>(n);
                                    auto gx = t.grad(li);
                                    for (std::size_t i = 0; i < n; ++i)
                                        for (std::size_t j = 0; j < c; ++j)
                                            gx[i * c + j] += g * (probs[i * c + j] - (j == lab[i] ? T{1} : T{0}));
                                });
}

// ---------------------------------------------------------------------------
// Sequence ops

/// Rows of table[V x D] selected by ids; gradients scatter-add back.
template <class T>
Var<T> embedding(Var<T> table, std::span<const std::size_t> ids) {
    const Shape& s = table.shape();
    detail::require(s.size() == 2, "embedding: table must be rank 2, got " + shape_str(s));
    const std::size_t V = s[0], D = s[1];
    Tensor<T> out({ids.size(), D});
    const auto& tv = table.value().values;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= V) throw LookupError("embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(V));
        std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[i] * D), D, out.values.begin() + static_cast<std::ptrdiff_t>(i * D));
    }
    const std::size_t ti = table.id();
    std::vector<std::size_t> idv(ids.begin(), ids.end());
    return table.tape().record("embedding", std::move(out), {table},
                               [ti, D, idv = std::move(idv)](Tape<T>& t, std::size_t self) {
                                   auto g = t.grad_view(self);
                                   auto gt = t.grad(ti);
                                   for (std::size_t i = 0; i < idv.size(); ++i)
                                       for (std::size_t j = 0; j < D; ++j) gt[idv[i] * D + j] += g[i * D + j];
                               });
}

/// Rows of x[N x C] at the given indices, giving [R x C].
template <class T>
Var<T> select_rows(Var<T> x, std::span<const std::size_t> rows) {
    detail::require(x.shape().size() == 2, "select_rows: expected rank 2, got " + shape_str(x.shape()));
    const std::size_t N = x.shape()[0], C = x.shape()[1];
    Tensor<T> out({rows.size(), C});
    const auto& xv = x.value().values;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        detail::require(rows[i] < N, "select_rows: row " + std::to_string(rows[i]) + " outside " + shape_str(x.shape()));
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(rows[i] * C), C, out.values.begin() + static_cast<std::ptrdiff_t>(i * C));
    }
    const std::size_t xi = x.id();
    std::vector<std::size_t> rv(rows.begin(), rows.end());
    return x.tape().record("select_rows", std::move(out), {x}, [xi, C, rv = std::move(rv)](Tape<T>& t, std::size_t self) {
        auto g = t.grad_view(self);
        auto gx = t.grad(xi);
        for (std::size_t i = 0; i < rv.size(); ++i)
            for (std::size_t j = 0; j < C; ++j) gx[rv[i] * C + j] += g[i * C + j];
    });
}

/// Multiplies each row of x (width = last dim) by mask[row]. Used to zero
/// padding positions so they behave like the zero padding of a convolution.
template <class T>
Var<T> mask_rows(Var<T> x, std::span<const T> mask) {
    const std::size_t C = x.shape().back();
    const std::size_t rows = leading_rows(x.shape());
    detail::require(mask.size() == rows, "mask_rows: " + std::to_string(mask.size()) + " mask entries for " +
                                             shape_str(x.shape()));
    Tensor<T> out = x.value();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < C; ++j) out.values[r * C + j] *= mask[r];
    const std::size_t xi = x.id();
    std::vector<T> m(mask.begin(), mask.end());
    return x.tape().record("mask_rows", std::move(out), {x}, [xi, C, m = std::move(m)](Tape<T>& t, std::size_t self) {
        auto g = t.grad_view(self);
        auto gx = t.grad(xi);
        for (std::size_t r = 0; r < m.size(); ++r)
            for (std::size_t j = 0; j < C; ++j) gx[r * C + j] += m[r] * g[r * C + j];
    });
}

/// [B*L x D] -> [B*H x L x D/H], head h of example b at group b*H + h.
template <class T>
Var<T> split_heads(Var<T> x, std::size_t batch, std::size_t len, std::size_t heads) {
    const Shape& s = x.shape();
    detail::require(s.size() == 2 && s[0] == batch * len && heads >= 1 && s[1] % heads == 0,
                    "split_heads: cannot split " + shape_str(s) + " into " + std::to_string(heads) + " heads");
    const std::size_t D = s[1], dh = D / heads;
    Tensor<T> out({batch * heads, len, dh});
    const auto& xv = x.value().values;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t h = 0; h < heads; ++h)
                std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((b * len + l) * D + h * dh), dh,
                            out.values.begin() + static_cast<std::ptrdiff_t>(((b * heads + h) * len + l) * dh));
    const std::size_t xi = x.id();
    return x.tape().record("split_heads", std::move(out), {x},
                           [xi, batch, len, heads, D, dh](Tape<T>& t, std::size_t self) {
                               auto g = t.grad_view(self);
                               auto gx = t.grad(xi);
                               for (std::size_t b = 0; b < batch; ++b)
                                   for (std::size_t l = 0; l < len; ++l)
                                       for (std::size_t h = 0; h < heads; ++h)
                                           for (std::size_t j = 0; j < dh; ++j)
                                               gx[(b * len + l) * D + h * dh + j] += g[((b * heads + h) * len + l) * dh + j];
                           });
}

/// Inverse of split_heads: [B*H x L x dh] -> [B*L x H*dh].
template <class T>
Var<T> merge_heads(Var<T> x, std::size_t batch, std::size_t heads) {
    const Shape& s = x.shape();
    detail::require(s.size() == 3 && s[0] == batch * heads, "merge_heads: unexpected shape " + shape_str(s));
    const std::size_t len = s[1], dh = s[2], D = heads * dh;
    Tensor<T> out({batch * len, D});
    const auto& xv = x.value().values;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t h = 0; h < heads; ++h)
                std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(((b * heads + h) * len + l) * dh), dh,
                            out.values.begin() + static_cast<std::ptrdiff_t>((b * len + l) * D + h * dh));
    const std::size_t xi = x.id();
    return x.tape().record("merge_heads", std::move(out), {x},
                           [xi, batch, len, heads, D, dh](Tape<T>& t, std::size_t self) {
                               auto g = t.grad_view(self);
                               auto gx = t.grad(xi);
                               for (std::size_t b = 0; b < batch; ++b)
                                   for (std::size_t l = 0; l < len; ++l)
                                       for (std::size_t h = 0; h < heads; ++h)
                                           for (std::size_t j = 0; j < dh; ++j)
                                               gx[((b * heads + h) * len + l) * dh + j] += g[(b * len + l) * D + h * dh + j];
                           });
}

/// Same-padded 1D convolution. x is [T x C_in] or [B x T x C_in], kernels
/// [k x C_in x C_out], bias [C_out]:
///   out[t][o] = bias[o] + sum_{d,i} x[t + d - k/2][i] * kernels[d][i][o]
/// with x taken as zero outside [0, T). Implemented as im2col + one GEMM.
template <class T>
Var<T> conv1d(Var<T> x, Var<T> kernels, Var<T> bias) {
    const Shape& xs = x.shape();
    const Shape& ks = kernels.shape();
    detail::require(xs.size() == 2 || xs.size() == 3, "conv1d: input must be [T x C] or [B x T x C], got " + shape_str(xs));
    detail::require(ks.size() == 3, "conv1d: kernels must be [k x C_in x C_out], got " + shape_str(ks));
    const std::size_t k = ks[0];
    if (k % 2 == 0) throw ConfigError("conv1d: kernel width must be odd, got " + std::to_string(k));
    const std::size_t B = xs.size() == 3 ? xs[0] : 1;
    const std::size_t Tn = xs[xs.size() - 2], Ci = xs.back(), Co = ks[2];
    detail::require(ks[1] == Ci, "conv1d: kernels " + shape_str(ks) + " do not accept input " + shape_str(xs));
    detail::require(bias.size() == Co, "conv1d: bias " + shape_str(bias.shape()) + " does not match " + shape_str(ks));
    const std::size_t half = k / 2, width = k * Ci;

    std::vector<T> cols(B * Tn * width, T{0});
    const auto& xv = x.value().values;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < Tn; ++t)
            for (std::size_t d = 0; d < k; ++d) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + d) - static_cast<std::ptrdiff_t>(half);
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(Tn)) continue;
                std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((b * Tn + static_cast<std::size_t>(src)) * Ci), Ci,
                            cols.begin() + static_cast<std::ptrdiff_t>((b * Tn + t) * width + d * Ci));
            }
    Shape out_shape = xs.size() == 3 ? Shape{B, Tn, Co} : Shape{Tn, Co};
    Tensor<T> out(out_shape);
    auto O = detail::view(out.values.data(), B * Tn, Co);
    O.noalias() = detail::view(cols.data(), B * Tn, width) * detail::view(kernels.value().values.data(), width, Co);
    const auto& bv = bias.value().values;
    for (std::size_t r = 0; r < B * Tn; ++r)
        for (std::size_t o = 0; o < Co; ++o) out.values[r * Co + o] += bv[o];

    const std::size_t xi = x.id(), ki = kernels.id(), bi = bias.id();
    return x.tape().record(
        "conv1d", std::move(out), {x, kernels, bias},
        [xi, ki, bi, B, Tn, Ci, Co, k, half, width, cols = std::move(cols)](Tape<T>& t, std::size_t self) {
            const std::size_t rows = B * Tn;
            auto G = detail::view(t.grad_view(self).data(), rows, Co);
            if (t.requires_grad(bi)) {
                auto gb = t.grad(bi);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t o = 0; o < Co; ++o) gb[o] += G(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(o));
            }
            if (t.requires_grad(ki))
                detail::view(t.grad(ki).data(), width, Co).noalias() += detail::view(cols.data(), rows, width).transpose() * G;
            if (t.requires_grad(xi)) {
                detail::RowMat<T> dcols = G * detail::view(t.value(ki).values.data(), width, Co).transpose();
                auto gx = t.grad(xi);
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t tt = 0; tt < Tn; ++tt)
                        for (std::size_t d = 0; d < k; ++d) {
                            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tt + d) - static_cast<std::ptrdiff_t>(half);
                            if (src < 0 || src >= static_cast<std::ptrdiff_t>(Tn)) continue;
                            const T* from = dcols.data() + (b * Tn + tt) * width + d * Ci;
                            T* to = gx.data() + (b * Tn + static_cast<std::size_t>(src)) * Ci;
                            for (std::size_t i = 0; i < Ci; ++i) to[i] += from[i];
                        }
            }
        });
}

/// Max over time of x[B x T x C] restricted to positions with mask != 0.
/// Ties go to the earliest position.
template <class T>
Var<T> masked_max_pool(Var<T> x, std::span<const T> mask) {
    const Shape& s = x.shape();
    detail::require(s.size() == 3 && mask.size() == s[0] * s[1],
                    "masked_max_pool: mask of " + std::to_string(mask.size()) + " does not match " + shape_str(s));
    const std::size_t B = s[0], Tn = s[1], C = s[2];
    Tensor<T> out({B, C});
    std::vector<std::size_t> arg(B * C);
    const auto& xv = x.value().values;
    for (std::size_t b = 0; b < B; ++b) {
        bool any = false;
        for (std::size_t t = 0; t < Tn; ++t) {
            if (mask[b * Tn + t] == T{0}) continue;
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t idx = (b * Tn + t) * C + c;
                if (!any || xv[idx] > out.values[b * C + c]) {
                    out.values[b * C + c] = xv[idx];
                    arg[b * C + c] = idx;
                }
            }
            any = true;
        }
        if (!any) throw ContractError("masked_max_pool: example " + std::to_string(b) + " has no unmasked positions");
    }
    const std::size_t xi = x.id();
    return x.tape().record("masked_max_pool", std::move(out), {x}, [xi, arg = std::move(arg)](Tape<T>& t, std::size_t self) {
        auto g = t.grad_view(self);
        auto gx = t.grad(xi);
        for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += g[i];
    });
}

/// Mean over time of x[B x T x C] across positions with mask != 0.
template <class T>
Var<T> masked_mean_pool(Var<T> x, std::span<const T> mask) {
    const Shape& s = x.shape();
    detail::require(s.size() == 3 && mask.size() == s[0] * s[1],
                    "masked_mean_pool: mask of " + std::to_string(mask.size()) + " does not match " + shape_str(s));
    const std::size_t B = s[0], Tn = s[1], C = s[2];
    std::vector<T> weight(B * Tn, T{0});
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t count = 0;
        for (std::size_t t = 0; t < Tn; ++t) count += mask[b * Tn + t] != T{0};
        if (count == 0) throw ContractError("masked_mean_pool: example " + std::to_string(b) + " has an empty mask");
        for (std::size_t t = 0; t < Tn; ++t)
            if (mask[b * Tn + t] != T{0}) weight[b * Tn + t] = T{1} / static_cast<T>(count);
    }
    Tensor<T> out({B, C});
    const auto& xv = x.value().values;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < Tn; ++t) {
            const T w = weight[b * Tn + t];
            if (w == T{0}) continue;
            for (std::size_t c = 0; c < C; ++c) out.values[b * C + c] += w * xv[(b * Tn + t) * C + c];
        }
    const std::size_t xi = x.id();
    return x.tape().record("masked_mean_pool", std::move(out), {x},
                           [xi, B, Tn, C, weight = std::move(weight)](Tape<T>& t, std::size_t self) {
                               auto g = t.grad_view(self);
                               auto gx = t.grad(xi);
                               for (std::size_t b = 0; b < B; ++b)
                                   for (std::size_t tt = 0; tt < Tn; ++tt) {
                                       const T w = weight[b * Tn + tt];
                                       if (w == T{0}) continue;
                                       for (std::size_t c = 0; c < C; ++c) gx[(b * Tn + tt) * C + c] += w * g[b * C + c];
                                   }
                           });
}

/// y = x W^T + b for weights stored [out x in]; x may have any leading shape.
template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
    const Shape xs = x.shape();
    const std::size_t in = xs.back();
    Var<T> flat = xs.size() == 2 ? x : reshape(x, Shape{leading_rows(xs), in});
    Var<T> y = add_bias(matmul_nt(flat, weight), bias);
    if (xs.size() == 2) return y;
    Shape ys = xs;
    ys.back() = weight.shape()[0];
    return reshape(y, ys);
}

}  // namespace absa
