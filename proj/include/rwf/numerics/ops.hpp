#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rwf/numerics/matrix.hpp"

namespace rwf {

namespace detail {
inline void require_shape(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}
}  // namespace detail

// Set of classes a prediction may fall on. Masked-out classes behave as if
// their logit were -inf.
class ClassMask {
public:
    ClassMask() = default;
    explicit ClassMask(std::size_t num_classes, bool allowed = false) : allowed_(num_classes, allowed) {}

    static ClassMask all(std::size_t num_classes) { return ClassMask(num_classes, true); }
    template <typename Range>
    static ClassMask of(std::size_t num_classes, const Range& classes) {
        ClassMask m(num_classes);
        for (auto c : classes) m.allow(static_cast<std::size_t>(c));
        return m;
    }

    void allow(std::size_t c) {
        if (c >= allowed_.size()) throw std::out_of_range("ClassMask: class " + std::to_string(c) + " out of range");
        allowed_[c] = true;
    }
    bool allows(std::size_t c) const noexcept { return c < allowed_.size() && allowed_[c]; }
    std::size_t num_classes() const noexcept { return allowed_.size(); }
    std::size_t count() const noexcept { return static_cast<std::size_t>(std::count(allowed_.begin(), allowed_.end(), true)); }

private:
    std::vector<bool> allowed_;
};

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
    detail::require_shape(a.cols() == b.rows(), "matmul");
    BasicMatrix<T> out(a.rows(), b.cols());
    const std::size_t n = a.cols(), p = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        T* o = out.row(i).data();
        const T* ar = a.row(i).data();
        for (std::size_t k = 0; k < n; ++k) {
            const T aik = ar[k];
            const T* br = b.row(k).data();
            for (std::size_t j = 0; j < p; ++j) o[j] += aik * br[j];
        }
    }
    require_finite(out, "matmul");
    return out;
}

// a * b^T
template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
    detail::require_shape(a.cols() == b.cols(), "matmul_nt");
    BasicMatrix<T> out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const T* ar = a.row(i).data();
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const T* br = b.row(j).data();
            T s{0};
            for (std::size_t k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
            out(i, j) = s;
        }
    }
    require_finite(out, "matmul_nt");
    return out;
}

// a^T * b
template <typename T>
BasicMatrix<T> matmul_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
    detail::require_shape(a.rows() == b.rows(), "matmul_tn");
    BasicMatrix<T> out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const T* ar = a.row(k).data();
        const T* br = b.row(k).data();
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const T aki = ar[i];
            T* o = out.row(i).data();
            for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aki * br[j];
        }
    }
    require_finite(out, "matmul_tn");
    return out;
}

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& a) {
    BasicMatrix<T> out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

template <typename T>
void add_inplace(BasicMatrix<T>& acc, const BasicMatrix<T>& x, T scale = T{1}) {
    detail::require_shape(acc.rows() == x.rows() && acc.cols() == x.cols(), "add_inplace");
    auto a = acc.data();
    auto b = x.data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
}

template <typename T>
BasicMatrix<T> add(BasicMatrix<T> a, const BasicMatrix<T>& b) {
    add_inplace(a, b);
    return a;
}

// Adds a 1 x cols row vector to every row.
template <typename T>
void add_row_inplace(BasicMatrix<T>& acc, const BasicMatrix<T>& row) {
    detail::require_shape(row.rows() == 1 && row.cols() == acc.cols(), "add_row_inplace");
    for (std::size_t i = 0; i < acc.rows(); ++i)
        for (std::size_t j = 0; j < acc.cols(); ++j) acc(i, j) += row(0, j);
}

// Column sums as a 1 x cols row vector.
template <typename T>
BasicMatrix<T> column_sums(const BasicMatrix<T>& a) {
    BasicMatrix<T> out(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(0, j) += a(i, j);
    return out;
}

template <typename T>
T frobenius_norm(const BasicMatrix<T>& a) {
    T s{0};
    for (T v : a.data()) s += v * v;
    return std::sqrt(s);
}

template <typename T>
T max_abs_diff(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
    detail::require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "max_abs_diff");
    T m{0};
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

// Rows [begin, begin + count).
template <typename T>
BasicMatrix<T> slice_rows(const BasicMatrix<T>& a, std::size_t begin, std::size_t count) {
    detail::require_shape(begin + count <= a.rows(), "slice_rows");
    std::vector<T> data(a.data().begin() + static_cast<std::ptrdiff_t>(begin * a.cols()),
                        a.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * a.cols()));
    return BasicMatrix<T>(count, a.cols(), std::move(data));
}

// Columns [begin, begin + count).
template <typename T>
BasicMatrix<T> slice_cols(const BasicMatrix<T>& a, std::size_t begin, std::size_t count) {
    detail::require_shape(begin + count <= a.cols(), "slice_cols");
    BasicMatrix<T> out(a.rows(), count);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < count; ++j) out(i, j) = a(i, begin + j);
    return out;
}

template <typename T>
void set_cols(BasicMatrix<T>& dst, std::size_t begin, const BasicMatrix<T>& src) {
    detail::require_shape(dst.rows() == src.rows() && begin + src.cols() <= dst.cols(), "set_cols");
    for (std::size_t i = 0; i < src.rows(); ++i)
        for (std::size_t j = 0; j < src.cols(); ++j) dst(i, begin + j) = src(i, j);
}

// Row-wise concatenation [top; bottom].
template <typename T>
BasicMatrix<T> vstack(const BasicMatrix<T>& top, const BasicMatrix<T>& bottom) {
    if (top.rows() == 0) return bottom;
    if (bottom.rows() == 0) return top;
    detail::require_shape(top.cols() == bottom.cols(), "vstack");
    std::vector<T> data(top.data().begin(), top.data().end());
    data.insert(data.end(), bottom.data().begin(), bottom.data().end());
    return BasicMatrix<T>(top.rows() + bottom.rows(), top.cols(), std::move(data));
}

template <typename T>
T log_sum_exp(std::span<const T> x) {
    T mx = -std::numeric_limits<T>::infinity();
    for (T v : x) mx = std::max(mx, v);
    if (!std::isfinite(mx)) throw NumericError("log_sum_exp: non-finite input");
    T s{0};
    for (T v : x) s += std::exp(v - mx);
    return mx + std::log(s);
}

// softmax(scale * scores) applied to each row, max-subtracted.
template <typename T>
BasicMatrix<T> row_softmax(const BasicMatrix<T>& scores, T scale) {
    if (!(scale > T{0})) throw std::invalid_argument("row_softmax: scale must be > 0");
    require_finite(scores, "row_softmax");
    BasicMatrix<T> out(scores.rows(), scores.cols());
    for (std::size_t i = 0; i < scores.rows(); ++i) {
        auto in = scores.row(i);
        auto o = out.row(i);
        T mx = -std::numeric_limits<T>::infinity();
        for (T v : in) mx = std::max(mx, scale * v);
        T sum{0};
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp(scale * in[j] - mx);
            sum += o[j];
        }
        for (T& v : o) v /= sum;
    }
    require_finite(out, "row_softmax");
    return out;
}

// Given A = row_softmax(S, scale) and dL/dA, returns dL/dS.
template <typename T>
BasicMatrix<T> row_softmax_backward(const BasicMatrix<T>& probs, const BasicMatrix<T>& grad_probs, T scale) {
    detail::require_shape(probs.rows() == grad_probs.rows() && probs.cols() == grad_probs.cols(),
                          "row_softmax_backward");
    BasicMatrix<T> out(probs.rows(), probs.cols());
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        auto p = probs.row(i);
        auto g = grad_probs.row(i);
        T dot{0};
        for (std::size_t j = 0; j < p.size(); ++j) dot += p[j] * g[j];
        for (std::size_t j = 0; j < p.size(); ++j) out(i, j) = scale * p[j] * (g[j] - dot);
    }
    return out;
}

// Per-row statistics kept by layer_norm for the backward pass.
template <typename T>
struct LayerNormCache {
    BasicMatrix<T> normalized;  // (x - mean) / sqrt(var + eps)
    std::vector<T> inv_std;
};

template <typename T>
BasicMatrix<T> layer_norm(const BasicMatrix<T>& x, std::span<const T> gain, std::span<const T> bias, T eps,
                          LayerNormCache<T>* cache = nullptr) {
    if (gain.size() != x.cols() || bias.size() != x.cols())
        throw std::invalid_argument("layer_norm: gain/bias length mismatch");
    if (!(eps > T{0})) throw std::invalid_argument("layer_norm: eps must be > 0");
    const std::size_t n = x.cols();
    BasicMatrix<T> out(x.rows(), n);
    BasicMatrix<T> normalized(x.rows(), n);
    std::vector<T> inv_std(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto r = x.row(i);
        T mean{0};
        for (T v : r) mean += v;
        mean /= static_cast<T>(n);
        T var{0};
        for (T v : r) var += (v - mean) * (v - mean);
        var /= static_cast<T>(n);
        const T is = T{1} / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < n; ++j) {
            normalized(i, j) = (r[j] - mean) * is;
            out(i, j) = gain[j] * normalized(i, j) + bias[j];
        }
    }
    require_finite(out, "layer_norm");
    if (cache) {
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
    }
    return out;
}

// Returns dL/dx; accumulates dL/dgain and dL/dbias into the given spans
// (skipped when both are empty).
template <typename T>
BasicMatrix<T> layer_norm_backward(const LayerNormCache<T>& cache, std::span<const T> gain,
                                   const BasicMatrix<T>& grad_out, std::span<T> grad_gain, std::span<T> grad_bias) {
    const auto& xhat = cache.normalized;
    const std::size_t n = xhat.cols();
    const bool params = !grad_gain.empty() || !grad_bias.empty();
    if (params && (grad_gain.size() != n || grad_bias.size() != n))
        throw std::invalid_argument("layer_norm_backward: gradient length mismatch");
    BasicMatrix<T> dx(xhat.rows(), n);
    std::vector<T> dxhat(n);
    for (std::size_t i = 0; i < xhat.rows(); ++i) {
        T mean_d{0}, mean_dx{0};
        for (std::size_t j = 0; j < n; ++j) {
            const T g = grad_out(i, j);
            if (params) {
                grad_gain[j] += g * xhat(i, j);
                grad_bias[j] += g;
            }
            dxhat[j] = g * gain[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat(i, j);
        }
        mean_d /= static_cast<T>(n);
        mean_dx /= static_cast<T>(n);
        for (std::size_t j = 0; j < n; ++j)
            dx(i, j) = cache.inv_std[i] * (dxhat[j] - mean_d - xhat(i, j) * mean_dx);
    }
    return dx;
}

// Exact GELU, x * Phi(x).
template <typename T>
T gelu(T x) {
    return T{0.5} * x * (T{1} + std::erf(x / std::sqrt(T{2})));
}

template <typename T>
T gelu_derivative(T x) {
    const T cdf = T{0.5} * (T{1} + std::erf(x / std::sqrt(T{2})));
    const T pdf = std::exp(T{-0.5} * x * x) / std::sqrt(T{2} * T{3.14159265358979323846});
    return cdf + x * pdf;
}

// Mean negative log-likelihood of `labels` under softmax over the unmasked
// logits of each row. If grad is non-null it receives dLoss/dlogits (zero
// on masked classes).
template <typename T>
T cross_entropy(const BasicMatrix<T>& logits, std::span<const std::size_t> labels, const ClassMask& mask,
                BasicMatrix<T>* grad = nullptr) {
    if (labels.size() != logits.rows()) throw std::invalid_argument("cross_entropy: one label per row required");
    if (logits.rows() == 0) throw std::invalid_argument("cross_entropy: empty batch");
    if (mask.num_classes() != logits.cols()) throw std::invalid_argument("cross_entropy: mask width mismatch");
    require_finite(logits, "cross_entropy");
    if (grad) *grad = BasicMatrix<T>(logits.rows(), logits.cols());
    const T inv_b = T{1} / static_cast<T>(logits.rows());
    T total{0};
    std::vector<T> kept;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        if (!mask.allows(labels[i]))
            throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[i]) + " is masked out");
        kept.clear();
        for (std::size_t c = 0; c < logits.cols(); ++c)
            if (mask.allows(c)) kept.push_back(logits(i, c));
        const T lse = log_sum_exp<T>(kept);
        total += lse - logits(i, labels[i]);
        if (grad) {
            for (std::size_t c = 0; c < logits.cols(); ++c) {
                if (!mask.allows(c)) continue;
                (*grad)(i, c) = (std::exp(logits(i, c) - lse) - (c == labels[i] ? T{1} : T{0})) * inv_b;
            }
        }
    }
    const T loss = total * inv_b;
    if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
    return loss;
}

// Index of the largest unmasked logit; ties go to the smallest class id.
template <typename T>
std::size_t masked_argmax(std::span<const T> logits, const ClassMask& mask) {
    std::size_t best = logits.size();
    for (std::size_t c = 0; c < logits.size(); ++c) {
        if (!mask.allows(c)) continue;
        if (best == logits.size() || logits[c] > logits[best]) best = c;
    }
    if (best == logits.size()) throw std::invalid_argument("masked_argmax: mask allows no class");
    return best;
}

}  // namespace rwf
