#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "mclner/common.hpp"

namespace mclner {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

// Dense row-major tensor. T is float in training (reductions still accumulate
// in double) and double in the finite-difference reference instantiation.
template <typename T>
struct TensorT {
    Shape shape;
    std::vector<T> v;

    TensorT() = default;
    explicit TensorT(Shape s) : shape(std::move(s)), v(shape_numel(shape), T(0)) {}
    TensorT(Shape s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
        if (v.size() != shape_numel(shape))
            throw ShapeError("tensor data size " + std::to_string(v.size()) +
                             " does not match shape " + shape_str(shape));
    }

    static TensorT zeros(Shape s) { return TensorT(std::move(s)); }
    static TensorT full(Shape s, T value) {
        TensorT t(std::move(s));
        for (auto& x : t.v) x = value;
        return t;
    }
    static TensorT scalar(T value) { return TensorT({1}, {value}); }

    std::size_t size() const { return v.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    // trailing axis extent; the "row" view used by last-axis ops
    std::size_t last_dim() const { return shape.empty() ? 1 : shape.back(); }
    std::size_t n_rows() const { return last_dim() ? size() / last_dim() : 0; }

    T& at2(std::size_t i, std::size_t j) { return v[i * shape[1] + j]; }
    T at2(std::size_t i, std::size_t j) const { return v[i * shape[1] + j]; }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

using Tensor = TensorT<float>;

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
}

// Fills with centered uniform values scaled by 1/sqrt(fan_in).
template <typename T>
void init_uniform_fanin(TensorT<T>& t, std::size_t fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
    for (auto& x : t.v) x = static_cast<T>(rng.uniform(-bound, bound));
}

// gemm with optional transposes; accumulates in double regardless of T.
template <typename T>
TensorT<T> gemm(bool ta, bool tb, const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("gemm: expected rank-2 operands, got " + shape_str(a.shape) + " and " +
                         shape_str(b.shape));
    std::size_t m = ta ? a.shape[1] : a.shape[0];
    std::size_t k = ta ? a.shape[0] : a.shape[1];
    std::size_t k2 = tb ? b.shape[1] : b.shape[0];
    std::size_t n = tb ? b.shape[0] : b.shape[1];
    if (k != k2)
        throw ShapeError("gemm: inner dimensions disagree, " + shape_str(a.shape) +
                         (ta ? "^T" : "") + " x " + shape_str(b.shape) + (tb ? "^T" : ""));
    TensorT<T> y({m, n});
    std::vector<double> acc(m * n, 0.0);
    // row-major loops ordered for contiguous access in the common (nn) case
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            double av = static_cast<double>(ta ? a.v[p * m + i] : a.v[i * k + p]);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                double bv = static_cast<double>(tb ? b.v[j * k + p] : b.v[p * n + j]);
                acc[i * n + j] += av * bv;
            }
        }
    }
    for (std::size_t i = 0; i < y.size(); ++i) y.v[i] = static_cast<T>(acc[i]);
    return y;
}

} // namespace mclner
