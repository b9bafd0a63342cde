#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "mclner/common.hpp"
#include "mclner/tensor.hpp"

namespace mclner {

// Reverse-mode tape over whole-tensor operations. Creation order is a
// topological order, so backward is a single reverse sweep. A tape is confined
// to one thread for its forward+backward lifetime.
template <typename T>
class TapeT {
public:
    using Index = std::size_t;

    struct Var {
        Index id = 0;
    };

    struct Node {
        TensorT<T> value;
        TensorT<T> grad; // sized lazily at backward
        std::function<void(TapeT&, Index)> back;
    };

    Var leaf(TensorT<T> value) {
        nodes_.push_back(Node{std::move(value), {}, nullptr});
        return Var{nodes_.size() - 1};
    }

    const TensorT<T>& value(Var v) const { return nodes_[v.id].value; }
    const TensorT<T>& grad(Var v) const { return nodes_[v.id].grad; }
    std::size_t size() const { return nodes_.size(); }

    void reset() {
        nodes_.clear();
        ran_backward_ = false;
    }

    // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. root must be a
    // scalar; a second backward without reset() is an error.
    void backward(Var root) {
        if (nodes_[root.id].value.size() != 1)
            throw ContractError("backward: root is not scalar, shape " +
                                shape_str(nodes_[root.id].value.shape));
        if (ran_backward_) throw ContractError("backward: tape already swept; reset() first");
        ran_backward_ = true;
        for (auto& n : nodes_) {
            n.grad = TensorT<T>(n.value.shape);
        }
        nodes_[root.id].grad.v[0] = T(1);
        for (Index i = root.id + 1; i-- > 0;) {
            if (nodes_[i].back) nodes_[i].back(*this, i);
        }
    }

    // --- graph construction helpers -----------------------------------------

    Var make(TensorT<T> value, std::function<void(TapeT&, Index)> back) {
        nodes_.push_back(Node{std::move(value), {}, std::move(back)});
        return Var{nodes_.size() - 1};
    }

    TensorT<T>& grad_ref(Index id) { return nodes_[id].grad; }
    const TensorT<T>& value_ref(Index id) const { return nodes_[id].value; }

private:
    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

// --- elementwise -------------------------------------------------------------

template <typename T>
typename TapeT<T>::Var add(TapeT<T>& t, typename TapeT<T>::Var a, typename TapeT<T>::Var b) {
    require_same_shape(t.value(a), t.value(b), "add");
    TensorT<T> y = t.value(a);
    for (std::size_t i = 0; i < y.size(); ++i) y.v[i] += t.value(b).v[i];
    return t.make(std::move(y), [a, b](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        auto& ga = tp.grad_ref(a.id);
        auto& gb = tp.grad_ref(b.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.v[i] += g.v[i];
            gb.v[i] += g.v[i];
        }
    });
}

template <typename T>
typename TapeT<T>::Var sub(TapeT<T>& t, typename TapeT<T>::Var a, typename TapeT<T>::Var b) {
    require_same_shape(t.value(a), t.value(b), "sub");
    TensorT<T> y = t.value(a);
    for (std::size_t i = 0; i < y.size(); ++i) y.v[i] -= t.value(b).v[i];
    return t.make(std::move(y), [a, b](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        auto& ga = tp.grad_ref(a.id);
        auto& gb = tp.grad_ref(b.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.v[i] += g.v[i];
            gb.v[i] -= g.v[i];
        }
    });
}

template <typename T>
typename TapeT<T>::Var mul(TapeT<T>& t, typename TapeT<T>::Var a, typename TapeT<T>::Var b) {
    require_same_shape(t.value(a), t.value(b), "mul");
    TensorT<T> y = t.value(a);
    for (std::size_t i = 0; i < y.size(); ++i) y.v[i] *= t.value(b).v[i];
    return t.make(std::move(y), [a, b](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        const auto& av = tp.value_ref(a.id);
        const auto& bv = tp.value_ref(b.id);
        auto& ga = tp.grad_ref(a.id);
        auto& gb = tp.grad_ref(b.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.v[i] += g.v[i] * bv.v[i];
            gb.v[i] += g.v[i] * av.v[i];
        }
    });
}

template <typename T>
typename TapeT<T>::Var scale(TapeT<T>& t, typename TapeT<T>::Var a, double c) {
    TensorT<T> y = t.value(a);
    for (auto& x : y.v) x = static_cast<T>(x * c);
    return t.make(std::move(y), [a, c](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        auto& ga = tp.grad_ref(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga.v[i] += static_cast<T>(g.v[i] * c);
    });
}

template <typename T>
typename TapeT<T>::Var add_const(TapeT<T>& t, typename TapeT<T>::Var a, double c) {
    TensorT<T> y = t.value(a);
    for (auto& x : y.v) x = static_cast<T>(x + c);
    return t.make(std::move(y), [a](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        auto& ga = tp.grad_ref(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i];
    });
}

namespace detail {

template <typename T, typename Fwd, typename Dfn>
typename TapeT<T>::Var unary_op(TapeT<T>& t, typename TapeT<T>::Var a, Fwd f, Dfn dfdx) {
    TensorT<T> y = t.value(a);
    for (auto& x : y.v) x = static_cast<T>(f(static_cast<double>(x)));
    return t.make(std::move(y), [a, dfdx](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        const auto& xv = tp.value_ref(a.id);
        const auto& yv = tp.value_ref(self);
        auto& ga = tp.grad_ref(a.id);
        for (std::size_t i = 0; i < g.size(); ++i)
            ga.v[i] += static_cast<T>(static_cast<double>(g.v[i]) *
                                      dfdx(static_cast<double>(xv.v[i]), static_cast<double>(yv.v[i])));
    });
}

} // namespace detail

template <typename T>
typename TapeT<T>::Var relu(TapeT<T>& t, typename TapeT<T>::Var a) {
    return detail::unary_op(
        t, a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

template <typename T>
typename TapeT<T>::Var tanh_op(TapeT<T>& t, typename TapeT<T>::Var a) {
    return detail::unary_op(
        t, a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

template <typename T>
typename TapeT<T>::Var exp_op(TapeT<T>& t, typename TapeT<T>::Var a) {
    return detail::unary_op(
        t, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

template <typename T>
typename TapeT<T>::Var log_op(TapeT<T>& t, typename TapeT<T>::Var a) {
    return detail::unary_op(
        t, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

template <typename T>
typename TapeT<T>::Var sqrt_op(TapeT<T>& t, typename TapeT<T>::Var a) {
    return detail::unary_op(
        t, a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / (y > 0.0 ? y : 1e-12); });
}

// --- shape -------------------------------------------------------------------

template <typename T>
typename TapeT<T>::Var reshape(TapeT<T>& t, typename TapeT<T>::Var a, Shape s) {
    if (shape_numel(s) != t.value(a).size())
        throw ShapeError("reshape: cannot view " + shape_str(t.value(a).shape) + " as " +
                         shape_str(s));
    TensorT<T> y = t.value(a);
    y.shape = std::move(s);
    return t.make(std::move(y), [a](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        auto& ga = tp.grad_ref(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i];
    });
}

// 1-D concatenation
template <typename T>
typename TapeT<T>::Var concat_vec(TapeT<T>& t, typename TapeT<T>::Var a, typename TapeT<T>::Var b) {
    if (t.value(a).rank() != 1 || t.value(b).rank() != 1)
        throw ShapeError("concat_vec: expected vectors, got " + shape_str(t.value(a).shape) +
                         " and " + shape_str(t.value(b).shape));
    std::size_t p = t.value(a).size(), q = t.value(b).size();
    TensorT<T> y({p + q});
    std::copy(t.value(a).v.begin(), t.value(a).v.end(), y.v.begin());
    std::copy(t.value(b).v.begin(), t.value(b).v.end(), y.v.begin() + p);
    return t.make(std::move(y), [a, b, p, q](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        auto& ga = tp.grad_ref(a.id);
        auto& gb = tp.grad_ref(b.id);
        for (std::size_t i = 0; i < p; ++i) ga.v[i] += g.v[i];
        for (std::size_t i = 0; i < q; ++i) gb.v[i] += g.v[p + i];
    });
}

// stacks same-width matrices on the row axis
template <typename T>
typename TapeT<T>::Var concat_rows(TapeT<T>& t, typename TapeT<T>::Var a, typename TapeT<T>::Var b) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[1])
        throw ShapeError("concat_rows: incompatible " + shape_str(av.shape) + " and " +
                         shape_str(bv.shape));
    TensorT<T> y({av.shape[0] + bv.shape[0], av.shape[1]});
    std::copy(av.v.begin(), av.v.end(), y.v.begin());
    std::copy(bv.v.begin(), bv.v.end(), y.v.begin() + av.size());
    std::size_t na = av.size(), nb = bv.size();
    return t.make(std::move(y), [a, b, na, nb](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        auto& ga = tp.grad_ref(a.id);
        auto& gb = tp.grad_ref(b.id);
        for (std::size_t i = 0; i < na; ++i) ga.v[i] += g.v[i];
        for (std::size_t i = 0; i < nb; ++i) gb.v[i] += g.v[na + i];
    });
}

template <typename T>
typename TapeT<T>::Var pack_scalars(TapeT<T>& t, const std::vector<typename TapeT<T>::Var>& xs) {
    TensorT<T> y({xs.size()});
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (t.value(xs[i]).size() != 1) throw ShapeError("pack_scalars: element is not scalar");
        y.v[i] = t.value(xs[i]).v[0];
    }
    auto ids = xs;
    return t.make(std::move(y), [ids](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        for (std::size_t i = 0; i < ids.size(); ++i) tp.grad_ref(ids[i].id).v[0] += g.v[i];
    });
}

template <typename T>
typename TapeT<T>::Var pack_rows(TapeT<T>& t, const std::vector<typename TapeT<T>::Var>& xs) {
    if (xs.empty()) throw ShapeError("pack_rows: empty list");
    std::size_t d = t.value(xs[0]).size();
    TensorT<T> y({xs.size(), d});
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (t.value(xs[i]).rank() != 1 || t.value(xs[i]).size() != d)
            throw ShapeError("pack_rows: row " + std::to_string(i) + " has shape " +
                             shape_str(t.value(xs[i]).shape));
        std::copy(t.value(xs[i]).v.begin(), t.value(xs[i]).v.end(), y.v.begin() + i * d);
    }
    auto ids = xs;
    return t.make(std::move(y), [ids, d](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            auto& gi = tp.grad_ref(ids[i].id);
            for (std::size_t k = 0; k < d; ++k) gi.v[k] += g.v[i * d + k];
        }
    });
}

// columns [from, to) of a matrix
template <typename T>
typename TapeT<T>::Var slice_cols(TapeT<T>& t, typename TapeT<T>::Var a, std::size_t from,
                                  std::size_t to) {
    const auto& av = t.value(a);
    if (av.rank() != 2 || from >= to || to > av.shape[1])
        throw ShapeError("slice_cols: bad range [" + std::to_string(from) + "," +
                         std::to_string(to) + ") for " + shape_str(av.shape));
    std::size_t m = av.shape[0], w = av.shape[1], d = to - from;
    TensorT<T> y({m, d});
    for (std::size_t r = 0; r < m; ++r)
        std::copy(&av.v[r * w + from], &av.v[r * w + to], &y.v[r * d]);
    return t.make(std::move(y), [a, from, m, w, d](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        auto& ga = tp.grad_ref(a.id);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t k = 0; k < d; ++k) ga.v[r * w + from + k] += g.v[r * d + k];
    });
}

// picks rows of a matrix in the given order (repeats allowed)
template <typename T>
typename TapeT<T>::Var gather_rows(TapeT<T>& t, typename TapeT<T>::Var a,
                                   const std::vector<std::size_t>& rows) {
    const auto& av = t.value(a);
    if (av.rank() != 2) throw ShapeError("gather_rows: expected matrix, got " + shape_str(av.shape));
    std::size_t d = av.shape[1];
    TensorT<T> y({rows.size(), d});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= av.shape[0]) throw ShapeError("gather_rows: row index out of range");
        std::copy(&av.v[rows[r] * d], &av.v[rows[r] * d] + d, &y.v[r * d]);
    }
    return t.make(std::move(y), [a, rows, d](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        auto& ga = tp.grad_ref(a.id);
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t k = 0; k < d; ++k) ga.v[rows[r] * d + k] += g.v[r * d + k];
    });
}

template <typename T>
typename TapeT<T>::Var pick(TapeT<T>& t, typename TapeT<T>::Var a, std::size_t idx) {
    if (idx >= t.value(a).size()) throw ShapeError("pick: index out of range");
    TensorT<T> y = TensorT<T>::scalar(t.value(a).v[idx]);
    return t.make(std::move(y), [a, idx](TapeT<T>& tp, std::size_t self) {
        tp.grad_ref(a.id).v[idx] += tp.grad_ref(self).v[0];
    });
}

// --- matrix ------------------------------------------------------------------

template <typename T>
typename TapeT<T>::Var matmul(TapeT<T>& t, typename TapeT<T>::Var a, typename TapeT<T>::Var b,
                              bool ta = false, bool tb = false) {
    if (ta && tb) throw ShapeError("matmul: double transpose is not supported");
    TensorT<T> y = gemm(ta, tb, t.value(a), t.value(b));
    return t.make(std::move(y), [a, b, ta, tb](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        const auto& av = tp.value_ref(a.id);
        const auto& bv = tp.value_ref(b.id);
        TensorT<T> da, db;
        if (!ta && !tb) { // y = a b
            da = gemm(false, true, g, bv);
            db = gemm(true, false, av, g);
        } else if (ta) { // y = a^T b
            da = gemm(false, true, bv, g);
            db = gemm(false, false, av, g);
        } else { // y = a b^T
            da = gemm(false, false, g, bv);
            db = gemm(true, false, g, av);
        }
        auto& ga = tp.grad_ref(a.id);
        auto& gb = tp.grad_ref(b.id);
        for (std::size_t i = 0; i < da.size(); ++i) ga.v[i] += da.v[i];
        for (std::size_t i = 0; i < db.size(); ++i) gb.v[i] += db.v[i];
    });
}

// y = x w + b over rows; x: (m,in), w: (in,out), b: (out)
template <typename T>
typename TapeT<T>::Var linear(TapeT<T>& t, typename TapeT<T>::Var x, typename TapeT<T>::Var w,
                              typename TapeT<T>::Var b) {
    const auto& xv = t.value(x);
    const auto& wv = t.value(w);
    const auto& bv = t.value(b);
    if (xv.rank() != 2 || wv.rank() != 2 || xv.shape[1] != wv.shape[0] || bv.rank() != 1 ||
        bv.shape[0] != wv.shape[1])
        throw ShapeError("linear: incompatible shapes " + shape_str(xv.shape) + ", " +
                         shape_str(wv.shape) + ", " + shape_str(bv.shape));
    TensorT<T> y = gemm(false, false, xv, wv);
    std::size_t m = y.shape[0], out = y.shape[1];
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < out; ++j) y.v[i * out + j] += bv.v[j];
    return t.make(std::move(y), [x, w, b](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        const auto& xv = tp.value_ref(x.id);
        const auto& wv = tp.value_ref(w.id);
        TensorT<T> dx = gemm(false, true, g, wv);
        TensorT<T> dw = gemm(true, false, xv, g);
        auto& gx = tp.grad_ref(x.id);
        auto& gw = tp.grad_ref(w.id);
        auto& gb = tp.grad_ref(b.id);
        for (std::size_t i = 0; i < dx.size(); ++i) gx.v[i] += dx.v[i];
        for (std::size_t i = 0; i < dw.size(); ++i) gw.v[i] += dw.v[i];
        std::size_t m = g.shape[0], out = g.shape[1];
        for (std::size_t j = 0; j < out; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) acc += static_cast<double>(g.v[i * out + j]);
            gb.v[j] += static_cast<T>(acc);
        }
    });
}

// y[r] = x[r] * g + b elementwise over rows (layer-norm style affine)
template <typename T>
typename TapeT<T>::Var affine_rows(TapeT<T>& t, typename TapeT<T>::Var x, typename TapeT<T>::Var gain,
                                   typename TapeT<T>::Var bias) {
    const auto& xv = t.value(x);
    const auto& gv = t.value(gain);
    const auto& bv = t.value(bias);
    std::size_t d = xv.last_dim();
    if (gv.size() != d || bv.size() != d)
        throw ShapeError("affine_rows: gain/bias length " + shape_str(gv.shape) +
                         " does not match last axis of " + shape_str(xv.shape));
    TensorT<T> y = xv;
    std::size_t rows = xv.n_rows();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < d; ++k) y.v[r * d + k] = xv.v[r * d + k] * gv.v[k] + bv.v[k];
    return t.make(std::move(y), [x, gain, bias, rows, d](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        const auto& xv = tp.value_ref(x.id);
        const auto& gv = tp.value_ref(gain.id);
        auto& gx = tp.grad_ref(x.id);
        auto& gg = tp.grad_ref(gain.id);
        auto& gb = tp.grad_ref(bias.id);
        for (std::size_t k = 0; k < d; ++k) {
            double accg = 0.0, accb = 0.0;
            for (std::size_t r = 0; r < rows; ++r) {
                double gr = static_cast<double>(g.v[r * d + k]);
                gx.v[r * d + k] += static_cast<T>(gr * static_cast<double>(gv.v[k]));
                accg += gr * static_cast<double>(xv.v[r * d + k]);
                accb += gr;
            }
            gg.v[k] += static_cast<T>(accg);
            gb.v[k] += static_cast<T>(accb);
        }
    });
}

// --- last-axis normalizations -------------------------------------------------

// (x - mean) / sqrt(var + eps) per row over the last axis
template <typename T>
typename TapeT<T>::Var standardize_rows(TapeT<T>& t, typename TapeT<T>::Var x, double eps = 1e-5) {
    const auto& xv = t.value(x);
    std::size_t d = xv.last_dim(), rows = xv.n_rows();
    if (d == 0) throw ShapeError("standardize_rows: empty last axis");
    TensorT<T> y = xv;
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double mu = 0.0;
        for (std::size_t k = 0; k < d; ++k) mu += static_cast<double>(xv.v[r * d + k]);
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            double c = static_cast<double>(xv.v[r * d + k]) - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t k = 0; k < d; ++k)
            y.v[r * d + k] = static_cast<T>((static_cast<double>(xv.v[r * d + k]) - mu) * is);
    }
    return t.make(std::move(y), [x, rows, d, inv_std](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        const auto& yv = tp.value_ref(self);
        auto& gx = tp.grad_ref(x.id);
        for (std::size_t r = 0; r < rows; ++r) {
            double gbar = 0.0, gydot = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                gbar += static_cast<double>(g.v[r * d + k]);
                gydot += static_cast<double>(g.v[r * d + k]) * static_cast<double>(yv.v[r * d + k]);
            }
            gbar /= static_cast<double>(d);
            gydot /= static_cast<double>(d);
            for (std::size_t k = 0; k < d; ++k) {
                double gi = static_cast<double>(g.v[r * d + k]);
                double yi = static_cast<double>(yv.v[r * d + k]);
                gx.v[r * d + k] += static_cast<T>(inv_std[r] * (gi - gbar - yi * gydot));
            }
        }
    });
}

// numerically stable softmax over the last axis
template <typename T>
typename TapeT<T>::Var softmax_rows(TapeT<T>& t, typename TapeT<T>::Var x) {
    const auto& xv = t.value(x);
    std::size_t d = xv.last_dim(), rows = xv.n_rows();
    TensorT<T> y = xv;
    for (std::size_t r = 0; r < rows; ++r) {
        double mx = -1e300;
        for (std::size_t k = 0; k < d; ++k) mx = std::max(mx, static_cast<double>(xv.v[r * d + k]));
        double z = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            double e = std::exp(static_cast<double>(xv.v[r * d + k]) - mx);
            y.v[r * d + k] = static_cast<T>(e);
            z += e;
        }
        for (std::size_t k = 0; k < d; ++k) y.v[r * d + k] = static_cast<T>(y.v[r * d + k] / z);
    }
    return t.make(std::move(y), [x, rows, d](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        const auto& yv = tp.value_ref(self);
        auto& gx = tp.grad_ref(x.id);
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k)
                dot += static_cast<double>(g.v[r * d + k]) * static_cast<double>(yv.v[r * d + k]);
            for (std::size_t k = 0; k < d; ++k) {
                double yi = static_cast<double>(yv.v[r * d + k]);
                gx.v[r * d + k] +=
                    static_cast<T>(yi * (static_cast<double>(g.v[r * d + k]) - dot));
            }
        }
    });
}

// stable log-sum-exp over the last axis; output drops that axis (rank-1 result)
template <typename T>
typename TapeT<T>::Var logsumexp_rows(TapeT<T>& t, typename TapeT<T>::Var x) {
    const auto& xv = t.value(x);
    std::size_t d = xv.last_dim(), rows = xv.n_rows();
    TensorT<T> y({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        double mx = -1e300;
        for (std::size_t k = 0; k < d; ++k) mx = std::max(mx, static_cast<double>(xv.v[r * d + k]));
        double z = 0.0;
        for (std::size_t k = 0; k < d; ++k) z += std::exp(static_cast<double>(xv.v[r * d + k]) - mx);
        y.v[r] = static_cast<T>(mx + std::log(z));
    }
    return t.make(std::move(y), [x, rows, d](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        const auto& xv = tp.value_ref(x.id);
        const auto& yv = tp.value_ref(self);
        auto& gx = tp.grad_ref(x.id);
        for (std::size_t r = 0; r < rows; ++r) {
            double gr = static_cast<double>(g.v[r]);
            for (std::size_t k = 0; k < d; ++k)
                gx.v[r * d + k] += static_cast<T>(
                    gr * std::exp(static_cast<double>(xv.v[r * d + k]) - static_cast<double>(yv.v[r])));
        }
    });
}

// --- reductions ----------------------------------------------------------------

template <typename T>
typename TapeT<T>::Var sum_all(TapeT<T>& t, typename TapeT<T>::Var x) {
    const auto& xv = t.value(x);
    double acc = 0.0;
    for (T v : xv.v) acc += static_cast<double>(v);
    return t.make(TensorT<T>::scalar(static_cast<T>(acc)), [x](TapeT<T>& tp, std::size_t self) {
        const T g = tp.grad_ref(self).v[0];
        auto& gx = tp.grad_ref(x.id);
        for (auto& v : gx.v) v += g;
    });
}

template <typename T>
typename TapeT<T>::Var mean_all(TapeT<T>& t, typename TapeT<T>::Var x) {
    const auto& xv = t.value(x);
    if (xv.size() == 0) throw ShapeError("mean_all: empty tensor");
    double acc = 0.0;
    for (T v : xv.v) acc += static_cast<double>(v);
    double inv = 1.0 / static_cast<double>(xv.size());
    return t.make(TensorT<T>::scalar(static_cast<T>(acc * inv)),
                  [x, inv](TapeT<T>& tp, std::size_t self) {
                      const double g = static_cast<double>(tp.grad_ref(self).v[0]) * inv;
                      auto& gx = tp.grad_ref(x.id);
                      for (auto& v : gx.v) v += static_cast<T>(g);
                  });
}

// column mean of a (m,d) matrix -> (d)
template <typename T>
typename TapeT<T>::Var mean_rows(TapeT<T>& t, typename TapeT<T>::Var x) {
    const auto& xv = t.value(x);
    if (xv.rank() != 2) throw ShapeError("mean_rows: expected matrix, got " + shape_str(xv.shape));
    std::size_t m = xv.shape[0], d = xv.shape[1];
    TensorT<T> y({d});
    for (std::size_t k = 0; k < d; ++k) {
        double acc = 0.0;
        for (std::size_t r = 0; r < m; ++r) acc += static_cast<double>(xv.v[r * d + k]);
        y.v[k] = static_cast<T>(acc / static_cast<double>(m));
    }
    return t.make(std::move(y), [x, m, d](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        auto& gx = tp.grad_ref(x.id);
        double inv = 1.0 / static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t k = 0; k < d; ++k)
                gx.v[r * d + k] += static_cast<T>(static_cast<double>(g.v[k]) * inv);
    });
}

// --- similarity ------------------------------------------------------------------

// cosine similarity of u against every row of m: (d), (k,d) -> (k).
// Zero-norm inputs are a numeric error (cosine undefined).
template <typename T>
typename TapeT<T>::Var cosine_many(TapeT<T>& t, typename TapeT<T>::Var u, typename TapeT<T>::Var m) {
    const auto& uv = t.value(u);
    const auto& mv = t.value(m);
    if (uv.rank() != 1 || mv.rank() != 2 || mv.shape[1] != uv.shape[0])
        throw ShapeError("cosine_many: incompatible " + shape_str(uv.shape) + " and " +
                         shape_str(mv.shape));
    std::size_t d = uv.shape[0], k = mv.shape[0];
    double un2 = 0.0;
    for (T v : uv.v) un2 += static_cast<double>(v) * static_cast<double>(v);
    double un = std::sqrt(un2);
    if (un < 1e-12) throw NumericError("cosine: zero-norm left operand");
    TensorT<T> y({k});
    std::vector<double> row_norm(k);
    for (std::size_t r = 0; r < k; ++r) {
        double dot = 0.0, n2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double a = static_cast<double>(uv.v[i]);
            double b = static_cast<double>(mv.v[r * d + i]);
            dot += a * b;
            n2 += b * b;
        }
        double nr = std::sqrt(n2);
        if (nr < 1e-12) throw NumericError("cosine: zero-norm row " + std::to_string(r));
        row_norm[r] = nr;
        y.v[r] = static_cast<T>(dot / (un * nr));
    }
    return t.make(std::move(y), [u, m, d, k, un, row_norm](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        const auto& uv = tp.value_ref(u.id);
        const auto& mv = tp.value_ref(m.id);
        const auto& yv = tp.value_ref(self);
        auto& gu = tp.grad_ref(u.id);
        auto& gm = tp.grad_ref(m.id);
        // d cos / du = v/(|u||v|) - cos * u/|u|^2 ; symmetric for rows
        for (std::size_t r = 0; r < k; ++r) {
            double gr = static_cast<double>(g.v[r]);
            if (gr == 0.0) continue;
            double c = static_cast<double>(yv.v[r]);
            double nr = row_norm[r];
            for (std::size_t i = 0; i < d; ++i) {
                double a = static_cast<double>(uv.v[i]);
                double b = static_cast<double>(mv.v[r * d + i]);
                gu.v[i] += static_cast<T>(gr * (b / (un * nr) - c * a / (un * un)));
                gm.v[r * d + i] += static_cast<T>(gr * (a / (un * nr) - c * b / (nr * nr)));
            }
        }
    });
}

template <typename T>
typename TapeT<T>::Var cosine(TapeT<T>& t, typename TapeT<T>::Var u, typename TapeT<T>::Var v) {
    auto m = reshape(t, v, Shape{1, t.value(v).size()});
    return cosine_many(t, u, m);
}

// --- dropout ------------------------------------------------------------------

// Inverted dropout with an explicit seeded mask; rate 0 is the identity.
template <typename T>
typename TapeT<T>::Var dropout(TapeT<T>& t, typename TapeT<T>::Var x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) throw ConfigError("dropout: rate must be < 1");
    const auto& xv = t.value(x);
    std::vector<T> mask(xv.size());
    double keep = 1.0 - rate;
    for (auto& mv : mask) mv = rng.next_double() < rate ? T(0) : static_cast<T>(1.0 / keep);
    TensorT<T> y = xv;
    for (std::size_t i = 0; i < y.size(); ++i) y.v[i] *= mask[i];
    return t.make(std::move(y), [x, mask](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        auto& gx = tp.grad_ref(x.id);
        for (std::size_t i = 0; i < g.size(); ++i) gx.v[i] += g.v[i] * mask[i];
    });
}

// --- grid kernels ----------------------------------------------------------------

// r[i,j,k] = sum_{a,b} ti[i,a] w1[a,k,b] tj[j,b]; ti,tj: (n,d), w1: (d,K,d) -> (n,n,K)
template <typename T>
typename TapeT<T>::Var bilinear_grid(TapeT<T>& t, typename TapeT<T>::Var ti,
                                     typename TapeT<T>::Var w1, typename TapeT<T>::Var tj) {
    const auto& a = t.value(ti);
    const auto& w = t.value(w1);
    const auto& b = t.value(tj);
    if (a.rank() != 2 || b.rank() != 2 || w.rank() != 3 || w.shape[0] != a.shape[1] ||
        w.shape[2] != b.shape[1] || a.shape[0] != b.shape[0])
        throw ShapeError("bilinear_grid: incompatible " + shape_str(a.shape) + ", " +
                         shape_str(w.shape) + ", " + shape_str(b.shape));
    std::size_t n = a.shape[0], d = a.shape[1], K = w.shape[1], db = b.shape[1];
    // A[i,k,b] = sum_a ti[i,a] w1[a,k,b]
    std::vector<double> A(n * K * db, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ax = 0; ax < d; ++ax) {
            double av = static_cast<double>(a.v[i * d + ax]);
            if (av == 0.0) continue;
            const T* wrow = &w.v[ax * K * db];
            double* arow = &A[i * K * db];
            for (std::size_t kb = 0; kb < K * db; ++kb) arow[kb] += av * static_cast<double>(wrow[kb]);
        }
    TensorT<T> y({n, n, K});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < K; ++k) {
                double acc = 0.0;
                const double* arow = &A[(i * K + k) * db];
                const T* brow = &b.v[j * db];
                for (std::size_t bx = 0; bx < db; ++bx)
                    acc += arow[bx] * static_cast<double>(brow[bx]);
                y.v[(i * n + j) * K + k] = static_cast<T>(acc);
            }
    return t.make(std::move(y), [ti, w1, tj, n, d, K, db](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        const auto& a = tp.value_ref(ti.id);
        const auto& w = tp.value_ref(w1.id);
        const auto& b = tp.value_ref(tj.id);
        auto& ga = tp.grad_ref(ti.id);
        auto& gw = tp.grad_ref(w1.id);
        auto& gb = tp.grad_ref(tj.id);
        // M[i,k,b] = sum_j g[i,j,k] tj[j,b]
        std::vector<double> M(n * K * db, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const T* grow = &g.v[(i * n + j) * K];
                const T* brow = &b.v[j * db];
                for (std::size_t k = 0; k < K; ++k) {
                    double gv = static_cast<double>(grow[k]);
                    if (gv == 0.0) continue;
                    double* mrow = &M[(i * K + k) * db];
                    for (std::size_t bx = 0; bx < db; ++bx)
                        mrow[bx] += gv * static_cast<double>(brow[bx]);
                }
            }
        // dTi[i,a] = sum_{k,b} w1[a,k,b] M[i,k,b];  dW1[a,k,b] += sum_i ti[i,a] M[i,k,b]
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t ax = 0; ax < d; ++ax) {
                const T* wrow = &w.v[ax * K * db];
                const double* mrow = &M[i * K * db];
                double acc = 0.0;
                for (std::size_t kb = 0; kb < K * db; ++kb)
                    acc += static_cast<double>(wrow[kb]) * mrow[kb];
                ga.v[i * d + ax] += static_cast<T>(acc);
                double av = static_cast<double>(a.v[i * d + ax]);
                if (av != 0.0) {
                    T* gwrow = &gw.v[ax * K * db];
                    for (std::size_t kb = 0; kb < K * db; ++kb)
                        gwrow[kb] += static_cast<T>(av * mrow[kb]);
                }
            }
        // dTj[j,b] = sum_{i,k} g[i,j,k] A[i,k,b] with A[i,k,b] = sum_a ti[i,a] w1[a,k,b]
        std::vector<double> A(n * K * db, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t ax = 0; ax < d; ++ax) {
                double av = static_cast<double>(a.v[i * d + ax]);
                if (av == 0.0) continue;
                const T* wrow = &w.v[ax * K * db];
                double* arow = &A[i * K * db];
                for (std::size_t kb = 0; kb < K * db; ++kb)
                    arow[kb] += av * static_cast<double>(wrow[kb]);
            }
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t bx = 0; bx < db; ++bx) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const T* grow = &g.v[(i * n + j) * K];
                    const double* arow = &A[i * K * db];
                    for (std::size_t k = 0; k < K; ++k)
                        acc += static_cast<double>(grow[k]) * arow[k * db + bx];
                }
                gb.v[j * db + bx] += static_cast<T>(acc);
            }
    });
}

// c[i,j,k] = u[i,k] + v[j,k] + b[k]; u,v: (n,K), b: (K) -> (n,n,K)
template <typename T>
typename TapeT<T>::Var grid_outer_sum(TapeT<T>& t, typename TapeT<T>::Var u,
                                      typename TapeT<T>::Var v, typename TapeT<T>::Var b) {
    const auto& uv = t.value(u);
    const auto& vv = t.value(v);
    const auto& bv = t.value(b);
    if (uv.rank() != 2 || !uv.same_shape(vv) || bv.size() != uv.shape[1])
        throw ShapeError("grid_outer_sum: incompatible " + shape_str(uv.shape) + ", " +
                         shape_str(vv.shape) + ", " + shape_str(bv.shape));
    std::size_t n = uv.shape[0], K = uv.shape[1];
    TensorT<T> y({n, n, K});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < K; ++k)
                y.v[(i * n + j) * K + k] = uv.v[i * K + k] + vv.v[j * K + k] + bv.v[k];
    return t.make(std::move(y), [u, v, b, n, K](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        auto& gu = tp.grad_ref(u.id);
        auto& gv = tp.grad_ref(v.id);
        auto& gb = tp.grad_ref(b.id);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t k = 0; k < K; ++k) {
                    T gx = g.v[(i * n + j) * K + k];
                    gu.v[i * K + k] += gx;
                    gv.v[j * K + k] += gx;
                    gb.v[k] += gx;
                }
    });
}

// r[i,j,:] = gamma[i] * s[j] + lambda[i]; all operands (n,d) -> (n,n,d)
template <typename T>
typename TapeT<T>::Var grid_modulate(TapeT<T>& t, typename TapeT<T>::Var gamma,
                                     typename TapeT<T>::Var s, typename TapeT<T>::Var lambda) {
    const auto& gv = t.value(gamma);
    const auto& sv = t.value(s);
    const auto& lv = t.value(lambda);
    if (gv.rank() != 2 || !gv.same_shape(sv) || !gv.same_shape(lv))
        throw ShapeError("grid_modulate: incompatible " + shape_str(gv.shape) + ", " +
                         shape_str(sv.shape) + ", " + shape_str(lv.shape));
    std::size_t n = gv.shape[0], d = gv.shape[1];
    TensorT<T> y({n, n, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < d; ++k)
                y.v[(i * n + j) * d + k] = gv.v[i * d + k] * sv.v[j * d + k] + lv.v[i * d + k];
    return t.make(std::move(y), [gamma, s, lambda, n, d](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        const auto& gv = tp.value_ref(gamma.id);
        const auto& sv = tp.value_ref(s.id);
        auto& gg = tp.grad_ref(gamma.id);
        auto& gs = tp.grad_ref(s.id);
        auto& gl = tp.grad_ref(lambda.id);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t k = 0; k < d; ++k) {
                    double gx = static_cast<double>(g.v[(i * n + j) * d + k]);
                    gg.v[i * d + k] += static_cast<T>(gx * static_cast<double>(sv.v[j * d + k]));
                    gs.v[j * d + k] += static_cast<T>(gx * static_cast<double>(gv.v[i * d + k]));
                    gl.v[i * d + k] += static_cast<T>(gx);
                }
    });
}

// picks cells (i,j) from an (n,n,K) grid -> (m,K)
template <typename T>
typename TapeT<T>::Var gather_cells(TapeT<T>& t, typename TapeT<T>::Var grid,
                                    const std::vector<std::pair<std::size_t, std::size_t>>& cells) {
    const auto& gv = t.value(grid);
    if (gv.rank() != 3 || gv.shape[0] != gv.shape[1])
        throw ShapeError("gather_cells: expected (n,n,K) grid, got " + shape_str(gv.shape));
    std::size_t n = gv.shape[0], K = gv.shape[2];
    TensorT<T> y({cells.size(), K});
    for (std::size_t m = 0; m < cells.size(); ++m) {
        auto [i, j] = cells[m];
        if (i >= n || j >= n) throw ShapeError("gather_cells: cell out of range");
        std::copy(&gv.v[(i * n + j) * K], &gv.v[(i * n + j) * K] + K, &y.v[m * K]);
    }
    return t.make(std::move(y), [grid, cells, n, K](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        auto& gg = tp.grad_ref(grid.id);
        for (std::size_t m = 0; m < cells.size(); ++m) {
            auto [i, j] = cells[m];
            for (std::size_t k = 0; k < K; ++k) gg.v[(i * n + j) * K + k] += g.v[m * K + k];
        }
    });
}

// row r of the output is the mean of table rows listed in groups[r]
template <typename T>
typename TapeT<T>::Var embed_mean(TapeT<T>& t, typename TapeT<T>::Var table,
                                  const std::vector<std::vector<std::uint32_t>>& groups) {
    const auto& tv = t.value(table);
    if (tv.rank() != 2) throw ShapeError("embed_mean: table must be (V,d)");
    std::size_t V = tv.shape[0], d = tv.shape[1];
    TensorT<T> y({groups.size(), d});
    for (std::size_t r = 0; r < groups.size(); ++r) {
        if (groups[r].empty()) throw ShapeError("embed_mean: empty bucket group");
        double inv = 1.0 / static_cast<double>(groups[r].size());
        for (std::uint32_t g : groups[r]) {
            if (g >= V) throw ShapeError("embed_mean: bucket out of range");
            for (std::size_t k = 0; k < d; ++k)
                y.v[r * d + k] += static_cast<T>(static_cast<double>(tv.v[g * d + k]) * inv);
        }
    }
    return t.make(std::move(y), [table, groups, d](TapeT<T>& tp, std::size_t self) {
        const auto& g = tp.grad_ref(self);
        auto& gt = tp.grad_ref(table.id);
        for (std::size_t r = 0; r < groups.size(); ++r) {
            double inv = 1.0 / static_cast<double>(groups[r].size());
            for (std::uint32_t b : groups[r])
                for (std::size_t k = 0; k < d; ++k)
                    gt.v[b * d + k] += static_cast<T>(static_cast<double>(g.v[r * d + k]) * inv);
        }
    });
}

// mean over all cells of -log(p[gold] + 1e-12); probs: (..., R) with one gold
// class index per row
template <typename T>
typename TapeT<T>::Var nll_rows(TapeT<T>& t, typename TapeT<T>::Var probs,
                                const std::vector<std::size_t>& gold) {
    const auto& pv = t.value(probs);
    std::size_t R = pv.last_dim(), rows = pv.n_rows();
    if (gold.size() != rows)
        throw ShapeError("nll_rows: " + std::to_string(gold.size()) + " labels for " +
                         std::to_string(rows) + " rows");
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (gold[r] >= R) throw ShapeError("nll_rows: class index out of range");
        acc -= std::log(static_cast<double>(pv.v[r * R + gold[r]]) + 1e-12);
    }
    double inv = 1.0 / static_cast<double>(rows);
    return t.make(TensorT<T>::scalar(static_cast<T>(acc * inv)),
                  [probs, gold, R, inv](TapeT<T>& tp, std::size_t self) {
                      const double g = static_cast<double>(tp.grad_ref(self).v[0]);
                      const auto& pv = tp.value_ref(probs.id);
                      auto& gp = tp.grad_ref(probs.id);
                      for (std::size_t r = 0; r < gold.size(); ++r) {
                          double p = static_cast<double>(pv.v[r * R + gold[r]]) + 1e-12;
                          gp.v[r * R + gold[r]] += static_cast<T>(-g * inv / p);
                      }
                  });
}

// mean squared difference against a constant target (same shape)
template <typename T>
typename TapeT<T>::Var mse_const(TapeT<T>& t, typename TapeT<T>::Var x, const TensorT<T>& target) {
    const auto& xv = t.value(x);
    require_same_shape(xv, target, "mse_const");
    double acc = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        double dlt = static_cast<double>(xv.v[i]) - static_cast<double>(target.v[i]);
        acc += dlt * dlt;
    }
    double inv = 1.0 / static_cast<double>(xv.size());
    return t.make(TensorT<T>::scalar(static_cast<T>(acc * inv)),
                  [x, target, inv](TapeT<T>& tp, std::size_t self) {
                      const double g = static_cast<double>(tp.grad_ref(self).v[0]);
                      const auto& xv = tp.value_ref(x.id);
                      auto& gx = tp.grad_ref(x.id);
                      for (std::size_t i = 0; i < xv.size(); ++i)
                          gx.v[i] += static_cast<T>(
                              2.0 * g * inv *
                              (static_cast<double>(xv.v[i]) - static_cast<double>(target.v[i])));
                  });
}

// throws if the scalar is non-finite; identity otherwise
template <typename T>
typename TapeT<T>::Var check_finite(TapeT<T>& t, typename TapeT<T>::Var x, const char* what) {
    if (!t.value(x).all_finite())
        throw NumericError(std::string("non-finite value in ") + what);
    return x;
}

} // namespace mclner
