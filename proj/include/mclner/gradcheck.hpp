#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mclner/common.hpp"
#include "mclner/tape.hpp"
#include "mclner/tensor.hpp"

namespace mclner {

struct GradCheckResult {
    std::size_t checked = 0;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_elem = 0;

    bool ok(double tol = 1e-3) const { return max_rel_err < tol; }
};

// Central finite differences in double against the tape's analytic gradients.
// build(tape, leaves) must construct a scalar from exactly the given leaves and
// be deterministic across calls (reseed any Rng it uses internally).
//
// rel err = |analytic - numeric| / max(|analytic|, |numeric|, denom_floor);
// the floor keeps difference noise on near-zero gradients from dominating.
template <typename F>
GradCheckResult gradcheck(F&& build, std::vector<TensorT<double>> inputs, double eps = 1e-3,
                          double denom_floor = 1e-2) {
    using Tape = TapeT<double>;
    GradCheckResult res;

    std::vector<TensorT<double>> analytic;
    {
        Tape tape;
        std::vector<typename Tape::Var> leaves;
        leaves.reserve(inputs.size());
        for (const auto& in : inputs) leaves.push_back(tape.leaf(in));
        auto root = build(tape, leaves);
        tape.backward(root);
        for (const auto& l : leaves) analytic.push_back(tape.grad(l));
    }

    auto eval = [&](const std::vector<TensorT<double>>& xs) {
        Tape tape;
        std::vector<typename Tape::Var> leaves;
        leaves.reserve(xs.size());
        for (const auto& in : xs) leaves.push_back(tape.leaf(in));
        auto root = build(tape, leaves);
        return tape.value(root).v[0];
    };

    for (std::size_t t = 0; t < inputs.size(); ++t) {
        for (std::size_t i = 0; i < inputs[t].size(); ++i) {
            const double orig = inputs[t].v[i];
            inputs[t].v[i] = orig + eps;
            const double fp = eval(inputs);
            inputs[t].v[i] = orig - eps;
            const double fm = eval(inputs);
            inputs[t].v[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[t].v[i];
            const double abs_err = std::fabs(a - numeric);
            const double rel =
                abs_err / std::max({std::fabs(a), std::fabs(numeric), denom_floor});
            ++res.checked;
            if (abs_err > res.max_abs_err) res.max_abs_err = abs_err;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_input = t;
                res.worst_elem = i;
            }
        }
    }
    return res;
}

} // namespace mclner
