#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <string>

#include "mclner/gradcheck.hpp"
#include "mclner/gradcheck_suite.hpp"

using namespace mclner;

TEST_CASE("a simple quadratic passes the finite-difference harness") {
    // f(x) = sum(x^2) has gradient 2x
    auto res = gradcheck(
        [](TapeT<double>& t, const std::vector<TapeT<double>::Var>& v) {
            return sum_all(t, mul(t, v[0], v[0]));
        },
        {TensorT<double>::full({4}, 0.7)});
    CHECK(res.checked == 4);
    CHECK(res.ok(1e-3));
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("the harness notices a broken gradient") {
    // value is sum(x^2) but the reverse rule reports 3x instead of 2x
    auto res = gradcheck(
        [](TapeT<double>& t, const std::vector<TapeT<double>::Var>& v) {
            auto x = v[0];
            return t.make(TensorT<double>::scalar([&] {
                              double acc = 0.0;
                              for (double d : t.value(x).v) acc += d * d;
                              return acc;
                          }()),
                          [x](TapeT<double>& tp, std::size_t self) {
                              const double g = tp.grad_ref(self).v[0];
                              for (std::size_t i = 0; i < tp.value_ref(x.id).size(); ++i)
                                  tp.grad_ref(x.id).v[i] += g * 3.0 * tp.value_ref(x.id).v[i];
                          });
        },
        {TensorT<double>::full({3}, 0.5)});
    CHECK(!res.ok(1e-3));
}

TEST_CASE("every model layer and loss passes end-to-end gradient checks") {
    auto suite = run_gradcheck_suite();

    std::set<std::string> names;
    for (const auto& c : suite) names.insert(c.name);
    CHECK(names == std::set<std::string>{"layer.fusion", "layer.biaffine", "layer.cln",
                                         "layer.projection", "layer.classifier", "loss.sc",
                                         "loss.tc", "loss.ce", "loss.mse"});

    for (const auto& c : suite) {
        INFO(c.name << ": max rel err " << c.result.max_rel_err << " over " << c.result.checked
                    << " partials (worst input " << c.result.worst_input << " elem "
                    << c.result.worst_elem << ")");
        CHECK(c.result.checked > 0);
        CHECK(c.result.ok(1e-3));
    }
}
