#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mclner/common.hpp"
#include "mclner/gradcheck.hpp"
#include "mclner/tape.hpp"
#include "mclner/tensor.hpp"

using namespace mclner;
using Tape = TapeT<double>;
using Var = Tape::Var;
using DT = TensorT<double>;

namespace {

DT rnd(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    DT t(std::move(s));
    for (auto& x : t.v) x = rng.uniform(lo, hi);
    return t;
}

// gradchecks a builder over freshly drawn inputs and asserts the 1e-3 bound
template <typename F>
void check_op(const char* what, std::vector<DT> inputs, F&& build) {
    auto res = gradcheck(std::forward<F>(build), std::move(inputs));
    INFO(what << ": max rel err " << res.max_rel_err << " at input " << res.worst_input
              << " elem " << res.worst_elem);
    CHECK(res.ok(1e-3));
}

} // namespace

TEST_CASE("tensor basics") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    t.at2(1, 2) = 5.0f;
    CHECK(t.v[5] == 5.0f);
    CHECK(Tensor::scalar(3.0f).v[0] == 3.0f);
    CHECK(t.all_finite());
    t.v[0] = std::numeric_limits<float>::infinity();
    CHECK(!t.all_finite());
    CHECK_THROWS_AS(require_same_shape(Tensor({2, 3}), Tensor({3, 2}), "op"), ShapeError);
}

TEST_CASE("gemm matches a hand product in all transpose modes") {
    TensorT<double> a({2, 3}), b({3, 2});
    for (std::size_t i = 0; i < 6; ++i) {
        a.v[i] = static_cast<double>(i + 1);
        b.v[i] = static_cast<double>(6 - i);
    }
    TensorT<double> y = gemm(false, false, a, b);
    // [[1,2,3],[4,5,6]] x [[6,5],[4,3],[2,1]]
    REQUIRE(y.shape == Shape{2, 2});
    CHECK(y.at2(0, 0) == 20.0);
    CHECK(y.at2(0, 1) == 14.0);
    CHECK(y.at2(1, 0) == 56.0);
    CHECK(y.at2(1, 1) == 41.0);

    TensorT<double> at({3, 2});
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) at.at2(j, i) = a.at2(i, j);
    TensorT<double> yt = gemm(true, false, at, b);
    for (std::size_t i = 0; i < 4; ++i) CHECK(yt.v[i] == y.v[i]);

    TensorT<double> bt({2, 3});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) bt.at2(j, i) = b.at2(i, j);
    TensorT<double> ytt = gemm(false, true, a, bt);
    for (std::size_t i = 0; i < 4; ++i) CHECK(ytt.v[i] == y.v[i]);

    TensorT<double> ytt2 = gemm(true, true, at, bt);
    for (std::size_t i = 0; i < 4; ++i) CHECK(ytt2.v[i] == y.v[i]);
}

TEST_CASE("backward on a composite expression gives exact gradients") {
    // f(x, y) = sum(x * y + 2x) => df/dx = y + 2, df/dy = x
    Tape t;
    auto x = t.leaf(DT::full({3}, 2.0));
    auto y = t.leaf(DT::full({3}, 5.0));
    auto root = sum_all(t, add(t, mul(t, x, y), scale(t, x, 2.0)));
    t.backward(root);
    CHECK(t.value(root).v[0] == Catch::Approx(42.0)); // 3 * (2*5 + 2*2)
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(t.grad(x).v[i] == Catch::Approx(7.0));
        CHECK(t.grad(y).v[i] == Catch::Approx(2.0));
    }
}

TEST_CASE("tape contract violations throw") {
    Tape t;
    auto x = t.leaf(DT::full({2}, 1.0));
    CHECK_THROWS_AS(t.backward(x), ContractError); // non-scalar root
    auto s = sum_all(t, x);
    t.backward(s);
    CHECK_THROWS_AS(t.backward(s), ContractError); // second sweep without reset
    t.reset();
    CHECK(t.size() == 0);

    auto a = t.leaf(DT::full({2}, 1.0));
    auto b = t.leaf(DT::full({3}, 1.0));
    CHECK_THROWS_AS(add(t, a, b), ShapeError);
    CHECK_THROWS_AS(reshape(t, a, Shape{4}), ShapeError);
    CHECK_THROWS_AS(matmul(t, a, b), ShapeError); // rank-1 operands
}

TEST_CASE("elementwise and unary ops differentiate") {
    Rng rng(101);
    check_op("add", {rnd({2, 3}, rng), rnd({2, 3}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, add(t, v[0], v[1]));
             });
    check_op("sub*mul", {rnd({4}, rng), rnd({4}, rng)}, [](Tape& t, const std::vector<Var>& v) {
        return sum_all(t, mul(t, sub(t, v[0], v[1]), v[1]));
    });
    check_op("scale+add_const", {rnd({5}, rng)}, [](Tape& t, const std::vector<Var>& v) {
        return sum_all(t, add_const(t, scale(t, v[0], -1.7), 0.3));
    });
    check_op("tanh", {rnd({6}, rng)}, [](Tape& t, const std::vector<Var>& v) {
        return sum_all(t, tanh_op(t, v[0]));
    });
    check_op("exp", {rnd({6}, rng)}, [](Tape& t, const std::vector<Var>& v) {
        return sum_all(t, exp_op(t, v[0]));
    });
    check_op("log", {rnd({6}, rng, 0.5, 2.0)}, [](Tape& t, const std::vector<Var>& v) {
        return sum_all(t, log_op(t, v[0]));
    });
    check_op("sqrt", {rnd({6}, rng, 0.5, 2.0)}, [](Tape& t, const std::vector<Var>& v) {
        return sum_all(t, sqrt_op(t, v[0]));
    });
    // keep relu inputs away from the kink
    DT away({6});
    for (std::size_t i = 0; i < 6; ++i) away.v[i] = (i % 2 ? 0.4 : -0.6) + 0.01 * double(i);
    check_op("relu", {away}, [](Tape& t, const std::vector<Var>& v) {
        return sum_all(t, relu(t, v[0]));
    });
}

TEST_CASE("shape ops differentiate") {
    Rng rng(102);
    check_op("reshape", {rnd({2, 6}, rng), rnd({3, 4}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, reshape(t, v[0], {3, 4}), v[1]));
             });
    check_op("concat_vec", {rnd({3}, rng), rnd({4}, rng), rnd({7}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, concat_vec(t, v[0], v[1]), v[2]));
             });
    check_op("concat_rows", {rnd({2, 3}, rng), rnd({4, 3}, rng), rnd({6, 3}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, concat_rows(t, v[0], v[1]), v[2]));
             });
    check_op("pack_scalars", {rnd({1}, rng), rnd({1}, rng), rnd({1}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 auto p = pack_scalars(
                     t, {reshape(t, v[0], {}), reshape(t, v[1], {}), reshape(t, v[2], {})});
                 return mean_all(t, mul(t, p, p));
             });
    check_op("pack_rows", {rnd({4}, rng), rnd({4}, rng), rnd({2, 4}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, pack_rows(t, {v[0], v[1]}), v[2]));
             });
    check_op("slice_cols", {rnd({3, 6}, rng), rnd({3, 2}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, slice_cols(t, v[0], 2, 4), v[1]));
             });
    check_op("gather_rows with repeats", {rnd({4, 3}, rng), rnd({3, 3}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, gather_rows(t, v[0], {2, 0, 2}), v[1]));
             });
    check_op("pick", {rnd({5}, rng)}, [](Tape& t, const std::vector<Var>& v) {
        return pick(t, v[0], 3);
    });
}

TEST_CASE("matmul and linear differentiate in every mode") {
    Rng rng(103);
    check_op("matmul nn", {rnd({2, 3}, rng), rnd({3, 4}, rng), rnd({2, 4}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, matmul(t, v[0], v[1]), v[2]));
             });
    check_op("matmul nt", {rnd({2, 3}, rng), rnd({4, 3}, rng), rnd({2, 4}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, matmul(t, v[0], v[1], false, true), v[2]));
             });
    check_op("matmul tn", {rnd({3, 2}, rng), rnd({3, 4}, rng), rnd({2, 4}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, matmul(t, v[0], v[1], true, false), v[2]));
             });
    check_op("linear", {rnd({3, 4}, rng), rnd({4, 2}, rng), rnd({2}, rng), rnd({3, 2}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, linear(t, v[0], v[1], v[2]), v[3]));
             });
    Tape t;
    auto a = t.leaf(DT::full({2, 2}, 1.0));
    CHECK_THROWS_AS(matmul(t, a, a, true, true), ShapeError);
}

TEST_CASE("row-structured ops differentiate") {
    Rng rng(104);
    check_op("affine_rows", {rnd({3, 4}, rng), rnd({4}, rng), rnd({4}, rng), rnd({3, 4}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, affine_rows(t, v[0], v[1], v[2]), v[3]));
             });
    check_op("standardize_rows", {rnd({3, 5}, rng), rnd({3, 5}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, standardize_rows(t, v[0]), v[1]));
             });
    check_op("softmax_rows", {rnd({3, 4}, rng), rnd({3, 4}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, softmax_rows(t, v[0]), v[1]));
             });
    check_op("logsumexp_rows", {rnd({3, 4}, rng), rnd({3}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, logsumexp_rows(t, v[0]), v[1]));
             });
    check_op("logsumexp rank-1", {rnd({5}, rng)}, [](Tape& t, const std::vector<Var>& v) {
        return logsumexp_rows(t, v[0]);
    });
    check_op("mean_rows", {rnd({4, 3}, rng), rnd({3}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, mean_rows(t, v[0]), v[1]));
             });
    check_op("mean_all", {rnd({4, 3}, rng)}, [](Tape& t, const std::vector<Var>& v) {
        return mean_all(t, v[0]);
    });
}

TEST_CASE("standardize_rows matches the frozen three-point example") {
    Tape t;
    DT x({1, 3});
    x.v = {1.0, 2.0, 3.0}; // mean 2, population std sqrt(2/3)
    auto y = standardize_rows(t, t.leaf(x));
    const double e = std::sqrt(2.0 / 3.0 + 1e-5);
    CHECK(t.value(y).v[0] == Catch::Approx(-1.0 / e).epsilon(1e-9));
    CHECK(t.value(y).v[1] == Catch::Approx(0.0).margin(1e-12));
    CHECK(t.value(y).v[2] == Catch::Approx(1.0 / e).epsilon(1e-9));
    CHECK(t.value(y).v[0] == Catch::Approx(-1.22474).epsilon(1e-4));
}

TEST_CASE("softmax rows sum to one and normalize shifts away") {
    Tape t;
    DT x({2, 3});
    x.v = {100.0, 101.0, 102.0, -3.0, -2.0, -1.0}; // row 2 is row 1 shifted by -103
    auto y = softmax_rows(t, t.leaf(x));
    const auto& v = t.value(y);
    CHECK(v.v[0] + v.v[1] + v.v[2] == Catch::Approx(1.0).epsilon(1e-12));
    for (int i = 0; i < 3; ++i) CHECK(v.v[i] == Catch::Approx(v.v[3 + i]).epsilon(1e-12));
}

TEST_CASE("cosine ops differentiate and reject zero norms") {
    Rng rng(105);
    check_op("cosine_many", {rnd({4}, rng, 0.2, 1.0), rnd({3, 4}, rng, 0.2, 1.0), rnd({3}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, cosine_many(t, v[0], v[1]), v[2]));
             });
    check_op("cosine", {rnd({4}, rng, 0.2, 1.0), rnd({4}, rng, 0.2, 1.0)},
             [](Tape& t, const std::vector<Var>& v) {
                 return cosine(t, v[0], v[1]);
             });
    Tape t;
    auto u = t.leaf(DT::full({3}, 0.0));
    auto m = t.leaf(DT::full({2, 3}, 1.0));
    CHECK_THROWS_AS(cosine_many(t, u, m), NumericError);

    // parallel vectors have cosine 1, antiparallel -1
    Tape t2;
    DT a({3}), b({3});
    a.v = {1.0, 2.0, -1.0};
    b.v = {-2.0, -4.0, 2.0};
    CHECK(t2.value(cosine(t2, t2.leaf(a), t2.leaf(a))).v[0] == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(t2.value(cosine(t2, t2.leaf(a), t2.leaf(b))).v[0] == Catch::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("dropout masks elementwise with inverted scaling") {
    Tape t;
    auto x = t.leaf(DT::full({100, 10}, 1.0));
    Rng rng(7);
    auto y = dropout(t, x, 0.25, rng);
    const auto& v = t.value(y);
    std::size_t zeros = 0;
    for (double d : v.v) {
        REQUIRE((d == 0.0 || d == Catch::Approx(1.0 / 0.75).epsilon(1e-12)));
        zeros += (d == 0.0);
    }
    CHECK(zeros > 150);
    CHECK(zeros < 350);

    // deterministic given the same rng seed
    Tape t2;
    Rng rng2(7);
    auto y2 = dropout(t2, t2.leaf(DT::full({100, 10}, 1.0)), 0.25, rng2);
    CHECK(t2.value(y2).v == v.v);

    // rate 0 is the identity; rate >= 1 is rejected
    Tape t3;
    Rng rng3(1);
    auto x3 = t3.leaf(DT::full({4}, 2.0));
    CHECK(t3.value(dropout(t3, x3, 0.0, rng3)).v == std::vector<double>(4, 2.0));
    CHECK_THROWS_AS(dropout(t3, x3, 1.0, rng3), ConfigError);

    Rng rng4(9);
    check_op("dropout grad", {DT::full({3, 4}, 0.8)}, [&](Tape& tt, const std::vector<Var>& v) {
        Rng local(11); // same mask every evaluation
        return sum_all(tt, dropout(tt, v[0], 0.5, local));
    });
}

TEST_CASE("grid ops differentiate") {
    Rng rng(106);
    check_op("bilinear_grid",
             {rnd({3, 4}, rng), rnd({4, 2, 4}, rng), rnd({3, 4}, rng), rnd({3, 3, 2}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, bilinear_grid(t, v[0], v[1], v[2]), v[3]));
             });
    check_op("grid_outer_sum",
             {rnd({3, 2}, rng), rnd({3, 2}, rng), rnd({2}, rng), rnd({3, 3, 2}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, grid_outer_sum(t, v[0], v[1], v[2]), v[3]));
             });
    check_op("grid_modulate",
             {rnd({3, 4}, rng), rnd({3, 4}, rng), rnd({3, 4}, rng), rnd({3, 3, 4}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(t, mul(t, grid_modulate(t, v[0], v[1], v[2]), v[3]));
             });
    check_op("gather_cells", {rnd({3, 3, 4}, rng), rnd({3, 4}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(
                     t, mul(t, gather_cells(t, v[0], {{0, 0}, {2, 1}, {0, 0}}), v[1]));
             });
    check_op("embed_mean", {rnd({6, 4}, rng), rnd({3, 4}, rng)},
             [](Tape& t, const std::vector<Var>& v) {
                 return sum_all(
                     t, mul(t, embed_mean(t, v[0], {{0, 1, 5}, {2}, {2, 2, 3}}), v[1]));
             });
}

TEST_CASE("bilinear_grid matches a direct contraction") {
    Tape t;
    Rng rng(42);
    auto ti = rnd({2, 3}, rng);
    auto w = rnd({3, 2, 3}, rng);
    auto tj = rnd({2, 3}, rng);
    auto y = bilinear_grid(t, t.leaf(ti), t.leaf(w), t.leaf(tj));
    const auto& v = t.value(y);
    REQUIRE(v.shape == Shape{2, 2, 2});
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t k = 0; k < 2; ++k) {
                double want = 0.0;
                for (std::size_t a = 0; a < 3; ++a)
                    for (std::size_t b = 0; b < 3; ++b)
                        want += ti.v[i * 3 + a] * w.v[(a * 2 + k) * 3 + b] * tj.v[j * 3 + b];
                CHECK(v.v[(i * 2 + j) * 2 + k] == Catch::Approx(want).epsilon(1e-12));
            }
}

TEST_CASE("embed_mean validates groups") {
    Tape t;
    auto table = t.leaf(DT::full({4, 2}, 1.0));
    CHECK_THROWS_AS(embed_mean(t, table, {{}}), ShapeError);
    CHECK_THROWS_AS(embed_mean(t, table, {{4}}), ShapeError);
}

TEST_CASE("loss primitives differentiate and match hand values") {
    Rng rng(107);
    check_op("nll_rows", {rnd({3, 4}, rng, 0.1, 1.0)}, [](Tape& t, const std::vector<Var>& v) {
        return nll_rows(t, softmax_rows(t, v[0]), {1, 3, 0});
    });
    DT target({2, 3});
    target.v = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    check_op("mse_const", {rnd({2, 3}, rng)}, [&](Tape& t, const std::vector<Var>& v) {
        return mse_const(t, v[0], target);
    });

    Tape t;
    DT uniform({2, 4});
    for (auto& x : uniform.v) x = 0.25;
    auto nll = nll_rows(t, t.leaf(uniform), {0, 3});
    CHECK(t.value(nll).v[0] == Catch::Approx(std::log(4.0)).epsilon(1e-9));

    auto same = mse_const(t, t.leaf(target), target);
    CHECK(t.value(same).v[0] == 0.0);

    CHECK_THROWS_AS(nll_rows(t, t.leaf(uniform), {0}), ShapeError);
}

TEST_CASE("check_finite passes finite tensors and names the offender") {
    Tape t;
    auto ok = t.leaf(DT::full({2}, 1.0));
    CHECK_NOTHROW(check_finite(t, ok, "ce"));
    auto bad = t.leaf(DT::full({2}, std::numeric_limits<double>::quiet_NaN()));
    try {
        check_finite(t, bad, "sc");
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("sc") != std::string::npos);
    }
}
