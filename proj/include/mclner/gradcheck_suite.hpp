#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mclner/common.hpp"
#include "mclner/gradcheck.hpp"
#include "mclner/model.hpp"
#include "mclner/objectives.hpp"
#include "mclner/relcodec.hpp"
#include "mclner/tape.hpp"
#include "mclner/tensor.hpp"

namespace mclner {

struct GradSuiteCase {
    std::string name;
    GradCheckResult result;
};

namespace detail {

inline TensorT<double> rand_tensor(Shape shape, Rng& rng, double lo = -0.5, double hi = 0.5) {
    TensorT<double> t(std::move(shape));
    for (auto& x : t.v) x = rng.uniform(lo, hi);
    return t;
}

// Runs gradcheck with every model parameter plus `extras` as perturbed leaves.
// body(tape, bound_model, extra_vars) must return the scalar root.
template <typename F>
GradCheckResult model_gradcheck(const ModelConfig& cfg, const ParameterStoreT<double>& store,
                                std::vector<TensorT<double>> extras, F&& body) {
    using Tape = TapeT<double>;
    std::vector<TensorT<double>> inputs;
    inputs.reserve(store.count() + extras.size());
    for (std::size_t i = 0; i < store.count(); ++i) inputs.push_back(store.tensor(i));
    const std::size_t n_params = inputs.size();
    for (auto& e : extras) inputs.push_back(std::move(e));

    auto build = [&, n_params](Tape& t, const std::vector<typename Tape::Var>& leaves) {
        BoundParamsT<double> bp;
        bp.vars.assign(leaves.begin(),
                       leaves.begin() + static_cast<std::ptrdiff_t>(n_params));
        BoundModelT<double> bm(t, cfg, store, bp);
        std::vector<typename Tape::Var> ex(
            leaves.begin() + static_cast<std::ptrdiff_t>(n_params), leaves.end());
        return body(t, bm, ex);
    };
    return gradcheck(build, std::move(inputs));
}

} // namespace detail

// Double-precision finite-difference check of every trainable layer and every
// loss at toy size (d_model = 8, 5 tokens). All cases share one seeded
// parameter draw; each case contracts the output with a fixed random mix so no
// gradient path degenerates to a constant.
inline std::vector<GradSuiteCase> run_gradcheck_suite(std::uint64_t seed = 7) {
    using Tape = TapeT<double>;
    using Var = Tape::Var;

    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.d_rel = 8;
    cfg.d_proj = 8;
    cfg.vocab_buckets = 64;
    cfg.n_gram = 3;
    cfg.dropout = 0.1;
    cfg.schema = TagSchema({"A", "B"});
    const std::size_t n = 5, d = cfg.d_model, k = cfg.d_rel, r = cfg.n_classes();

    Rng rng(derive_seed(seed, "gradsuite"));
    ParameterStoreT<double> store(cfg);
    store.init(rng);
    // the store inits the bilinear map to zero; randomize it so its backward
    // pass is actually exercised
    init_uniform_fanin(store.at("biaffine.w1"), d, rng);

    const std::vector<std::string> tokens{"ast", "berin", "corla", "dmel", "evo"};
    auto h_in = detail::rand_tensor({n, d}, rng);
    auto rel_in = detail::rand_tensor({n, n, k}, rng);
    auto mix_h = detail::rand_tensor({n, d}, rng);
    auto mix_grid = detail::rand_tensor({n, n, k}, rng);
    auto mix_rows = detail::rand_tensor({3, cfg.d_proj}, rng);
    auto mix_probs = detail::rand_tensor({n * n, r}, rng);

    const std::vector<std::pair<std::size_t, std::size_t>> cells{{0, 0}, {2, 1}, {4, 4}};
    RelationGrid gold = encode_grid({{0, 1, "A"}, {3, 3, "B"}}, n, cfg.schema);
    RelationAlignment alignment;
    alignment.pairs = {{1, 0, 1, 0, RelationClass::start_end(0)},
                       {0, 1, 0, 1, RelationClass::kNeighbor},
                       {3, 3, 3, 3, RelationClass::start_end(1)}};
    ScoredGrid teacher(n, r);
    for (std::size_t c = 0; c < n * n; ++c) {
        double tot = 0.0;
        std::vector<double> raw(r);
        for (std::size_t j = 0; j < r; ++j) tot += raw[j] = rng.uniform(0.05, 1.0);
        for (std::size_t j = 0; j < r; ++j)
            teacher.probs[c * r + j] = static_cast<float>(raw[j] / tot);
    }

    std::vector<GradSuiteCase> out;
    auto run = [&](std::string name, std::vector<TensorT<double>> extras, auto body) {
        out.push_back({std::move(name),
                       detail::model_gradcheck(cfg, store, std::move(extras), body)});
    };

    run("layer.fusion", {mix_h}, [&](Tape& t, BoundModelT<double>& bm, std::vector<Var> ex) {
        Rng drop(derive_seed(seed, "drop"));
        return mean_all(t, mul(t, bm.encode(tokens, true, &drop), ex[0]));
    });
    run("layer.biaffine", {h_in, mix_grid},
        [&](Tape& t, BoundModelT<double>& bm, std::vector<Var> ex) {
            return mean_all(t, mul(t, bm.biaffine_rel(ex[0]), ex[1]));
        });
    run("layer.cln", {h_in, mix_grid}, [&](Tape& t, BoundModelT<double>& bm, std::vector<Var> ex) {
        return mean_all(t, mul(t, bm.cln_rel(ex[0]), ex[1]));
    });
    run("layer.projection", {rel_in, mix_rows},
        [&](Tape& t, BoundModelT<double>& bm, std::vector<Var> ex) {
            return mean_all(t, mul(t, bm.project_cells(ex[0], cells), ex[1]));
        });
    run("layer.classifier", {rel_in, mix_probs},
        [&](Tape& t, BoundModelT<double>& bm, std::vector<Var> ex) {
            return mean_all(t, mul(t, bm.classify_probs(ex[0]), ex[1]));
        });

    run("loss.sc", {detail::rand_tensor({d}, rng), detail::rand_tensor({d}, rng),
                    detail::rand_tensor({d}, rng), detail::rand_tensor({d}, rng),
                    detail::rand_tensor({d}, rng), detail::rand_tensor({d}, rng)},
        [&](Tape& t, BoundModelT<double>&, std::vector<Var> ex) {
            return loss_sc(t, {ex[0], ex[1], ex[2]}, {ex[3], ex[4], ex[5]}, 0.1, true);
        });
    run("loss.tc", {rel_in, detail::rand_tensor({n, n, k}, rng)},
        [&](Tape& t, BoundModelT<double>& bm, std::vector<Var> ex) {
            return loss_tc(t, bm, ex[0], ex[1], alignment, 0.1, 6,
                           derive_seed(seed, "negatives"));
        });
    run("loss.ce", {rel_in}, [&](Tape& t, BoundModelT<double>& bm, std::vector<Var> ex) {
        return loss_ce(t, bm.classify_probs(ex[0]), gold);
    });
    run("loss.mse", {rel_in}, [&](Tape& t, BoundModelT<double>& bm, std::vector<Var> ex) {
        return loss_mse(t, bm.classify_probs(ex[0]), teacher);
    });
    return out;
}

} // namespace mclner
