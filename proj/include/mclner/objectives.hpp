#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mclner/codeswitch.hpp"
#include "mclner/common.hpp"
#include "mclner/model.hpp"
#include "mclner/relcodec.hpp"
#include "mclner/tape.hpp"

namespace mclner {

struct LossWeights {
    double tau = 0.1;     // contrastive temperature
    double w = 0.5;       // source-phase weight on (sc + tc)
    double w1 = 0.5;      // target-phase weight on tc
    double w2 = 1.0;      // target-phase weight on distillation mse
    std::size_t neg_cap = 128; // max sampled negatives per aligned pair

    void validate() const {
        if (tau <= 0.0) throw ConfigError("loss weights: tau must be positive");
        if (w < 0.0 || w1 < 0.0 || w2 < 0.0)
            throw ConfigError("loss weights: weights must be non-negative");
        if (neg_cap < 1) throw ConfigError("loss weights: neg_cap must be at least 1");
    }
};

// gold classes flattened row-major by (i,j), the layout classify_probs emits
inline std::vector<std::size_t> grid_gold_cells(const RelationGrid& gold) {
    std::vector<std::size_t> out;
    out.reserve(gold.n * gold.n);
    for (std::size_t i = 0; i < gold.n; ++i)
        for (std::size_t j = 0; j < gold.n; ++j) out.push_back(gold.at(i, j));
    return out;
}

// --- relation cross-entropy ---------------------------------------------------

// mean over all n^2 cells of -log(p[gold] + 1e-12)
template <typename T>
typename TapeT<T>::Var loss_ce(TapeT<T>& t, typename TapeT<T>::Var probs,
                               const RelationGrid& gold) {
    return nll_rows(t, probs, grid_gold_cells(gold));
}

inline double loss_ce_value(const ScoredGrid& scored, const RelationGrid& gold) {
    if (scored.n != gold.n)
        throw ShapeError("loss_ce: scored grid n=" + std::to_string(scored.n) + " vs gold n=" +
                         std::to_string(gold.n));
    double acc = 0.0;
    for (std::size_t i = 0; i < gold.n; ++i)
        for (std::size_t j = 0; j < gold.n; ++j)
            acc -= std::log(static_cast<double>(scored.at(i, j, gold.at(i, j))) + 1e-12);
    return acc / static_cast<double>(gold.n * gold.n);
}

// --- InfoNCE core ----------------------------------------------------------------

// -log( e^{sim(anchor, candidates[pos])/tau} / sum_j e^{sim(anchor, candidates[j])/tau} )
// computed as logsumexp - positive for stability
template <typename T>
typename TapeT<T>::Var infonce_at(TapeT<T>& t, typename TapeT<T>::Var anchor,
                                  typename TapeT<T>::Var candidates, std::size_t pos_idx,
                                  double tau) {
    auto scaled = scale(t, cosine_many(t, anchor, candidates), 1.0 / tau);
    return sub(t, logsumexp_rows(t, scaled), pick(t, scaled, pos_idx));
}

// --- sentence-level semantic contrastive loss ---------------------------------------

// Each source rep is scored against every counterpart rep in the batch; the
// positive is its own counterpart. The symmetric variant adds the reverse
// direction and halves.
template <typename T>
typename TapeT<T>::Var loss_sc(TapeT<T>& t,
                               const std::vector<typename TapeT<T>::Var>& src_reps,
                               const std::vector<typename TapeT<T>::Var>& cpt_reps, double tau,
                               bool symmetric = false) {
    if (src_reps.empty() || src_reps.size() != cpt_reps.size())
        throw ContractError("loss_sc: batch pairing mismatch");
    auto cpt_matrix = pack_rows(t, cpt_reps);
    std::vector<typename TapeT<T>::Var> terms;
    terms.reserve(src_reps.size() * (symmetric ? 2 : 1));
    for (std::size_t k = 0; k < src_reps.size(); ++k)
        terms.push_back(infonce_at(t, src_reps[k], cpt_matrix, k, tau));
    if (symmetric) {
        auto src_matrix = pack_rows(t, src_reps);
        for (std::size_t k = 0; k < cpt_reps.size(); ++k)
            terms.push_back(infonce_at(t, cpt_reps[k], src_matrix, k, tau));
    }
    return mean_all(t, pack_scalars(t, terms));
}

// --- token-pair relation contrastive loss --------------------------------------------

namespace detail {

struct TcCellIndexer {
    std::vector<std::pair<std::size_t, std::size_t>> src_cells, cpt_cells;
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> src_idx, cpt_idx;

    std::size_t src(std::size_t i, std::size_t j) {
        auto key = std::make_pair(i, j);
        auto it = src_idx.find(key);
        if (it != src_idx.end()) return it->second;
        src_idx.emplace(key, src_cells.size());
        src_cells.push_back(key);
        return src_cells.size() - 1;
    }
    std::size_t cpt(std::size_t i, std::size_t j) {
        auto key = std::make_pair(i, j);
        auto it = cpt_idx.find(key);
        if (it != cpt_idx.end()) return it->second;
        cpt_idx.emplace(key, cpt_cells.size());
        cpt_cells.push_back(key);
        return cpt_cells.size() - 1;
    }
};

// maps u in [0, union_size-2) to a union index skipping the two excluded
inline std::size_t skip_two(std::size_t u, std::size_t e1, std::size_t e2) {
    if (u >= e1) ++u;
    if (u >= e2) ++u;
    return u;
}

} // namespace detail

// Appends one InfoNCE term per aligned pair. Negatives are sampled without
// replacement from the union of both grids' cells minus the pair's own two
// cells; only the cells a term actually touches are projected.
template <typename T>
void loss_tc_terms(TapeT<T>& t, const BoundModelT<T>& bm, typename TapeT<T>::Var rel_src,
                   typename TapeT<T>::Var rel_cpt, const RelationAlignment& alignment, double tau,
                   std::size_t neg_cap, Rng& rng,
                   std::vector<typename TapeT<T>::Var>& out_terms) {
    if (alignment.empty()) return;
    const std::size_t n = t.value(rel_src).shape[0];
    const std::size_t m = t.value(rel_cpt).shape[0];
    const std::size_t union_size = n * n + m * m;

    detail::TcCellIndexer ix;
    struct Term {
        std::size_t anchor;           // src row
        std::size_t positive;         // cpt row
        std::vector<std::pair<bool, std::size_t>> negs; // (is_cpt, row)
    };
    std::vector<Term> terms;
    terms.reserve(alignment.size());
    for (const auto& cell : alignment.pairs) {
        if (cell.si >= n || cell.sj >= n || cell.ci >= m || cell.cj >= m)
            throw ShapeError("loss_tc: alignment cell out of range");
        Term term;
        term.anchor = ix.src(cell.si, cell.sj);
        term.positive = ix.cpt(cell.ci, cell.cj);
        const std::size_t e1 = cell.si * n + cell.sj;            // src slot in the union
        const std::size_t e2 = n * n + cell.ci * m + cell.cj;    // cpt slot in the union
        const std::size_t avail = union_size - 2;
        const std::size_t k = std::min(neg_cap, avail);
        for (std::size_t pickd : sample_without_replacement(avail, k, rng)) {
            const std::size_t u = detail::skip_two(pickd, e1, e2);
            if (u < n * n)
                term.negs.emplace_back(false, ix.src(u / n, u % n));
            else {
                const std::size_t v = u - n * n;
                term.negs.emplace_back(true, ix.cpt(v / m, v % m));
            }
        }
        terms.push_back(std::move(term));
    }

    auto z_src = bm.project_cells(rel_src, ix.src_cells);
    auto z_cpt = bm.project_cells(rel_cpt, ix.cpt_cells);
    auto stacked = concat_rows(t, z_src, z_cpt);
    const std::size_t cpt_base = ix.src_cells.size();
    const std::size_t d_proj = t.value(stacked).shape[1];

    for (const auto& term : terms) {
        std::vector<std::size_t> cand_rows;
        cand_rows.reserve(1 + term.negs.size());
        cand_rows.push_back(cpt_base + term.positive);
        for (const auto& [is_cpt, row] : term.negs)
            cand_rows.push_back(is_cpt ? cpt_base + row : row);
        auto anchor = reshape(t, gather_rows(t, stacked, {term.anchor}), {d_proj});
        auto candidates = gather_rows(t, stacked, cand_rows);
        out_terms.push_back(infonce_at(t, anchor, candidates, 0, tau));
    }
}

// mean over the alignment's pairs; zero for an empty alignment
template <typename T>
typename TapeT<T>::Var loss_tc(TapeT<T>& t, const BoundModelT<T>& bm,
                               typename TapeT<T>::Var rel_src, typename TapeT<T>::Var rel_cpt,
                               const RelationAlignment& alignment, double tau, std::size_t neg_cap,
                               std::uint64_t neg_seed) {
    if (alignment.empty()) return t.leaf(TensorT<T>::scalar(T(0)));
    Rng rng(neg_seed);
    std::vector<typename TapeT<T>::Var> terms;
    loss_tc_terms(t, bm, rel_src, rel_cpt, alignment, tau, neg_cap, rng, terms);
    return mean_all(t, pack_scalars(t, terms));
}

// identity alignment over the non-NONE cells of a grid (the two-view target
// phase aligns each pseudo relation cell with itself)
inline RelationAlignment identity_alignment(const RelationGrid& grid) {
    RelationAlignment out;
    for (std::size_t i = 0; i < grid.n; ++i)
        for (std::size_t j = 0; j < grid.n; ++j)
            if (grid.at(i, j) != RelationClass::kNone)
                out.pairs.push_back({i, j, i, j, grid.at(i, j)});
    return out;
}

// --- distillation ---------------------------------------------------------------

// mean over all n^2 * R entries of squared probability difference
template <typename T>
typename TapeT<T>::Var loss_mse(TapeT<T>& t, typename TapeT<T>::Var student_probs,
                                const ScoredGrid& teacher) {
    TensorT<T> target({teacher.n * teacher.n, teacher.n_classes});
    for (std::size_t i = 0; i < target.size(); ++i)
        target.v[i] = static_cast<T>(teacher.probs[i]);
    return mse_const(t, student_probs, target);
}

inline double loss_mse_value(const ScoredGrid& a, const ScoredGrid& b) {
    if (a.n != b.n || a.n_classes != b.n_classes)
        throw ShapeError("loss_mse: grids " + std::to_string(a.n) + "x" +
                         std::to_string(a.n_classes) + " vs " + std::to_string(b.n) + "x" +
                         std::to_string(b.n_classes));
    double acc = 0.0;
    for (std::size_t i = 0; i < a.probs.size(); ++i) {
        const double d = static_cast<double>(a.probs[i]) - static_cast<double>(b.probs[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.probs.size());
}

// --- combined objectives -----------------------------------------------------------

// L_ce + w * (L_sc + L_tc)
template <typename T>
typename TapeT<T>::Var total_source(TapeT<T>& t, typename TapeT<T>::Var ce,
                                    typename TapeT<T>::Var sc, typename TapeT<T>::Var tc,
                                    const LossWeights& weights) {
    check_finite(t, ce, "ce");
    check_finite(t, sc, "sc");
    check_finite(t, tc, "tc");
    return add(t, ce, scale(t, add(t, sc, tc), weights.w));
}

// L_ce + w1 * L_tc + w2 * L_mse
template <typename T>
typename TapeT<T>::Var total_target(TapeT<T>& t, typename TapeT<T>::Var ce_pseudo,
                                    typename TapeT<T>::Var tc, typename TapeT<T>::Var mse,
                                    const LossWeights& weights) {
    check_finite(t, ce_pseudo, "ce");
    check_finite(t, tc, "tc");
    check_finite(t, mse, "mse");
    return add(t, add(t, ce_pseudo, scale(t, tc, weights.w1)), scale(t, mse, weights.w2));
}

} // namespace mclner
