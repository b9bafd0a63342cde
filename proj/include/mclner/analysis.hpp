// Representation-alignment analysis: projects aligned relation cells from
// source / code-switched sentence pairs and compares cosine similarity on the
// matched diagonal against mismatched pairs.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mclner/codeswitch.hpp"
#include "mclner/common.hpp"
#include "mclner/corpus.hpp"
#include "mclner/lexicon.hpp"
#include "mclner/model.hpp"
#include "mclner/relcodec.hpp"

namespace mclner {

inline double vec_cosine(const float* a, const float* b, std::size_t d) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        dot += static_cast<double>(a[k]) * static_cast<double>(b[k]);
        na += static_cast<double>(a[k]) * static_cast<double>(a[k]);
        nb += static_cast<double>(b[k]) * static_cast<double>(b[k]);
    }
    if (na <= 0.0 || nb <= 0.0) throw NumericError("cosine of a zero-norm projection");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct SimSummary {
    std::size_t pairs = 0;
    double aligned_mean = 0.0;     // cosine between each cell and its true counterpart
    double non_aligned_mean = 0.0; // cosine between mismatched cells
    double gap() const { return aligned_mean - non_aligned_mean; }
};

// Collects up to `max_pairs` aligned relation cells across the corpus (fully
// or partially switched counterparts, by `p_substitute`), projects both sides
// with the given model, and summarizes the cosine matrix: its diagonal holds
// true counterpart pairs, everything off the diagonal is a mismatch.
// The raw projections are returned through the optional output vectors.
inline SimSummary collect_similarity(const ModelConfig& mcfg, const ParameterStore& store,
                                     const std::vector<LabeledSentence>& source,
                                     const BilingualLexicon& lexicon, double p_substitute,
                                     std::uint64_t seed, std::size_t max_pairs,
                                     Diag* diag = nullptr,
                                     std::vector<std::vector<float>>* src_vecs_out = nullptr,
                                     std::vector<std::vector<float>>* cpt_vecs_out = nullptr) {
    CodeSwitchConfig cs;
    cs.p_substitute = p_substitute;
    cs.seed = seed;
    cs.validate();

    std::vector<std::vector<float>> src_vecs, cpt_vecs;
    for (const auto& sentence : source) {
        if (src_vecs.size() >= max_pairs) break;
        if (!sentence.labeled()) continue;
        AlignedPair pair = make_codeswitch(sentence, lexicon, cs, diag);
        RelationGrid grid =
            encode_grid(spans_from_bio(sentence.labels), sentence.size(), mcfg.schema);
        RelationAlignment alignment = align_relations(pair, grid);
        if (alignment.empty()) continue;

        InferredViews sv = infer_views(mcfg, store, pair.source.tokens);
        InferredViews cv = infer_views(mcfg, store, pair.switched.tokens);
        const std::size_t n = pair.source.size(), m = pair.switched.size();
        const std::size_t d = mcfg.d_proj;
        for (const auto& cell : alignment.pairs) {
            if (src_vecs.size() >= max_pairs) break;
            const float* zs = &sv.projections.v[(cell.si * n + cell.sj) * d];
            const float* zc = &cv.projections.v[(cell.ci * m + cell.cj) * d];
            src_vecs.emplace_back(zs, zs + d);
            cpt_vecs.emplace_back(zc, zc + d);
        }
    }
    if (src_vecs.size() < 2)
        throw FormatError("similarity analysis needs at least 2 aligned relation cells, found " +
                          std::to_string(src_vecs.size()));

    SimSummary sum;
    sum.pairs = src_vecs.size();
    double diag_acc = 0.0, off_acc = 0.0;
    std::size_t off_count = 0;
    const std::size_t d = mcfg.d_proj;
    for (std::size_t k = 0; k < src_vecs.size(); ++k) {
        for (std::size_t l = 0; l < cpt_vecs.size(); ++l) {
            const double c = vec_cosine(src_vecs[k].data(), cpt_vecs[l].data(), d);
            if (k == l)
                diag_acc += c;
            else {
                off_acc += c;
                ++off_count;
            }
        }
    }
    sum.aligned_mean = diag_acc / static_cast<double>(sum.pairs);
    sum.non_aligned_mean = off_acc / static_cast<double>(off_count);
    if (src_vecs_out) *src_vecs_out = std::move(src_vecs);
    if (cpt_vecs_out) *cpt_vecs_out = std::move(cpt_vecs);
    return sum;
}

} // namespace mclner
