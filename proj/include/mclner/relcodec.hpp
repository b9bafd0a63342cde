#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <string>
#include <vector>

#include "mclner/common.hpp"
#include "mclner/corpus.hpp"

namespace mclner {

// Relation class index space: NONE=0, NB=1, SE(t)=2+index(t).
// NONE covers token pairs outside any entity, NB is the consecutive-token
// relation inside an entity, SE(t) is the typed start-end relation stored at
// cell (end, start). Single-token entities put SE on the diagonal.
struct RelationClass {
    static constexpr std::size_t kNone = 0;
    static constexpr std::size_t kNeighbor = 1;

    static std::size_t count(const TagSchema& schema) { return 2 + schema.size(); }
    static std::size_t start_end(std::size_t type_index) { return 2 + type_index; }
    static bool is_start_end(std::size_t cls) { return cls >= 2; }
    static std::size_t type_index(std::size_t cls) { return cls - 2; }

    static std::string name(std::size_t cls, const TagSchema& schema) {
        if (cls == kNone) return "NONE";
        if (cls == kNeighbor) return "NB";
        return "SE-" + schema.name(cls - 2);
    }
    static std::size_t from_name(const std::string& name, const TagSchema& schema) {
        if (name == "NONE") return kNone;
        if (name == "NB") return kNeighbor;
        if (name.size() > 3 && name.rfind("SE-", 0) == 0)
            return start_end(schema.index_of(name.substr(3)));
        throw FormatError("unknown relation class '" + name + "'");
    }
};

// Hard n x n relation-class matrix, row-major.
struct RelationGrid {
    std::size_t n = 0;
    std::vector<std::size_t> cells; // n*n class indices

    RelationGrid() = default;
    explicit RelationGrid(std::size_t n_) : n(n_), cells(n_ * n_, RelationClass::kNone) {}

    std::size_t& at(std::size_t i, std::size_t j) { return cells[i * n + j]; }
    std::size_t at(std::size_t i, std::size_t j) const { return cells[i * n + j]; }

    bool operator==(const RelationGrid&) const = default;
};

// Soft n x n x R class-probability tensor (per-cell distributions).
struct ScoredGrid {
    std::size_t n = 0;
    std::size_t n_classes = 0;
    std::vector<float> probs; // n*n*R, row-major (i, j, class)

    ScoredGrid() = default;
    ScoredGrid(std::size_t n_, std::size_t r)
        : n(n_), n_classes(r), probs(n_ * n_ * r, 0.0f) {}

    float& at(std::size_t i, std::size_t j, std::size_t c) {
        return probs[(i * n + j) * n_classes + c];
    }
    float at(std::size_t i, std::size_t j, std::size_t c) const {
        return probs[(i * n + j) * n_classes + c];
    }

    void validate() const {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double sum = 0.0;
                for (std::size_t c = 0; c < n_classes; ++c) {
                    float p = at(i, j, c);
                    if (!(p >= 0.0f))
                        throw NumericError("scored grid: negative probability at (" +
                                           std::to_string(i) + "," + std::to_string(j) + ")");
                    sum += p;
                }
                if (std::abs(sum - 1.0) > 1e-6)
                    throw NumericError("scored grid: probabilities at (" + std::to_string(i) + "," +
                                       std::to_string(j) + ") sum to " + std::to_string(sum));
            }
    }
};

struct PseudoFilterConfig {
    double confidence_threshold = 0.7;
    bool drop_all_O = true;
    bool drop_discontinuous = true;
};

// Diagnostics from decoding a (possibly noisy) grid.
struct DecodeStats {
    std::size_t placement_violations = 0; // non-NONE classes at impossible cells
    std::size_t broken_chains = 0;        // SE candidates with an incomplete NB chain
    std::size_t overlap_drops = 0;        // candidates lost to the greedy overlap rule
    bool had_broken_chain() const { return broken_chains > 0; }
};

inline RelationGrid encode_grid(const std::vector<EntitySpan>& spans, std::size_t n,
                                const TagSchema& schema) {
    RelationGrid grid(n);
    for (std::size_t a = 0; a < spans.size(); ++a) {
        const auto& s = spans[a];
        if (s.start > s.end || s.end >= n)
            throw OverlapError("span (" + std::to_string(s.start) + "," + std::to_string(s.end) +
                               ") out of bounds for n=" + std::to_string(n));
        for (std::size_t b = a + 1; b < spans.size(); ++b)
            if (spans_overlap(s, spans[b]))
                throw OverlapError("overlapping spans at (" + std::to_string(s.start) + "," +
                                   std::to_string(s.end) + ")");
        grid.at(s.end, s.start) = RelationClass::start_end(schema.index_of(s.etype));
        for (std::size_t i = s.start; i < s.end; ++i) grid.at(i, i + 1) = RelationClass::kNeighbor;
    }
    return grid;
}

// Decodes a hard grid into non-overlapping spans.
//   - cells violating placement (NB off the superdiagonal, SE above the
//     diagonal) count as NONE and are reported in stats;
//   - an SE(t) at (e,s) is a candidate (s,e,t), accepted only if every NB cell
//     (i,i+1), s <= i < e, is present (chain continuity);
//   - overlaps are resolved greedily: longer span first, then smaller start.
inline std::vector<EntitySpan> decode_grid(const RelationGrid& grid, const TagSchema& schema,
                                           DecodeStats* stats = nullptr) {
    DecodeStats local;
    std::vector<EntitySpan> candidates;
    for (std::size_t i = 0; i < grid.n; ++i) {
        for (std::size_t j = 0; j < grid.n; ++j) {
            std::size_t cls = grid.at(i, j);
            if (cls == RelationClass::kNone) continue;
            if (cls == RelationClass::kNeighbor) {
                if (j != i + 1) ++local.placement_violations;
                continue;
            }
            // SE lives in the lower triangle including the diagonal: (end, start)
            if (j > i) {
                ++local.placement_violations;
                continue;
            }
            std::size_t s = j, e = i;
            bool chain_ok = true;
            for (std::size_t k = s; k < e; ++k)
                if (grid.at(k, k + 1) != RelationClass::kNeighbor) {
                    chain_ok = false;
                    break;
                }
            if (!chain_ok) {
                ++local.broken_chains;
                continue;
            }
            candidates.push_back({s, e, schema.name(RelationClass::type_index(cls))});
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const EntitySpan& a, const EntitySpan& b) {
        std::size_t la = a.end - a.start, lb = b.end - b.start;
        if (la != lb) return la > lb;
        return a.start < b.start;
    });
    std::vector<EntitySpan> accepted;
    for (const auto& c : candidates) {
        bool clash = false;
        for (const auto& a : accepted)
            if (spans_overlap(c, a)) {
                clash = true;
                break;
            }
        if (clash)
            ++local.overlap_drops;
        else
            accepted.push_back(c);
    }
    std::sort(accepted.begin(), accepted.end(),
              [](const EntitySpan& a, const EntitySpan& b) { return a.start < b.start; });
    if (stats) *stats = local;
    return accepted;
}

struct ScoredDecodeResult {
    std::vector<EntitySpan> spans;
    double confidence = 1.0; // min over entities of their weakest-cell argmax prob
    DecodeStats stats;
};

// Per-cell argmax (tie -> lowest class index), then hard decode. Per-entity
// confidence is the minimum argmax probability over the entity's SE and NB
// cells; sentence confidence is the minimum over entities (1.0 if none).
inline ScoredDecodeResult decode_scored(const ScoredGrid& scored, const TagSchema& schema) {
    scored.validate();
    RelationGrid hard(scored.n);
    std::vector<float> argmax_prob(scored.n * scored.n, 0.0f);
    for (std::size_t i = 0; i < scored.n; ++i) {
        for (std::size_t j = 0; j < scored.n; ++j) {
            std::size_t best = 0;
            float best_p = scored.at(i, j, 0);
            for (std::size_t c = 1; c < scored.n_classes; ++c) {
                float p = scored.at(i, j, c);
                if (p > best_p) {
                    best_p = p;
                    best = c;
                }
            }
            hard.at(i, j) = best;
            argmax_prob[i * scored.n + j] = best_p;
        }
    }
    ScoredDecodeResult out;
    out.spans = decode_grid(hard, schema, &out.stats);
    for (const auto& sp : out.spans) {
        double conf = argmax_prob[sp.end * scored.n + sp.start];
        for (std::size_t k = sp.start; k < sp.end; ++k)
            conf = std::min(conf, static_cast<double>(argmax_prob[k * scored.n + k + 1]));
        out.confidence = std::min(out.confidence, conf);
    }
    return out;
}

// One pseudo-labeled sentence before filtering.
template <typename Payload>
struct PseudoItem {
    Payload sentence;
    std::vector<EntitySpan> spans;
    double confidence = 1.0;
    bool had_broken_chain = false;
};

struct FilterStats {
    std::size_t kept = 0;
    std::size_t dropped_all_o = 0;
    std::size_t dropped_chain = 0;
    std::size_t dropped_threshold = 0;
    std::size_t total() const { return kept + dropped_all_o + dropped_chain + dropped_threshold; }
};

// Applies the three pseudo-label filters in order: all-O, broken chain,
// confidence threshold (strict <). Drop attribution is first-match.
template <typename Payload>
std::vector<PseudoItem<Payload>> filter_pseudo(const std::vector<PseudoItem<Payload>>& items,
                                               const PseudoFilterConfig& cfg,
                                               FilterStats* stats = nullptr) {
    FilterStats local;
    std::vector<PseudoItem<Payload>> kept;
    for (const auto& it : items) {
        if (cfg.drop_all_O && it.spans.empty()) {
            ++local.dropped_all_o;
            continue;
        }
        if (cfg.drop_discontinuous && it.had_broken_chain) {
            ++local.dropped_chain;
            continue;
        }
        if (it.confidence < cfg.confidence_threshold) {
            ++local.dropped_threshold;
            continue;
        }
        ++local.kept;
        kept.push_back(it);
    }
    if (stats) *stats = local;
    return kept;
}

// --- CSV export for inspection tooling ---------------------------------------

// Hard grids: "sentence,i,j,class", non-NONE cells only.
inline void append_grid_csv(std::string& out, std::size_t sentence_index, const RelationGrid& grid,
                            const TagSchema& schema) {
    for (std::size_t i = 0; i < grid.n; ++i)
        for (std::size_t j = 0; j < grid.n; ++j)
            if (grid.at(i, j) != RelationClass::kNone) {
                out += std::to_string(sentence_index);
                out += ',';
                out += std::to_string(i);
                out += ',';
                out += std::to_string(j);
                out += ',';
                out += RelationClass::name(grid.at(i, j), schema);
                out += '\n';
            }
}

// Probabilities: "sentence,i,j,class,prob", all cells and classes.
inline void append_scored_csv(std::string& out, std::size_t sentence_index, const ScoredGrid& grid,
                              const TagSchema& schema) {
    char buf[64];
    for (std::size_t i = 0; i < grid.n; ++i)
        for (std::size_t j = 0; j < grid.n; ++j)
            for (std::size_t c = 0; c < grid.n_classes; ++c) {
                std::snprintf(buf, sizeof(buf), "%zu,%zu,%zu,%s,%.9g\n", sentence_index, i, j,
                              RelationClass::name(c, schema).c_str(),
                              static_cast<double>(grid.at(i, j, c)));
                out += buf;
            }
}

} // namespace mclner
