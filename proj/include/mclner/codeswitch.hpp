#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mclner/common.hpp"
#include "mclner/corpus.hpp"
#include "mclner/lexicon.hpp"
#include "mclner/relcodec.hpp"

namespace mclner {

enum class SwitchScope { entities_only, entities_and_phrases };

struct CodeSwitchConfig {
    double p_substitute = 0.5;
    SwitchScope scope = SwitchScope::entities_only;
    std::uint64_t seed = 0;

    void validate() const {
        if (p_substitute < 0.0 || p_substitute > 1.0)
            throw ConfigError("codeswitch: p_substitute must be in [0,1]");
    }
};

struct Substitution {
    std::size_t src_start, src_end; // inclusive source token range
    std::size_t dst_start, dst_end; // inclusive switched token range
    bool is_entity;

    bool length_preserved() const { return src_end - src_start == dst_end - dst_start; }
};

// Source sentence with its code-switched counterpart. token_map is total over
// source indices; tokens inside a length-changing substitution share the whole
// image range, everything else maps one-to-one.
struct AlignedPair {
    LabeledSentence source;
    LabeledSentence switched;
    std::vector<std::pair<std::size_t, std::size_t>> token_map; // (lo, hi) inclusive
    std::vector<Substitution> substitutions;
};

struct AlignedCell {
    std::size_t si, sj; // cell in the source grid
    std::size_t ci, cj; // cell in the switched grid
    std::size_t cls;    // relation class at the source cell
};

struct RelationAlignment {
    std::vector<AlignedCell> pairs;

    bool empty() const { return pairs.empty(); }
    std::size_t size() const { return pairs.size(); }
};

namespace detail {

struct SwitchUnit {
    std::size_t start, end; // inclusive source range
    bool is_entity;
    std::string phrase; // space-joined source tokens
};

// entity units in sentence order, then (optionally) maximal-length lexicon
// matches over the non-entity stretches; units never overlap
inline std::vector<SwitchUnit> switch_units(const LabeledSentence& s,
                                            const BilingualLexicon& lexicon, SwitchScope scope) {
    std::vector<SwitchUnit> units;
    std::vector<bool> taken(s.size(), false);
    for (const auto& span : spans_from_bio(s.labels)) {
        units.push_back({span.start, span.end, true, join_tokens(s.tokens, span.start, span.end)});
        for (std::size_t i = span.start; i <= span.end; ++i) taken[i] = true;
    }
    if (scope == SwitchScope::entities_and_phrases && !lexicon.empty()) {
        const std::size_t cap = std::max<std::size_t>(lexicon.max_source_len(), 1);
        std::size_t i = 0;
        while (i < s.size()) {
            if (taken[i]) {
                ++i;
                continue;
            }
            std::size_t free_run = 0;
            while (i + free_run < s.size() && !taken[i + free_run]) ++free_run;
            bool matched = false;
            for (std::size_t len = std::min(cap, free_run); len >= 1 && !matched; --len) {
                std::string phrase = join_tokens(s.tokens, i, i + len - 1);
                if (lexicon.contains(phrase)) {
                    units.push_back({i, i + len - 1, false, std::move(phrase)});
                    i += len;
                    matched = true;
                }
            }
            if (!matched) ++i;
        }
        std::sort(units.begin(), units.end(),
                  [](const SwitchUnit& a, const SwitchUnit& b) { return a.start < b.start; });
    }
    return units;
}

} // namespace detail

// Replaces each candidate phrase independently with probability p by its
// lexicon image. Deterministic per (seed, sentence id); an entity phrase the
// draw selects but the lexicon misses stays unsubstituted and is logged.
inline AlignedPair make_codeswitch(const LabeledSentence& sentence, const BilingualLexicon& lexicon,
                                   const CodeSwitchConfig& cfg, Diag* diag = nullptr) {
    cfg.validate();
    if (!sentence.labeled()) throw ContractError("make_codeswitch: unlabeled sentence");
    Rng rng(derive_seed(cfg.seed, sentence.id));

    auto units = detail::switch_units(sentence, lexicon, cfg.scope);
    struct Planned {
        detail::SwitchUnit unit;
        const std::vector<std::string>* image; // null = keep source tokens
    };
    std::vector<Planned> plan;
    for (auto& u : units) {
        const bool chosen = rng.next_double() < cfg.p_substitute;
        const std::vector<std::string>* image = nullptr;
        if (chosen) {
            image = lexicon.find(u.phrase);
            if (!image && u.is_entity)
                diag_log(diag, "codeswitch: no lexicon entry for entity phrase '" + u.phrase +
                                   "' in sentence " + sentence.id + "; kept in source language");
        }
        plan.push_back({std::move(u), image});
    }

    AlignedPair out;
    out.source = sentence;
    out.switched.id = sentence.id;
    out.switched.language = "cs";
    out.token_map.resize(sentence.size());

    std::vector<EntitySpan> switched_spans;
    const auto src_spans = spans_from_bio(sentence.labels);

    std::size_t src_pos = 0, plan_idx = 0;
    while (src_pos < sentence.size()) {
        if (plan_idx < plan.size() && plan[plan_idx].unit.start == src_pos) {
            const auto& p = plan[plan_idx];
            const std::size_t s = p.unit.start, e = p.unit.end;
            const std::size_t dst_lo = out.switched.tokens.size();
            if (p.image) {
                for (const auto& tok : *p.image) out.switched.tokens.push_back(tok);
                const std::size_t dst_hi = out.switched.tokens.size() - 1;
                if (p.image->size() == e - s + 1) {
                    for (std::size_t k = 0; k <= e - s; ++k)
                        out.token_map[s + k] = {dst_lo + k, dst_lo + k};
                } else {
                    for (std::size_t k = 0; k <= e - s; ++k)
                        out.token_map[s + k] = {dst_lo, dst_hi};
                }
                out.substitutions.push_back({s, e, dst_lo, dst_hi, p.unit.is_entity});
            } else {
                for (std::size_t k = s; k <= e; ++k) {
                    out.token_map[k] = {out.switched.tokens.size(), out.switched.tokens.size()};
                    out.switched.tokens.push_back(sentence.tokens[k]);
                }
            }
            src_pos = e + 1;
            ++plan_idx;
        } else {
            out.token_map[src_pos] = {out.switched.tokens.size(), out.switched.tokens.size()};
            out.switched.tokens.push_back(sentence.tokens[src_pos]);
            ++src_pos;
        }
    }

    for (const auto& span : src_spans)
        switched_spans.push_back(
            {out.token_map[span.start].first, out.token_map[span.end].second, span.etype});
    out.switched.labels = bio_from_spans(switched_spans, out.switched.size());
    return out;
}

// Aligned relation cells between the source grid and the (implicit) switched
// grid. SE cells always map through image endpoints; NB cells survive unless
// their entity was replaced by an image of different length; NONE cells are
// never aligned.
inline RelationAlignment align_relations(const AlignedPair& pair, const RelationGrid& src_grid) {
    if (src_grid.n != pair.source.size())
        throw ShapeError("align_relations: grid size " + std::to_string(src_grid.n) +
                         " vs sentence length " + std::to_string(pair.source.size()));
    // unit id per source token; SIZE_MAX = unsubstituted
    std::vector<std::size_t> unit_of(pair.source.size(), static_cast<std::size_t>(-1));
    for (std::size_t u = 0; u < pair.substitutions.size(); ++u)
        for (std::size_t k = pair.substitutions[u].src_start; k <= pair.substitutions[u].src_end;
             ++k)
            unit_of[k] = u;

    RelationAlignment out;
    const std::size_t n = src_grid.n;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t cls = src_grid.at(i, j);
            if (cls == RelationClass::kNone) continue;
            if (cls == RelationClass::kNeighbor) {
                const std::size_t a = i, b = j; // b = a + 1 by placement
                const std::size_t ua = unit_of[a], ub = unit_of[b];
                const bool both_free = ua == static_cast<std::size_t>(-1) &&
                                       ub == static_cast<std::size_t>(-1);
                const bool one_free = (ua == static_cast<std::size_t>(-1)) !=
                                      (ub == static_cast<std::size_t>(-1));
                const bool same_preserved = ua != static_cast<std::size_t>(-1) && ua == ub &&
                                            pair.substitutions[ua].length_preserved();
                if (both_free || one_free || same_preserved)
                    out.pairs.push_back(
                        {i, j, pair.token_map[a].second, pair.token_map[b].first, cls});
            } else {
                out.pairs.push_back(
                    {i, j, pair.token_map[i].second, pair.token_map[j].first, cls});
            }
        }
    }
    return out;
}

// --- sidecar serialization -----------------------------------------------------

// One JSON object per sentence: {"token_map":[[lo,hi],...],"relations":[[si,sj,ci,cj],...]}
inline std::string alignment_sidecar_line(const AlignedPair& pair,
                                          const RelationAlignment& alignment) {
    nlohmann::json j;
    j["token_map"] = nlohmann::json::array();
    for (const auto& [lo, hi] : pair.token_map) j["token_map"].push_back({lo, hi});
    j["relations"] = nlohmann::json::array();
    for (const auto& c : alignment.pairs) j["relations"].push_back({c.si, c.sj, c.ci, c.cj});
    return j.dump();
}

} // namespace mclner
