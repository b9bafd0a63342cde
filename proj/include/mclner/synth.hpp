#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mclner/common.hpp"
#include "mclner/corpus.hpp"
#include "mclner/lexicon.hpp"

namespace mclner {

struct SynthConfig {
    std::size_t n_sentences = 1000;
    TagSchema schema{std::vector<std::string>{"LOC", "PER", "ORG"}};
    std::vector<std::vector<std::string>> templates; // literal tokens; "{TYPE}" marks a slot
    std::map<std::string, std::vector<std::string>> gazetteers; // type -> phrases
    std::string cipher = "reverse_suffix";
    std::uint64_t seed = 0;

    void validate() const {
        if (n_sentences == 0) throw ConfigError("synth: n_sentences must be positive");
        if (templates.empty()) throw ConfigError("synth: no templates");
        for (const auto& tpl : templates) {
            if (tpl.empty()) throw ConfigError("synth: empty template");
            for (const auto& tok : templates_slot_types(tpl)) {
                if (!schema.find(tok))
                    throw ConfigError("synth: template slot type '" + tok + "' not in schema");
                auto it = gazetteers.find(tok);
                if (it == gazetteers.end() || it->second.empty())
                    throw ConfigError("synth: empty gazetteer for slot type '" + tok + "'");
            }
        }
    }

    static std::vector<std::string> templates_slot_types(const std::vector<std::string>& tpl) {
        std::vector<std::string> out;
        for (const auto& tok : tpl)
            if (tok.size() > 2 && tok.front() == '{' && tok.back() == '}')
                out.push_back(tok.substr(1, tok.size() - 2));
        return out;
    }
};

// --- word ciphers ---------------------------------------------------------------

inline std::string reverse_codepoints(std::string_view s) {
    std::vector<std::string_view> cps;
    std::size_t i = 0;
    while (i < s.size()) {
        const unsigned char c = static_cast<unsigned char>(s[i]);
        std::size_t len = 1;
        if ((c & 0xE0) == 0xC0) len = 2;
        else if ((c & 0xF0) == 0xE0) len = 3;
        else if ((c & 0xF8) == 0xF0) len = 4;
        if (i + len > s.size()) len = 1;
        cps.push_back(s.substr(i, len));
        i += len;
    }
    std::string out;
    out.reserve(s.size());
    for (auto it = cps.rbegin(); it != cps.rend(); ++it) out.append(*it);
    return out;
}

// "identity" keeps the token; "reverse_suffix" reverses its code points and
// appends "_q" ("london" -> "nodnol_q"), so the two languages share no surface
// vocabulary while the mapping stays an exact oracle.
inline std::string cipher_token(const std::string& token, const std::string& cipher) {
    if (cipher == "identity") return token;
    if (cipher == "reverse_suffix") return reverse_codepoints(token) + "_q";
    throw ConfigError("unknown cipher: " + cipher);
}

// --- generation -------------------------------------------------------------------

// Deterministic source corpus: per sentence, one template draw plus one
// gazetteer draw per slot, all from a per-sentence split seed.
inline std::vector<LabeledSentence> gen_source(const SynthConfig& cfg) {
    cfg.validate();
    std::vector<LabeledSentence> out;
    out.reserve(cfg.n_sentences);
    for (std::size_t s = 0; s < cfg.n_sentences; ++s) {
        LabeledSentence sent;
        sent.id = "s" + std::to_string(s);
        sent.language = "src";
        Rng rng(derive_seed(cfg.seed, sent.id));
        const auto& tpl = cfg.templates[rng.next_index(cfg.templates.size())];
        for (const auto& tok : tpl) {
            if (tok.size() > 2 && tok.front() == '{' && tok.back() == '}') {
                const std::string type = tok.substr(1, tok.size() - 2);
                const auto& pool = cfg.gazetteers.at(type);
                const auto phrase = split_ws(pool[rng.next_index(pool.size())]);
                for (std::size_t k = 0; k < phrase.size(); ++k) {
                    sent.tokens.push_back(phrase[k]);
                    sent.labels.push_back((k == 0 ? "B-" : "I-") + type);
                }
            } else {
                sent.tokens.push_back(tok);
                sent.labels.push_back("O");
            }
        }
        out.push_back(std::move(sent));
    }
    return out;
}

// every gazetteer phrase -> its per-token ciphered image
inline BilingualLexicon derive_lexicon(const SynthConfig& cfg) {
    BilingualLexicon lex;
    for (const auto& [type, phrases] : cfg.gazetteers) {
        for (const auto& phrase : phrases) {
            const auto tokens = split_ws(phrase);
            std::vector<std::string> image;
            image.reserve(tokens.size());
            for (const auto& tok : tokens) image.push_back(cipher_token(tok, cfg.cipher));
            lex.add(join_tokens(tokens, 0, tokens.size() - 1), std::move(image));
        }
    }
    return lex;
}

// Ciphers non-entity tokens one by one and maps entity phrases through the
// lexicon; labels are re-spanned over the (possibly longer) images and the
// gold is kept so pseudo-label quality stays measurable.
inline LabeledSentence derive_target(const LabeledSentence& sentence,
                                     const BilingualLexicon& lexicon, const std::string& cipher) {
    if (!sentence.labeled()) throw ContractError("derive_target: unlabeled sentence");
    LabeledSentence out;
    out.id = sentence.id;
    out.language = "tgt";
    const auto spans = spans_from_bio(sentence.labels);
    std::vector<EntitySpan> new_spans;
    std::size_t pos = 0, span_idx = 0;
    while (pos < sentence.size()) {
        if (span_idx < spans.size() && spans[span_idx].start == pos) {
            const auto& sp = spans[span_idx];
            const std::string phrase = join_tokens(sentence.tokens, sp.start, sp.end);
            const auto* image = lexicon.find(phrase);
            if (!image)
                throw CoverageError("derive_target: no lexicon entry for phrase '" + phrase +
                                    "' in sentence " + sentence.id);
            const std::size_t lo = out.tokens.size();
            for (const auto& tok : *image) out.tokens.push_back(tok);
            new_spans.push_back({lo, out.tokens.size() - 1, sp.etype});
            pos = sp.end + 1;
            ++span_idx;
        } else {
            out.tokens.push_back(cipher_token(sentence.tokens[pos], cipher));
            ++pos;
        }
    }
    out.labels = bio_from_spans(new_spans, out.tokens.size());
    return out;
}

inline std::vector<LabeledSentence> derive_targets(const std::vector<LabeledSentence>& corpus,
                                                   const BilingualLexicon& lexicon,
                                                   const std::string& cipher) {
    std::vector<LabeledSentence> out;
    out.reserve(corpus.size());
    for (const auto& s : corpus) out.push_back(derive_target(s, lexicon, cipher));
    return out;
}

// --- built-in benchmark -------------------------------------------------------------

// Fixed template/gazetteer suite used by the synthetic transfer benchmark;
// entity words never collide with filler words so span supervision is clean.
inline SynthConfig builtin_benchmark_config(std::size_t n_sentences, std::uint64_t seed) {
    SynthConfig cfg;
    cfg.n_sentences = n_sentences;
    cfg.seed = seed;
    cfg.cipher = "reverse_suffix";
    cfg.schema = TagSchema{std::vector<std::string>{"LOC", "PER", "ORG"}};
    cfg.gazetteers["LOC"] = {
        "avalon",       "brindel",      "corwyn bay",   "dunmore",
        "eastvale",     "fenwick",      "glenharbor",   "harlow ridge",
        "ironport",     "jasper falls", "kelmsworth",   "lunden cove",
        "mirefield",    "northgate",    "oakmoor",      "pellham",
    };
    cfg.gazetteers["PER"] = {
        "alric",        "bethan mora",  "cedric vale",  "delia",
        "edmund crane", "farida",       "gwen tasker",  "hollis",
        "imogen reed",  "jorek",        "katrin volen", "lysander",
        "mira keld",    "nolan frost",  "odette",       "pavel rusk",
    };
    cfg.gazetteers["ORG"] = {
        "acme forge",     "bellcraft",      "cinder guild",  "drayton sons",
        "emberline",      "fallow circle",  "gearhaven",     "holt union",
        "ironquill press","jade syndicate", "kesler bank",   "loomcraft",
        "meridian trust", "northwind co",   "orchid labs",   "pike brothers",
    };
    const std::vector<std::string> raw = {
        "the mayor of {LOC} met {PER} yesterday",
        "{PER} serves at {ORG} in {LOC}",
        "{ORG} opened a new office near {LOC}",
        "reporters followed {PER} across the old bridge",
        "the quarterly review from {ORG} surprised many readers",
        "{PER} and {PER} debated trade policy all evening",
        "travelers praised the markets of {LOC}",
        "{ORG} hired {PER} to lead the harbor project",
        "heavy rain delayed every train to {LOC} this week",
        "the council thanked {PER} for years of quiet service",
        "local farmers sold grain at fair prices",
        "the festival ended without any trouble at all",
        "{LOC} celebrated when {ORG} funded the library",
        "critics from {LOC} toured {ORG} before the vote",
    };
    for (const auto& line : raw) cfg.templates.push_back(split_ws(line));
    return cfg;
}

} // namespace mclner
