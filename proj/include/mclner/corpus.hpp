#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mclner/common.hpp"

namespace mclner {

// Ordered entity type inventory. The position of a type in `entity_types`
// defines its class index everywhere downstream (relation classes, logits).
class TagSchema {
public:
    TagSchema() = default;
    explicit TagSchema(std::vector<std::string> types) : types_(std::move(types)) {
        if (types_.empty()) throw ConfigError("schema: entity type list is empty");
        for (std::size_t i = 0; i < types_.size(); ++i) {
            if (types_[i].empty()) throw ConfigError("schema: empty type name");
            for (std::size_t j = i + 1; j < types_.size(); ++j)
                if (types_[i] == types_[j])
                    throw ConfigError("schema: duplicate type name '" + types_[i] + "'");
        }
    }

    std::size_t size() const { return types_.size(); }
    const std::vector<std::string>& entity_types() const { return types_; }
    const std::string& name(std::size_t idx) const { return types_.at(idx); }

    std::optional<std::size_t> find(std::string_view t) const {
        for (std::size_t i = 0; i < types_.size(); ++i)
            if (types_[i] == t) return i;
        return std::nullopt;
    }
    std::size_t index_of(std::string_view t) const {
        auto i = find(t);
        if (!i) throw SchemaError("unknown entity type '" + std::string(t) + "'");
        return *i;
    }

private:
    std::vector<std::string> types_;
};

// Inclusive token span with an entity type.
struct EntitySpan {
    std::size_t start = 0;
    std::size_t end = 0; // inclusive
    std::string etype;

    bool operator==(const EntitySpan&) const = default;
};

inline bool spans_overlap(const EntitySpan& a, const EntitySpan& b) {
    return a.start <= b.end && b.start <= a.end;
}

struct LabeledSentence {
    std::string id;
    std::string language;
    std::vector<std::string> tokens;
    std::vector<std::string> labels; // empty => unlabeled sentence

    bool labeled() const { return !labels.empty(); }
    std::size_t size() const { return tokens.size(); }
};

struct F1Report {
    std::size_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

inline F1Report f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
    F1Report r;
    r.tp = tp;
    r.fp = fp;
    r.fn = fn;
    r.precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    r.recall = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    r.f1 = (r.precision + r.recall > 0.0) ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string f;
    while (is >> f) out.push_back(std::move(f));
    return out;
}

struct ParsedTag {
    char kind; // 'O', 'B', 'I'
    std::string etype;
};

inline ParsedTag parse_tag(const std::string& tag, const TagSchema& schema, std::size_t line_no) {
    if (tag == "O") return {'O', {}};
    if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
        std::string t = tag.substr(2);
        if (!schema.find(t))
            throw SchemaError("line " + std::to_string(line_no) + ": unknown tag type '" + t + "'");
        return {tag[0], std::move(t)};
    }
    throw FormatError("line " + std::to_string(line_no) + ": malformed tag '" + tag + "'");
}

} // namespace detail

// Converts valid BIO labels into spans. Validity (every I continues a same-type
// run) is a precondition; use parse_conll for untrusted input.
inline std::vector<EntitySpan> spans_from_bio(const std::vector<std::string>& labels) {
    std::vector<EntitySpan> spans;
    std::size_t i = 0;
    while (i < labels.size()) {
        const std::string& l = labels[i];
        if (l.size() > 2 && l[0] == 'B' && l[1] == '-') {
            EntitySpan s;
            s.start = i;
            s.etype = l.substr(2);
            std::size_t j = i + 1;
            while (j < labels.size() && labels[j] == "I-" + s.etype) ++j;
            s.end = j - 1;
            spans.push_back(std::move(s));
            i = j;
        } else {
            ++i;
        }
    }
    return spans;
}

inline std::vector<std::string> bio_from_spans(const std::vector<EntitySpan>& spans, std::size_t n) {
    std::vector<std::string> labels(n, "O");
    for (std::size_t a = 0; a < spans.size(); ++a) {
        const auto& s = spans[a];
        if (s.start > s.end || s.end >= n)
            throw OverlapError("span (" + std::to_string(s.start) + "," + std::to_string(s.end) +
                               ") out of bounds for n=" + std::to_string(n));
        for (std::size_t b = a + 1; b < spans.size(); ++b) {
            if (spans_overlap(s, spans[b]))
                throw OverlapError("overlapping spans (" + std::to_string(s.start) + "," +
                                   std::to_string(s.end) + ") and (" + std::to_string(spans[b].start) +
                                   "," + std::to_string(spans[b].end) + ")");
        }
        labels[s.start] = "B-" + s.etype;
        for (std::size_t i = s.start + 1; i <= s.end; ++i) labels[i] = "I-" + s.etype;
    }
    return labels;
}

// CoNLL column format: one token per line, tag in the last whitespace-separated
// column, blank line between sentences. Orphan I-t tags are repaired to B-t and
// logged. Lines whose first column is -DOCSTART- are skipped.
inline std::vector<LabeledSentence> parse_conll(const std::string& text, const TagSchema& schema,
                                                const std::string& language = "src",
                                                Diag* diag = nullptr) {
    std::vector<LabeledSentence> sentences;
    std::vector<std::string> tokens;
    std::vector<std::string> labels;
    bool saw_labeled = false, saw_unlabeled = false;
    std::size_t line_no = 0;

    auto flush = [&]() {
        if (tokens.empty()) return;
        LabeledSentence s;
        s.id = "s" + std::to_string(sentences.size());
        s.language = language;
        s.tokens = std::move(tokens);
        if (saw_labeled) s.labels = std::move(labels);
        sentences.push_back(std::move(s));
        tokens.clear();
        labels.clear();
        saw_labeled = saw_unlabeled = false;
    };

    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto fields = detail::split_ws(line);
        if (fields.empty()) {
            flush();
            continue;
        }
        if (fields[0] == "-DOCSTART-") continue;
        if (fields.size() == 1) {
            if (saw_labeled)
                throw FormatError("line " + std::to_string(line_no) +
                                  ": unlabeled token inside a labeled sentence");
            saw_unlabeled = true;
            tokens.push_back(std::move(fields[0]));
            continue;
        }
        if (saw_unlabeled)
            throw FormatError("line " + std::to_string(line_no) +
                              ": labeled token inside an unlabeled sentence");
        saw_labeled = true;
        auto tag = detail::parse_tag(fields.back(), schema, line_no);
        // repair orphan I-t: no preceding B-t/I-t of the same type
        if (tag.kind == 'I') {
            bool continues = !labels.empty() &&
                             (labels.back() == "B-" + tag.etype || labels.back() == "I-" + tag.etype);
            if (!continues) {
                diag_log(diag, "line " + std::to_string(line_no) + ": orphan I-" + tag.etype +
                                   " repaired to B-" + tag.etype);
                tag.kind = 'B';
            }
        }
        tokens.push_back(std::move(fields[0]));
        labels.push_back(tag.kind == 'O' ? std::string("O")
                                         : std::string(1, tag.kind) + "-" + tag.etype);
    }
    flush();
    return sentences;
}

// Symmetric serializer for parse_conll. Emits "token tag" (or bare tokens for
// unlabeled sentences), LF line endings, one blank line after each sentence.
inline std::string write_conll(const std::vector<LabeledSentence>& sentences) {
    std::string out;
    for (const auto& s : sentences) {
        if (s.labeled() && s.labels.size() != s.tokens.size())
            throw ContractError("sentence " + s.id + ": label/token length mismatch");
        for (std::size_t i = 0; i < s.tokens.size(); ++i) {
            out += s.tokens[i];
            if (s.labeled()) {
                out += ' ';
                out += s.labels[i];
            }
            out += '\n';
        }
        out += '\n';
    }
    return out;
}

// Micro-averaged exact-match entity F1 over per-sentence span lists.
inline F1Report entity_f1(const std::vector<std::vector<EntitySpan>>& gold,
                          const std::vector<std::vector<EntitySpan>>& pred) {
    if (gold.size() != pred.size())
        throw PairingError("entity_f1: gold has " + std::to_string(gold.size()) +
                           " sentences, pred has " + std::to_string(pred.size()));
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t k = 0; k < gold.size(); ++k) {
        std::size_t match = 0;
        for (const auto& p : pred[k])
            if (std::find(gold[k].begin(), gold[k].end(), p) != gold[k].end()) ++match;
        tp += match;
        fp += pred[k].size() - match;
        fn += gold[k].size() - match;
    }
    return f1_from_counts(tp, fp, fn);
}

} // namespace mclner
