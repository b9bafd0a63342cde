#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mclner/common.hpp"

namespace mclner {

inline std::string join_tokens(const std::vector<std::string>& tokens, std::size_t from,
                               std::size_t to_incl) {
    std::string out;
    for (std::size_t i = from; i <= to_incl; ++i) {
        if (i > from) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

inline std::vector<std::string> split_ws(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
        std::size_t j = i;
        while (j < text.size() && text[j] != ' ' && text[j] != '\t') ++j;
        if (j > i) out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

// Source phrase -> target phrase, both token sequences. Keys are unique and
// both sides non-empty. Ordered storage keeps serialization deterministic.
class BilingualLexicon {
public:
    void add(const std::string& source_phrase, std::vector<std::string> target_tokens) {
        if (source_phrase.empty() || target_tokens.empty())
            throw FormatError("lexicon entry with an empty side");
        auto it = entries_.find(source_phrase);
        if (it != entries_.end()) {
            if (it->second != target_tokens)
                throw FormatError("conflicting lexicon entries for: " + source_phrase);
            return;
        }
        max_source_len_ = std::max(max_source_len_, split_ws(source_phrase).size());
        entries_.emplace(source_phrase, std::move(target_tokens));
    }

    const std::vector<std::string>* find(const std::string& source_phrase) const {
        auto it = entries_.find(source_phrase);
        return it == entries_.end() ? nullptr : &it->second;
    }

    bool contains(const std::string& source_phrase) const {
        return entries_.count(source_phrase) > 0;
    }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::size_t max_source_len() const { return max_source_len_; }

    const std::map<std::string, std::vector<std::string>>& entries() const { return entries_; }

    // "source phrase<TAB>target phrase", tokens space-separated inside each side
    static BilingualLexicon parse_tsv(std::string_view text) {
        BilingualLexicon lex;
        std::size_t line_no = 0, pos = 0;
        while (pos <= text.size()) {
            std::size_t eol = text.find('\n', pos);
            std::string_view line =
                text.substr(pos, eol == std::string_view::npos ? text.size() - pos : eol - pos);
            pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            if (line.empty()) continue;
            std::size_t tab = line.find('\t');
            if (tab == std::string_view::npos)
                throw FormatError("lexicon line " + std::to_string(line_no) + ": no tab separator");
            auto src = split_ws(line.substr(0, tab));
            auto dst = split_ws(line.substr(tab + 1));
            if (src.empty() || dst.empty())
                throw FormatError("lexicon line " + std::to_string(line_no) + ": empty side");
            std::string key;
            for (std::size_t i = 0; i < src.size(); ++i) {
                if (i) key.push_back(' ');
                key += src[i];
            }
            lex.add(key, std::move(dst));
        }
        return lex;
    }

    std::string to_tsv() const {
        std::string out;
        for (const auto& [src, dst] : entries_) {
            out += src;
            out.push_back('\t');
            for (std::size_t i = 0; i < dst.size(); ++i) {
                if (i) out.push_back(' ');
                out += dst[i];
            }
            out.push_back('\n');
        }
        return out;
    }

private:
    std::map<std::string, std::vector<std::string>> entries_;
    std::size_t max_source_len_ = 0;
};

} // namespace mclner
