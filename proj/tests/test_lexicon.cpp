#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "mclner/common.hpp"
#include "mclner/lexicon.hpp"

using namespace mclner;

TEST_CASE("token join and split invert each other") {
    std::vector<std::string> toks = {"new", "york", "city"};
    CHECK(join_tokens(toks, 0, 2) == "new york city");
    CHECK(join_tokens(toks, 1, 1) == "york");
    CHECK(split_ws("new york city") == toks);
    CHECK(split_ws("  a\t b  ") == std::vector<std::string>{"a", "b"});
    CHECK(split_ws("").empty());
    CHECK(split_ws(" \t ").empty());
}

TEST_CASE("lexicon stores phrases and guards conflicts") {
    BilingualLexicon lex;
    CHECK(lex.empty());
    lex.add("london", {"nodnol"});
    lex.add("new york", {"kroy", "wen"});
    CHECK(lex.size() == 2);
    CHECK(lex.contains("london"));
    CHECK(!lex.contains("paris"));
    REQUIRE(lex.find("new york") != nullptr);
    CHECK(*lex.find("new york") == std::vector<std::string>{"kroy", "wen"});
    CHECK(lex.find("paris") == nullptr);
    CHECK(lex.max_source_len() == 2);

    // re-adding the identical pair is a no-op
    CHECK_NOTHROW(lex.add("london", {"nodnol"}));
    CHECK(lex.size() == 2);

    // a different image for the same phrase is a conflict
    CHECK_THROWS_AS(lex.add("london", {"other"}), FormatError);
    CHECK_THROWS_AS(lex.add("", {"x"}), FormatError);
    CHECK_THROWS_AS(lex.add("x", {}), FormatError);
}

TEST_CASE("lexicon TSV round-trips with sorted deterministic output") {
    BilingualLexicon lex;
    lex.add("zebra", {"arbez"});
    lex.add("apple tree", {"eert", "elppa"});
    const std::string tsv = lex.to_tsv();
    CHECK(tsv == "apple tree\teert elppa\nzebra\tarbez\n");

    BilingualLexicon back = BilingualLexicon::parse_tsv(tsv);
    CHECK(back.size() == 2);
    CHECK(back.to_tsv() == tsv);
    CHECK(*back.find("apple tree") == std::vector<std::string>{"eert", "elppa"});
    CHECK(back.max_source_len() == 2);
}

TEST_CASE("TSV parsing tolerates CRLF and blank lines, rejects bad rows") {
    auto lex = BilingualLexicon::parse_tsv("a\tb\r\n\nc d\te f\r\n");
    CHECK(lex.size() == 2);
    CHECK(*lex.find("a") == std::vector<std::string>{"b"});
    CHECK(*lex.find("c d") == std::vector<std::string>{"e", "f"});

    // extra internal whitespace normalizes to single-space keys
    auto norm = BilingualLexicon::parse_tsv("c  d\te   f\n");
    CHECK(norm.contains("c d"));

    try {
        BilingualLexicon::parse_tsv("a\tb\nno_tab_here\n");
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    try {
        BilingualLexicon::parse_tsv("a\tb\n\nx\t \n");
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        CHECK(std::string(e.what()).find("empty side") != std::string::npos);
    }
    CHECK_THROWS_AS(BilingualLexicon::parse_tsv("\tb\n"), FormatError);
    CHECK(BilingualLexicon::parse_tsv("").empty());
}
