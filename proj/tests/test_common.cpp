#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "mclner/common.hpp"

using namespace mclner;

TEST_CASE("fnv1a64 matches the reference vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
    CHECK(fnv1a64("ab") == fnv1a64("b", fnv1a64("a")));
}

TEST_CASE("splitmix64 matches the reference sequence for seed 0") {
    CHECK(splitmix64(0x0000000000000000ull) == 0xe220a8397b1dcdafull);
    std::uint64_t s2 = 0x9e3779b97f4a7c15ull; // state after one step
    CHECK(splitmix64(s2) == 0x6e789e6aa1b965f4ull);
}

TEST_CASE("derive_seed separates streams") {
    CHECK(derive_seed(7, "dropout") == derive_seed(7, "dropout"));
    CHECK(derive_seed(7, "dropout") != derive_seed(7, "order"));
    CHECK(derive_seed(7, "dropout") != derive_seed(8, "dropout"));
    CHECK(derive_seed(7, {1, 2}) == derive_seed(7, {1, 2}));
    CHECK(derive_seed(7, {1, 2}) != derive_seed(7, {2, 1}));
    CHECK(derive_seed(7, {1}) != derive_seed(7, {1, 0}));
}

TEST_CASE("rng is reproducible and in range") {
    Rng a(42), b(42), c(43);
    bool same = true, differs = false;
    for (int i = 0; i < 100; ++i) {
        auto x = a.next_u64();
        same = same && (x == b.next_u64());
        differs = differs || (x != c.next_u64());
    }
    CHECK(same);
    CHECK(differs);

    Rng r(1);
    for (int i = 0; i < 1000; ++i) {
        double d = r.next_double();
        REQUIRE(d >= 0.0);
        REQUIRE(d < 1.0);
    }
    for (int i = 0; i < 1000; ++i) REQUIRE(r.next_index(7) < 7);
    double u = r.uniform(-2.0, 3.0);
    CHECK(u >= -2.0);
    CHECK(u < 3.0);
}

TEST_CASE("sample_without_replacement draws distinct in-range indices") {
    Rng r(5);
    for (std::size_t n : {1u, 4u, 17u}) {
        for (std::size_t k : {0u, 1u, 3u, 17u, 40u}) {
            auto got = sample_without_replacement(n, k, r);
            CHECK(got.size() == std::min(n, k));
            std::set<std::size_t> uniq(got.begin(), got.end());
            CHECK(uniq.size() == got.size());
            for (auto v : got) REQUIRE(v < n);
        }
    }
    // full draw is a permutation
    auto full = sample_without_replacement(8, 8, r);
    std::sort(full.begin(), full.end());
    for (std::size_t i = 0; i < 8; ++i) CHECK(full[i] == i);
}

TEST_CASE("shuffle_indices permutes deterministically") {
    std::vector<std::size_t> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::vector<std::size_t> w = v;
    Rng a(11), b(11);
    shuffle_indices(v, a);
    shuffle_indices(w, b);
    CHECK(v == w);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
}

TEST_CASE("error classes map to exit codes") {
    CHECK(ConfigError("x").exit_code() == 1);
    CHECK(FormatError("x").exit_code() == 2);
    CHECK(SchemaError("x").exit_code() == 2);
    CHECK(OverlapError("x").exit_code() == 2);
    CHECK(PairingError("x").exit_code() == 2);
    CHECK(CoverageError("x").exit_code() == 2);
    CHECK(ShapeError("x").exit_code() == 3);
    CHECK(NumericError("x").exit_code() == 3);
    CHECK(ContractError("x").exit_code() == 3);
}
