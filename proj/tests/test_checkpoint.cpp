#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "mclner/checkpoint.hpp"
#include "mclner/common.hpp"
#include "mclner/io.hpp"
#include "mclner/tensor.hpp"

using namespace mclner;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("mclner_ck_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const char* name) const { return (path / name).string(); }
};

} // namespace

TEST_CASE("checkpoints round-trip tensors, order, and config") {
    Tensor a({2, 3});
    for (std::size_t i = 0; i < a.size(); ++i) a.v[i] = 0.5f * static_cast<float>(i) - 1.0f;
    Tensor b({4});
    b.v = {1.0f, -2.5f, 3.25f, 0.0f};
    nlohmann::json cfg = {{"d_model", 16}, {"note", "abc"}};

    const std::string blob = serialize_checkpoint({{"w", &a}, {"bias", &b}}, cfg);
    Checkpoint ck = parse_checkpoint(blob, "mem");

    REQUIRE(ck.tensors.size() == 2);
    CHECK(ck.tensors[0].first == "w");
    CHECK(ck.tensors[1].first == "bias");
    CHECK(ck.tensors[0].second.shape == Shape{2, 3});
    CHECK(ck.tensors[0].second.v == a.v);
    CHECK(ck.tensors[1].second.v == b.v);
    CHECK(ck.config["d_model"] == 16);
    CHECK(ck.config["note"] == "abc");
    CHECK(ck.find("bias") != nullptr);
    CHECK(ck.find("bias")->v[2] == 3.25f);
    CHECK(ck.find("missing") == nullptr);

    // serialization is deterministic
    CHECK(serialize_checkpoint({{"w", &a}, {"bias", &b}}, cfg) == blob);
}

TEST_CASE("save and load go through the filesystem atomically") {
    TempDir dir;
    Tensor a({3});
    a.v = {1.0f, 2.0f, 3.0f};
    const std::string path = dir.file("model.ck");
    save_checkpoint(path, {{"a", &a}}, nlohmann::json::object());
    Checkpoint ck = load_checkpoint(path);
    REQUIRE(ck.tensors.size() == 1);
    CHECK(ck.tensors[0].second.v == a.v);
    // no temp files left behind
    std::size_t n_entries = 0;
    for (const auto& e : fs::directory_iterator(dir.path)) {
        (void)e;
        ++n_entries;
    }
    CHECK(n_entries == 1);

    // overwrite in place with new content
    a.v = {9.0f, 8.0f, 7.0f};
    save_checkpoint(path, {{"a", &a}}, nlohmann::json::object());
    CHECK(load_checkpoint(path).tensors[0].second.v == a.v);
}

TEST_CASE("malformed checkpoints are rejected with format errors") {
    Tensor a({2});
    a.v = {1.0f, 2.0f};
    const std::string good = serialize_checkpoint({{"a", &a}}, nlohmann::json::object());

    SECTION("bad magic") {
        std::string bad = good;
        bad[0] = 'X';
        CHECK_THROWS_AS(parse_checkpoint(bad, "t"), FormatError);
    }
    SECTION("too short for a header") {
        CHECK_THROWS_AS(parse_checkpoint("MCLNER01", "t"), FormatError);
    }
    SECTION("metadata length overruns the file") {
        std::string bad = good.substr(0, 20);
        CHECK_THROWS_AS(parse_checkpoint(bad, "t"), FormatError);
    }
    SECTION("payload shorter than the declared shapes") {
        std::string bad = good.substr(0, good.size() - 4);
        CHECK_THROWS_AS(parse_checkpoint(bad, "t"), FormatError);
    }
    SECTION("trailing bytes after the payload") {
        std::string bad = good + "zz";
        try {
            parse_checkpoint(bad, "somefile.ck");
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("trailing") != std::string::npos);
            CHECK(std::string(e.what()).find("somefile.ck") != std::string::npos);
            CHECK(e.exit_code() == 2);
        }
    }
    SECTION("metadata that is not JSON") {
        std::string bad;
        bad.append(kCheckpointMagic, 8);
        append_u64_le(bad, 3);
        bad += "{x}";
        CHECK_THROWS_AS(parse_checkpoint(bad, "t"), FormatError);
    }
    SECTION("metadata missing required keys") {
        std::string bad;
        bad.append(kCheckpointMagic, 8);
        const std::string meta = "{\"tensors\":[]}";
        append_u64_le(bad, meta.size());
        bad += meta;
        CHECK_THROWS_AS(parse_checkpoint(bad, "t"), FormatError);
    }
}

TEST_CASE("io primitives round-trip integers and files") {
    std::string buf;
    append_u64_le(buf, 0x0123456789abcdefULL);
    append_u32_le(buf, 0xdeadbeefU);
    REQUIRE(buf.size() == 12);
    CHECK(static_cast<unsigned char>(buf[0]) == 0xef); // little-endian low byte first
    CHECK(read_u64_le(buf.data()) == 0x0123456789abcdefULL);
    CHECK(read_u32_le(buf.data() + 8) == 0xdeadbeefU);

    TempDir dir;
    const std::string path = dir.file("blob.bin");
    std::string payload("hello\0world", 11);
    write_file_atomic(path, payload);
    CHECK(read_file(path) == payload);
    CHECK(file_fnv(path) == fnv1a64(payload));
    CHECK_THROWS_AS(read_file(dir.file("missing.bin")), FormatError);
}
