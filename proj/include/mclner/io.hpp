#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "mclner/common.hpp"

namespace mclner {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open file: " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw FormatError("read failed: " + path);
    return data;
}

// Writes to "<path>.tmp" then renames, so readers never observe a torn file.
inline void write_file_atomic(const std::string& path, std::string_view data) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot open file for writing: " + tmp);
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        out.flush();
        if (!out) throw FormatError("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw FormatError("rename failed: " + tmp + " -> " + path + ": " + ec.message());
}

inline std::uint64_t file_fnv(const std::string& path) { return fnv1a64(read_file(path)); }

inline void append_u64_le(std::string& out, std::uint64_t x) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

inline std::uint64_t read_u64_le(const char* p) {
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i)
        x |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return x;
}

inline void append_u32_le(std::string& out, std::uint32_t x) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

inline std::uint32_t read_u32_le(const char* p) {
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i)
        x |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return x;
}

} // namespace mclner
