#pragma once

#include "pianotimbre/error.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace pt::detail {

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path))
        fail(ErrorCode::MissingFile, path.string());
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCode::IoFailure, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_text(const std::filesystem::path& path)
{
    const auto bytes = read_bytes(path);
    return {bytes.begin(), bytes.end()};
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorCode::IoFailure, "cannot write " + path.string());
    out << text;
    if (!out)
        fail(ErrorCode::IoFailure, "write failed for " + path.string());
}

} // namespace pt::detail
