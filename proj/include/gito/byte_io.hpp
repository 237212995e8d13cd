#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gito/checkpoint.hpp"

namespace gito {

/// Little-endian encoder for the binary formats.
class ByteWriter {
public:
    void magic(std::string_view tag) { bytes(tag); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void f64(double v);
    void bytes(std::string_view s) { buffer_.insert(buffer_.end(), s.begin(), s.end()); }
    std::vector<char> take() { return std::move(buffer_); }

private:
    std::vector<char> buffer_;
};

/// Bounds-checked little-endian decoder; failures throw FormatError with the
/// offending byte offset.
class ByteReader {
public:
    explicit ByteReader(const std::vector<char>& buffer) : buffer_(buffer) {}

    void expect_magic(std::string_view tag);
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    double f64();
    std::string string(std::uint64_t length);

    std::uint64_t offset() const noexcept { return offset_; }
    std::uint64_t remaining() const noexcept { return buffer_.size() - offset_; }

private:
    void need(std::uint64_t n, const char* what);

    const std::vector<char>& buffer_;
    std::uint64_t offset_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<char>& bytes);

}  // namespace gito
