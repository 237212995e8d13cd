#include "gito/byte_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace gito {

void ByteWriter::u32(std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void ByteWriter::u64(std::uint64_t v)
{
    for (int i = 0; i < 8; ++i)
        buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void ByteWriter::f32(float v)
{
    u32(std::bit_cast<std::uint32_t>(v));
}

void ByteWriter::f64(double v)
{
    u64(std::bit_cast<std::uint64_t>(v));
}

void ByteReader::need(std::uint64_t n, const char* what)
{
    if (remaining() < n)
        throw FormatError(std::string("truncated input while reading ") + what, offset_);
}

void ByteReader::expect_magic(std::string_view tag)
{
    need(tag.size(), "magic");
    if (std::string_view(buffer_.data() + offset_, tag.size()) != tag)
        throw FormatError("bad magic, expected \"" + std::string(tag) + "\"", offset_);
    offset_ += tag.size();
}

std::uint32_t ByteReader::u32()
{
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= std::uint32_t(static_cast<unsigned char>(buffer_[offset_ + i])) << (8 * i);
    offset_ += 4;
    return v;
}

std::uint64_t ByteReader::u64()
{
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= std::uint64_t(static_cast<unsigned char>(buffer_[offset_ + i])) << (8 * i);
    offset_ += 8;
    return v;
}

float ByteReader::f32()
{
    return std::bit_cast<float>(u32());
}

double ByteReader::f64()
{
    return std::bit_cast<double>(u64());
}

std::string ByteReader::string(std::uint64_t length)
{
    need(length, "string");
    std::string s(buffer_.data() + offset_, length);
    offset_ += length;
    return s;
}

std::vector<char> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::vector<char>& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw std::runtime_error("write failed for " + path.string());
}

}  // namespace gito
