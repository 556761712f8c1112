#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace beetlescan::detail {

using Magic = std::array<char, 4>;

constexpr Magic make_magic(const char (&s)[5]) { return {s[0], s[1], s[2], s[3]}; }

/// Append-only little-endian byte sink.
class ByteWriter
{
  public:
    void magic(const Magic& m);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void f64(double v);
    void f64s(std::span<const double> vs);
    void bytes(std::span<const std::uint8_t> bs);

    const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
    std::vector<std::uint8_t> take() noexcept { return std::move(buf_); }

  private:
    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader; throws FormatError on truncation.
class ByteReader
{
  public:
    ByteReader(std::span<const std::uint8_t> data, std::string context)
        : data_(data), context_(std::move(context)) {}

    void expect_magic(const Magic& m);
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    double f64();
    std::vector<double> f64s(std::size_t count);
    std::span<const std::uint8_t> bytes(std::size_t count);

    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    std::size_t position() const noexcept { return pos_; }
    void expect_end() const;

  private:
    void need(std::size_t n) const;

    std::span<const std::uint8_t> data_;
    std::string context_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);

} // namespace beetlescan::detail
