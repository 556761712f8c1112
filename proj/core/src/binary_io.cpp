#include "binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "beetlescan/error.hpp"

namespace beetlescan::detail {

namespace {

template <typename U>
void put_le(std::vector<std::uint8_t>& buf, U v)
{
    for (std::size_t i = 0; i < sizeof(U); ++i)
        buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p)
{
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
        v |= static_cast<U>(p[i]) << (8 * i);
    return v;
}

} // namespace

void ByteWriter::magic(const Magic& m)
{
    buf_.insert(buf_.end(), m.begin(), m.end());
}

void ByteWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void ByteWriter::f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::f64s(std::span<const double> vs)
{
    buf_.reserve(buf_.size() + 8 * vs.size());
    for (double v : vs)
        f64(v);
}

void ByteWriter::bytes(std::span<const std::uint8_t> bs)
{
    buf_.insert(buf_.end(), bs.begin(), bs.end());
}

void ByteReader::need(std::size_t n) const
{
    if (remaining() < n)
        throw FormatError(context_ + ": truncated payload (need " + std::to_string(n) + " bytes at offset " +
                          std::to_string(pos_) + ", have " + std::to_string(remaining()) + ")");
}

void ByteReader::expect_magic(const Magic& m)
{
    need(4);
    if (std::memcmp(data_.data() + pos_, m.data(), 4) != 0)
        throw FormatError(context_ + ": bad magic bytes, expected '" + std::string(m.begin(), m.end()) + "'");
    pos_ += 4;
}

std::uint32_t ByteReader::u32()
{
    need(4);
    auto v = get_le<std::uint32_t>(data_.data() + pos_);
    pos_ += 4;
    return v;
}

std::uint64_t ByteReader::u64()
{
    need(8);
    auto v = get_le<std::uint64_t>(data_.data() + pos_);
    pos_ += 8;
    return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::vector<double> ByteReader::f64s(std::size_t count)
{
    if (count > remaining() / 8)
        need(count * 8);
    std::vector<double> out(count);
    for (auto& v : out)
        v = f64();
    return out;
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t count)
{
    need(count);
    auto out = data_.subspan(pos_, count);
    pos_ += count;
    return out;
}

void ByteReader::expect_end() const
{
    if (remaining() != 0)
        throw FormatError(context_ + ": " + std::to_string(remaining()) + " trailing bytes");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out)
        throw IoError("write to '" + path.string() + "' failed");
}

} // namespace beetlescan::detail
