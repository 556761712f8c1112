#include <cmath>

#include "beetlescan/error.hpp"
#include "beetlescan/nn.hpp"
#include "binary_io.hpp"

namespace beetlescan::nn {

namespace {

constexpr auto kEncoderMagic = detail::make_magic("ENCM");

Buffer to_buffer(const std::vector<double>& v) { return Buffer(v.begin(), v.end()); }

} // namespace

std::vector<std::uint8_t> encode_encoder(const EncoderModel& model)
{
    model.validate();
    detail::ByteWriter w;
    w.magic(kEncoderMagic);
    w.u32(kEncoderFormatVersion);
    w.u32(static_cast<std::uint32_t>(model.band_count));
    for (std::size_t i = 0; i < 3; ++i)
    {
        w.f64s(model.conv[i].weight);
        w.f64s(model.conv[i].bias);
        w.f64s(model.bn[i].scale);
        w.f64s(model.bn[i].shift);
        w.f64s(model.bn[i].running_mean);
        w.f64s(model.bn[i].running_var);
    }
    w.f64s(model.head.weight);
    w.f64s(model.head.bias);
    return w.take();
}

EncoderModel decode_encoder(std::span<const std::uint8_t> bytes)
{
    detail::ByteReader r(bytes, "encoder checkpoint");
    r.expect_magic(kEncoderMagic);
    const auto version = r.u32();
    if (version != kEncoderFormatVersion)
        throw FormatError("encoder checkpoint: unsupported format version " + std::to_string(version));

    EncoderModel m;
    m.band_count = r.u32();
    std::size_t in = 1;
    for (std::size_t i = 0; i < 3; ++i)
    {
        auto& c = m.conv[i];
        c.in_channels = in;
        c.out_channels = kChannels[i];
        c.kernel = kKernelSizes[i];
        c.weight = to_buffer(r.f64s(c.out_channels * c.in_channels * c.kernel));
        c.bias = to_buffer(r.f64s(c.out_channels));
        auto& b = m.bn[i];
        b.channels = kChannels[i];
        b.scale = to_buffer(r.f64s(b.channels));
        b.shift = to_buffer(r.f64s(b.channels));
        b.running_mean = to_buffer(r.f64s(b.channels));
        b.running_var = to_buffer(r.f64s(b.channels));
        in = kChannels[i];
    }
    m.head.in_features = kLatentWidth;
    m.head.out_features = kEmbeddingWidth;
    m.head.weight = to_buffer(r.f64s(kLatentWidth * kEmbeddingWidth));
    m.head.bias = to_buffer(r.f64s(kEmbeddingWidth));
    r.expect_end();

    for (auto& p : m.parameters())
        for (double v : p.values)
            if (!std::isfinite(v))
                throw ValidationError("encoder checkpoint: non-finite parameter in '" + p.name + "'");
    m.validate();
    return m;
}

void save_encoder(const std::filesystem::path& path, const EncoderModel& model)
{
    detail::write_file(path, encode_encoder(model));
}

EncoderModel load_encoder(const std::filesystem::path& path)
{
    return decode_encoder(detail::read_file(path));
}

} // namespace beetlescan::nn
