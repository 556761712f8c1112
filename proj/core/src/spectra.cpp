#include "beetlescan/spectra.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "beetlescan/error.hpp"
#include "beetlescan/random.hpp"
#include "binary_io.hpp"

namespace beetlescan {

namespace {

constexpr auto kCubeMagic = detail::make_magic("HSCN");
constexpr auto kMapMagic = detail::make_magic("HABN");
constexpr auto kMaskMagic = detail::make_magic("HMSK");

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_commas(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true)
    {
        auto pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos)
            break;
        start = pos + 1;
    }
    return out;
}

double parse_double(std::string_view field, const std::string& where)
{
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc{} || ptr != field.data() + field.size())
        throw FormatError(where + ": cannot parse '" + std::string(field) + "' as a number");
    if (!std::isfinite(v))
        throw ValidationError(where + ": non-finite value '" + std::string(field) + "'");
    return v;
}

void append_double(std::string& out, double v)
{
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, ptr);
}

struct RasterHeader
{
    std::uint32_t height, width, channels;
};

std::vector<std::uint8_t> encode_raster(const detail::Magic& magic, RasterHeader h, std::span<const float> values)
{
    detail::ByteWriter w;
    w.magic(magic);
    w.u32(h.height);
    w.u32(h.width);
    w.u32(h.channels);
    for (float v : values)
        w.f32(v);
    return w.take();
}

std::vector<float> decode_raster(detail::ByteReader& r, RasterHeader& h, const std::string& ctx)
{
    h.height = r.u32();
    h.width = r.u32();
    h.channels = r.u32();
    const std::uint64_t count = std::uint64_t{h.height} * h.width * h.channels;
    if (count * 4 > r.remaining())
        throw FormatError(ctx + ": truncated payload (header declares " + std::to_string(count) + " values)");
    std::vector<float> values(count);
    for (std::uint64_t i = 0; i < count; ++i)
    {
        values[i] = r.f32();
        if (!std::isfinite(values[i]))
            throw ValidationError(ctx + ": non-finite value at index " + std::to_string(i));
    }
    r.expect_end();
    return values;
}

} // namespace

std::string_view class_name(AbundanceClass c)
{
    switch (c)
    {
        case AbundanceClass::healthy: return "healthy";
        case AbundanceClass::affected: return "affected";
        case AbundanceClass::dead: return "dead";
    }
    return "unknown";
}

AbundanceVector::AbundanceVector(double healthy, double affected, double dead)
    : values_{healthy, affected, dead}
{
    for (double v : values_)
        if (!std::isfinite(v) || v < 0.0 || v > 1.0)
            throw ValidationError("abundance component outside [0,1]");
    if (std::abs(healthy + affected + dead - 1.0) > kSumTolerance)
        throw ValidationError("abundance components do not sum to one");
}

AbundanceVector AbundanceVector::renormalized(double healthy, double affected, double dead, double tolerance)
{
    const std::array<double, 3> v{healthy, affected, dead};
    for (double x : v)
        if (!std::isfinite(x) || x < 0.0 || x > 1.0)
            throw ValidationError("abundance component outside [0,1]");
    const double sum = healthy + affected + dead;
    if (std::abs(sum - 1.0) > tolerance)
        throw ValidationError("abundance components sum to " + std::to_string(sum) + ", not one");
    AbundanceVector out;
    out.values_ = close_to_simplex(v);
    return out;
}

std::array<double, kClassCount> close_to_simplex(std::array<double, kClassCount> v)
{
    double sum = (v[0] + v[1]) + v[2];
    if (!std::isfinite(sum))
    {
        const double top = *std::max_element(v.begin(), v.end());
        for (auto& x : v)
            x /= top;
        sum = (v[0] + v[1]) + v[2];
    }
    for (auto& x : v)
        x /= sum;
    // The quotients can sum to an ulp off 1.0, in which case dividing again
    // would move them. Absorb the residual into the last-added component:
    // for p = v0 + v1 in [0.5, 1], 1 - p is exact and p + (1 - p) == 1.
    auto sums_to_one = [](const std::array<double, kClassCount>& w) { return (w[0] + w[1]) + w[2] == 1.0; };
    if (sums_to_one(v))
        return v;
    const double p = v[0] + v[1];
    if (p >= 0.5 && p <= 1.0)
    {
        v[2] = 1.0 - p;
        return v;
    }
    // Otherwise absorb it into the dominant component, stepping by ulps
    // from the closest first guess.
    const std::size_t big = p < 0.5 ? 2 : (v[0] >= v[1] ? 0 : 1);
    auto w = v;
    w[big] = big == 2 ? 1.0 - p : (1.0 - w[2]) - w[1 - big];
    for (int pass = 0; pass < 8 && !sums_to_one(w); ++pass)
        w[big] = std::nextafter(w[big], (w[0] + w[1]) + w[2] < 1.0 ? 2.0 : 0.0);
    return sums_to_one(w) ? w : v;
}

double label_distance(const AbundanceVector& a, const AbundanceVector& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < kClassCount; ++i)
        s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

void validate_spectrum(std::span<const double> spectrum)
{
    if (spectrum.empty())
        throw ValidationError("empty spectrum");
    for (double v : spectrum)
        if (!std::isfinite(v))
            throw ValidationError("spectrum contains a non-finite value");
}

void Dataset::validate() const
{
    if (band_count == 0)
        throw ValidationError("dataset band count must be positive");
    for (const auto& s : labeled)
    {
        if (s.spectrum.size() != band_count)
            throw ValidationError("labeled sample '" + s.id + "' has " + std::to_string(s.spectrum.size()) +
                                  " bands, dataset has " + std::to_string(band_count));
        validate_spectrum(s.spectrum);
    }
    for (const auto& s : unlabeled)
    {
        if (s.size() != band_count)
            throw ValidationError("unlabeled spectrum band count mismatch");
        validate_spectrum(s);
    }
}

Dataset load_labeled_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open labeled CSV '" + path.string() + "'");

    const std::string name = path.string();
    std::string line;
    if (!std::getline(in, line))
        throw FormatError(name + ": missing header row");

    auto header = split_commas(line);
    const bool has_id = !header.empty() && header.front() == "id";
    const std::size_t offset = has_id ? 1 : 0;
    if (header.size() < offset + 4)
        throw FormatError(name + ": header needs at least one band column and three label columns");
    const std::size_t bands = header.size() - offset - 3;
    for (std::size_t b = 0; b < bands; ++b)
        if (header[offset + b] != "band_" + std::to_string(b))
            throw FormatError(name + ": expected header column 'band_" + std::to_string(b) + "', found '" +
                              std::string(header[offset + b]) + "'");
    if (header[offset + bands] != "healthy" || header[offset + bands + 1] != "affected" ||
        header[offset + bands + 2] != "dead")
        throw FormatError(name + ": header must end with healthy,affected,dead");

    Dataset ds;
    ds.band_count = bands;
    std::size_t line_no = 1;
    while (std::getline(in, line))
    {
        ++line_no;
        if (trim(line).empty())
            continue;
        const std::string where = name + ":" + std::to_string(line_no);
        auto fields = split_commas(line);
        if (fields.size() != header.size())
            throw FormatError(where + ": expected " + std::to_string(header.size()) + " columns, found " +
                              std::to_string(fields.size()));
        LabeledSample s;
        s.id = has_id ? std::string(fields[0]) : std::to_string(ds.labeled.size());
        s.spectrum.resize(bands);
        for (std::size_t b = 0; b < bands; ++b)
            s.spectrum[b] = parse_double(fields[offset + b], where);
        const double h = parse_double(fields[offset + bands], where);
        const double a = parse_double(fields[offset + bands + 1], where);
        const double d = parse_double(fields[offset + bands + 2], where);
        try
        {
            s.label = AbundanceVector::renormalized(h, a, d, 1e-6);
        }
        catch (const ValidationError& e)
        {
            throw ValidationError(where + ": " + e.what());
        }
        ds.labeled.push_back(std::move(s));
    }
    return ds;
}

void save_labeled_csv(const std::filesystem::path& path, std::span<const LabeledSample> samples,
                      std::size_t band_count, bool with_ids)
{
    std::string out;
    if (with_ids)
        out += "id,";
    for (std::size_t b = 0; b < band_count; ++b)
        out += "band_" + std::to_string(b) + ",";
    out += "healthy,affected,dead\n";
    for (const auto& s : samples)
    {
        if (s.spectrum.size() != band_count)
            throw ValidationError("sample '" + s.id + "' does not match the declared band count");
        if (with_ids)
            out += s.id + ",";
        for (double v : s.spectrum)
        {
            append_double(out, v);
            out += ',';
        }
        append_double(out, s.label.healthy());
        out += ',';
        append_double(out, s.label.affected());
        out += ',';
        append_double(out, s.label.dead());
        out += '\n';
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw IoError("cannot open '" + path.string() + "' for writing");
    f << out;
    if (!f)
        throw IoError("write to '" + path.string() + "' failed");
}

std::span<const float> HyperCube::pixel(std::size_t index) const
{
    if (index >= pixel_count())
        throw ShapeError("pixel index out of range");
    return std::span<const float>(values).subspan(index * bands, bands);
}

Spectrum HyperCube::spectrum(std::size_t index) const
{
    auto p = pixel(index);
    return Spectrum(p.begin(), p.end());
}

bool AbundanceMap::is_active(std::size_t index) const
{
    if (index >= pixel_count())
        throw ShapeError("pixel index out of range");
    return !has_mask_channel() || values[index * channels + 3] != 0.0f;
}

std::array<float, kClassCount> AbundanceMap::abundance(std::size_t index) const
{
    if (index >= pixel_count())
        throw ShapeError("pixel index out of range");
    const float* p = values.data() + index * channels;
    return {p[0], p[1], p[2]};
}

HyperCube read_cube(const std::filesystem::path& path)
{
    const auto data = detail::read_file(path);
    const std::string ctx = "cube '" + path.string() + "'";
    detail::ByteReader r(data, ctx);
    r.expect_magic(kCubeMagic);
    RasterHeader h{};
    HyperCube cube;
    cube.values = decode_raster(r, h, ctx);
    cube.height = h.height;
    cube.width = h.width;
    cube.bands = h.channels;
    return cube;
}

void write_cube(const std::filesystem::path& path, const HyperCube& cube)
{
    if (cube.values.size() != cube.pixel_count() * cube.bands)
        throw ShapeError("cube value count does not match its header");
    detail::write_file(path, encode_raster(kCubeMagic, {cube.height, cube.width, cube.bands}, cube.values));
}

AbundanceMap read_abundance_map(const std::filesystem::path& path)
{
    const auto data = detail::read_file(path);
    const std::string ctx = "abundance map '" + path.string() + "'";
    detail::ByteReader r(data, ctx);
    r.expect_magic(kMapMagic);
    RasterHeader h{};
    AbundanceMap map;
    map.values = decode_raster(r, h, ctx);
    if (h.channels != 3 && h.channels != 4)
        throw FormatError(ctx + ": expected 3 or 4 channels, found " + std::to_string(h.channels));
    map.height = h.height;
    map.width = h.width;
    map.channels = h.channels;
    return map;
}

void write_abundance_map(const std::filesystem::path& path, const AbundanceMap& map)
{
    if (map.channels != 3 && map.channels != 4)
        throw ValidationError("abundance map must have 3 or 4 channels");
    if (map.values.size() != map.pixel_count() * map.channels)
        throw ShapeError("abundance map value count does not match its header");
    detail::write_file(path, encode_raster(kMapMagic, {map.height, map.width, map.channels}, map.values));
}

PixelMask read_mask(const std::filesystem::path& path)
{
    const auto data = detail::read_file(path);
    detail::ByteReader r(data, "mask '" + path.string() + "'");
    r.expect_magic(kMaskMagic);
    PixelMask m;
    m.height = r.u32();
    m.width = r.u32();
    auto bytes = r.bytes(std::size_t{m.height} * m.width);
    r.expect_end();
    m.active.assign(bytes.begin(), bytes.end());
    for (auto b : m.active)
        if (b > 1)
            throw FormatError("mask '" + path.string() + "': bytes must be 0 or 1");
    return m;
}

void write_mask(const std::filesystem::path& path, const PixelMask& mask)
{
    if (mask.active.size() != std::size_t{mask.height} * mask.width)
        throw ShapeError("mask size does not match its header");
    detail::ByteWriter w;
    w.magic(kMaskMagic);
    w.u32(mask.height);
    w.u32(mask.width);
    w.bytes(mask.active);
    detail::write_file(path, w.buffer());
}

Dataset load_unlabeled_cube(const std::filesystem::path& path)
{
    const auto cube = read_cube(path);
    if (cube.bands == 0)
        throw FormatError("cube '" + path.string() + "' declares zero bands");
    Dataset ds;
    ds.band_count = cube.bands;
    ds.unlabeled.reserve(cube.pixel_count());
    for (std::size_t i = 0; i < cube.pixel_count(); ++i)
        ds.unlabeled.push_back(cube.spectrum(i));
    return ds;
}

std::vector<std::size_t> FoldPlan::members(std::size_t fold) const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments.size(); ++i)
        if (assignments[i] == fold)
            out.push_back(i);
    return out;
}

std::vector<std::size_t> FoldPlan::complement(std::size_t fold) const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments.size(); ++i)
        if (assignments[i] != fold)
            out.push_back(i);
    return out;
}

std::vector<std::size_t> FoldPlan::fold_sizes() const
{
    std::vector<std::size_t> sizes(k, 0);
    for (auto a : assignments)
        ++sizes.at(a);
    return sizes;
}

FoldPlan make_folds(std::size_t n_samples, std::size_t k, std::uint64_t seed)
{
    if (k < 2)
        throw ValidationError("k-fold cross-validation needs k >= 2");
    if (k > n_samples)
        throw ValidationError("cannot make " + std::to_string(k) + " folds from " + std::to_string(n_samples) +
                              " samples");
    std::vector<std::size_t> perm(n_samples);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    auto rng = make_rng(seed, {0x666f6c64});
    std::shuffle(perm.begin(), perm.end(), rng);

    FoldPlan plan;
    plan.k = k;
    plan.assignments.resize(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i)
        plan.assignments[perm[i]] = i % k;
    return plan;
}

TrainValSplit train_val_split(std::span<const std::size_t> indices, double ratio, std::uint64_t seed)
{
    if (indices.empty())
        throw ValidationError("train/validation split of an empty index list");
    if (!(ratio > 0.0 && ratio < 1.0))
        throw ValidationError("split ratio must lie in (0,1)");
    std::vector<std::size_t> perm(indices.begin(), indices.end());
    auto rng = make_rng(seed, {0x73706c74});
    std::shuffle(perm.begin(), perm.end(), rng);

    const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(perm.size()) + 0.5));
    TrainValSplit out;
    out.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    out.degenerate = out.train.empty() || out.val.empty();
    return out;
}

double rmse(std::span<const double> predictions, std::span<const double> truths)
{
    if (predictions.size() != truths.size())
        throw ShapeError("rmse: length mismatch");
    if (predictions.empty())
        throw ValidationError("rmse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
    {
        const double d = predictions[i] - truths[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(predictions.size()));
}

} // namespace beetlescan
