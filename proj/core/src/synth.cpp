#include "beetlescan/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "beetlescan/error.hpp"
#include "beetlescan/random.hpp"

namespace beetlescan {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double bump(double t, double centre, double width)
{
    const double z = (t - centre) / width;
    return std::exp(-0.5 * z * z);
}

// Healthy/dead weights of the mixture the affected spectrum is built on; the
// red-edge step of affected is therefore attenuated by 45%.
constexpr double kAffectedHealthyWeight = 0.55;
constexpr double kAffectedDeadWeight = 0.45;
constexpr double kDiscriminativeNorm = 0.3;

} // namespace

void BandAggregation::validate(std::size_t band_count) const
{
    if (windows.empty())
        throw ValidationError("band aggregation has no windows");
    for (auto [start, end] : windows)
    {
        if (start >= end)
            throw ValidationError("empty aggregation window [" + std::to_string(start) + "," + std::to_string(end) + ")");
        if (end > band_count)
            throw ValidationError("aggregation window [" + std::to_string(start) + "," + std::to_string(end) +
                                  ") exceeds " + std::to_string(band_count) + " bands");
    }
}

BandAggregation default_aggregation(std::size_t bands, std::size_t count)
{
    if (count == 0 || bands < count)
        throw ValidationError("cannot partition " + std::to_string(bands) + " bands into " + std::to_string(count) +
                              " windows");
    BandAggregation agg;
    for (std::size_t i = 0; i < count; ++i)
        agg.windows.emplace_back(i * bands / count, (i + 1) * bands / count);
    return agg;
}

Spectrum aggregate_bands(std::span<const double> spectrum, const BandAggregation& agg)
{
    agg.validate(spectrum.size());
    Spectrum out;
    out.reserve(agg.windows.size());
    for (auto [start, end] : agg.windows)
    {
        double s = 0.0;
        for (std::size_t b = start; b < end; ++b)
            s += spectrum[b];
        out.push_back(s / static_cast<double>(end - start));
    }
    return out;
}

NarrowWindow narrow_window(std::size_t bands)
{
    if (bands < 8)
        throw ValidationError("at least 8 bands are needed to host the narrow discriminative window");
    // Width is a multiple of 4 so both halves hold whole +/- pairs.
    const std::size_t width = std::max<std::size_t>(4, 4 * static_cast<std::size_t>(0.05 * static_cast<double>(bands) / 4.0));
    // Straddle boundary 9 of the default 13-window layout.
    const std::size_t centre = bands >= kMultispectralBands ? 9 * bands / kMultispectralBands : bands / 2;
    NarrowWindow w;
    w.start = centre - width / 2;
    w.end = w.start + width;
    if (w.end > bands)
        throw ValidationError("narrow window does not fit in " + std::to_string(bands) + " bands");
    return w;
}

EndmemberSet make_endmembers(std::size_t bands, std::uint64_t seed, const EndmemberOptions& options)
{
    if (!(options.narrow_fraction >= 0.0 && options.narrow_fraction <= 1.0))
        throw ValidationError("narrow_fraction must lie in [0,1]");
    const NarrowWindow window = narrow_window(bands);

    auto rng = make_rng(seed, {0x656e646d});
    auto jitter = [&](double scale) { return 1.0 + scale * (2.0 * uniform(rng, 0.0, 1.0) - 1.0); };
    const double edge = 0.42 + 0.01 * (2.0 * uniform(rng, 0.0, 1.0) - 1.0);
    const double plateau = 0.42 * jitter(0.1);
    const double green = 0.03 * jitter(0.2);
    const double dead_base = 0.10 * jitter(0.1);
    const double dead_slope = 0.22 * jitter(0.1);
    const double water = jitter(0.2);

    Spectrum healthy(bands), dead(bands), broad(bands, 0.0), narrow(bands, 0.0);
    for (std::size_t b = 0; b < bands; ++b)
    {
        const double t = static_cast<double>(b) / static_cast<double>(bands - 1);
        const double water_dips = water * (0.06 * bump(t, 0.66, 0.02) + 0.09 * bump(t, 0.86, 0.025));
        healthy[b] = 0.04 + green * bump(t, 0.2, 0.04) +
                     plateau * sigmoid((t - edge) / 0.015) * (1.0 - 0.25 * std::max(0.0, t - edge)) - water_dips;
        dead[b] = dead_base + dead_slope * t - 0.3 * water_dips;
        broad[b] = bump(t, edge - 0.06, 0.03);
    }

    // Narrow component: alternating +/- within each half of the window, so
    // it sums to zero on either side of the aggregation boundary.
    const std::size_t half = (window.end - window.start) / 2;
    for (std::size_t j = 0; j < window.end - window.start; ++j)
        narrow[window.start + j] = ((j % half) % 2 == 0) ? 1.0 : -1.0;

    auto normalize = [](Spectrum& v) {
        const double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
        for (auto& x : v)
            x /= n;
    };
    normalize(broad);
    normalize(narrow);

    const double narrow_scale = kDiscriminativeNorm * std::sqrt(options.narrow_fraction);
    const double broad_scale = kDiscriminativeNorm * std::sqrt(1.0 - options.narrow_fraction);
    Spectrum affected(bands);
    for (std::size_t b = 0; b < bands; ++b)
        affected[b] = kAffectedHealthyWeight * healthy[b] + kAffectedDeadWeight * dead[b] + broad_scale * broad[b] +
                      narrow_scale * narrow[b];

    for (auto* s : {&healthy, &affected, &dead})
        for (auto& x : *s)
            x = std::clamp(x, 0.0, 1.0);

    return {Endmember{AbundanceClass::healthy, std::move(healthy)},
            Endmember{AbundanceClass::affected, std::move(affected)},
            Endmember{AbundanceClass::dead, std::move(dead)}};
}

void SceneConfig::validate() const
{
    if (height < 1 || width < 1)
        throw ValidationError("scene height and width must be at least 1");
    if (bands < 1)
        throw ValidationError("scene band count must be at least 1");
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std))
        throw ValidationError("noise_std must be finite and non-negative");
    for (double c : abundance_prior)
        if (!(c > 0.0) || !std::isfinite(c))
            throw ValidationError("Dirichlet concentrations must be positive");
    if (!(pure_fraction >= 0.0 && pure_fraction <= 1.0))
        throw ValidationError("pure_fraction must lie in [0,1]");
}

Spectrum mix_endmembers(const EndmemberSet& endmembers, const AbundanceVector& abundance)
{
    const std::size_t bands = endmembers[0].spectrum.size();
    for (const auto& e : endmembers)
        if (e.spectrum.size() != bands)
            throw ShapeError("endmembers differ in band count");
    Spectrum x(bands);
    for (std::size_t b = 0; b < bands; ++b)
        x[b] = abundance.healthy() * endmembers[0].spectrum[b] + abundance.affected() * endmembers[1].spectrum[b] +
               abundance.dead() * endmembers[2].spectrum[b];
    return x;
}

Scene generate_scene(const SceneConfig& config, const EndmemberSet& endmembers)
{
    config.validate();
    for (std::size_t c = 0; c < kClassCount; ++c)
    {
        if (endmembers[c].cls != kAllClasses[c])
            throw ValidationError("endmembers must be ordered healthy, affected, dead");
        if (endmembers[c].spectrum.size() != config.bands)
            throw ShapeError("endmember '" + std::string(class_name(endmembers[c].cls)) + "' has " +
                             std::to_string(endmembers[c].spectrum.size()) + " bands, scene expects " +
                             std::to_string(config.bands));
    }

    Scene scene;
    scene.height = config.height;
    scene.width = config.width;
    scene.bands = config.bands;
    const std::size_t n = scene.pixel_count();
    scene.pixels.resize(n);
    scene.truth.resize(n);

    for (std::size_t p = 0; p < n; ++p)
    {
        auto rng = make_rng(config.seed, {0x7363656e, p});
        std::array<double, kClassCount> a{};
        if (uniform(rng, 0.0, 1.0) < config.pure_fraction)
        {
            const auto cls = std::min<std::size_t>(kClassCount - 1, static_cast<std::size_t>(3.0 * uniform(rng, 0.0, 1.0)));
            a[cls] = 1.0;
        }
        else
        {
            double sum = 0.0;
            for (std::size_t c = 0; c < kClassCount; ++c)
            {
                a[c] = std::gamma_distribution<double>(config.abundance_prior[c], 1.0)(rng);
                sum += a[c];
            }
            if (sum <= 0.0)
                a = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
            else
                for (auto& v : a)
                    v /= sum;
        }
        scene.truth[p] = AbundanceVector::renormalized(a[0], a[1], a[2], 1e-9);

        Spectrum x = mix_endmembers(endmembers, scene.truth[p]);
        if (config.noise_std > 0.0)
            for (auto& v : x)
                v = std::clamp(v + config.noise_std * standard_normal(rng), 0.0, kReflectanceCeiling);
        scene.pixels[p] = std::move(x);
    }
    return scene;
}

std::vector<LabeledSample> sample_labeled(const Scene& scene, std::size_t count, std::uint64_t seed)
{
    const std::size_t n = scene.pixel_count();
    if (count > n)
        throw ValidationError("cannot draw " + std::to_string(count) + " labeled samples from " + std::to_string(n) +
                              " pixels");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto rng = make_rng(seed, {0x6c61626c});
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<LabeledSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        out.push_back({scene.pixels[idx[i]], scene.truth[idx[i]], std::to_string(idx[i])});
    return out;
}

HyperCube to_cube(const Scene& scene)
{
    HyperCube cube;
    cube.height = static_cast<std::uint32_t>(scene.height);
    cube.width = static_cast<std::uint32_t>(scene.width);
    cube.bands = static_cast<std::uint32_t>(scene.bands);
    cube.values.reserve(scene.pixel_count() * scene.bands);
    for (const auto& px : scene.pixels)
        for (double v : px)
            cube.values.push_back(static_cast<float>(v));
    return cube;
}

AbundanceMap truth_map(const Scene& scene)
{
    AbundanceMap map;
    map.height = static_cast<std::uint32_t>(scene.height);
    map.width = static_cast<std::uint32_t>(scene.width);
    map.channels = 3;
    map.values.reserve(scene.pixel_count() * 3);
    for (const auto& a : scene.truth)
        for (double v : a.values())
            map.values.push_back(static_cast<float>(v));
    return map;
}

} // namespace beetlescan
