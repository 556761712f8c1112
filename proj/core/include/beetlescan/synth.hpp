#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "beetlescan/spectra.hpp"

namespace beetlescan {

struct Endmember
{
    AbundanceClass cls = AbundanceClass::healthy;
    Spectrum spectrum;
};

using EndmemberSet = std::array<Endmember, kClassCount>;

/// Contiguous band windows, each [start, end). Used to emulate a broad-band
/// multispectral sensor from a hyperspectral spectrum.
struct BandAggregation
{
    std::vector<std::pair<std::size_t, std::size_t>> windows;

    /// Throws ValidationError unless every window is non-empty and lies in
    /// [0, band_count).
    void validate(std::size_t band_count) const;
};

inline constexpr std::size_t kDefaultBands = 234;
inline constexpr std::size_t kMultispectralBands = 13;

/// Equal-width partition of the band axis into `count` windows; boundary i
/// sits at floor(i * bands / count).
BandAggregation default_aggregation(std::size_t bands, std::size_t count = kMultispectralBands);

/// Each output value is the arithmetic mean of the input over one window.
Spectrum aggregate_bands(std::span<const double> spectrum, const BandAggregation& agg);

struct EndmemberOptions
{
    /// Share of the squared norm of (affected - matching healthy/dead mixture)
    /// carried by the narrow window. The rest is a broad bump below the red
    /// edge.
    double narrow_fraction = 1.0;
};

/// Location of the narrow discriminative window for a given band count.
struct NarrowWindow
{
    std::size_t start = 0;
    std::size_t end = 0;
};

NarrowWindow narrow_window(std::size_t bands);

/// Three smooth vegetation-like endmembers. The affected spectrum is a
/// healthy/dead mixture plus a discriminative component whose narrow part
/// averages to zero inside every default aggregation window.
EndmemberSet make_endmembers(std::size_t bands, std::uint64_t seed, const EndmemberOptions& options = {});

struct SceneConfig
{
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t bands = kDefaultBands;
    double noise_std = 0.01;
    std::array<double, kClassCount> abundance_prior{1.0, 1.0, 1.0};
    double pure_fraction = 0.2; // probability a pixel is forced pure (class uniform)
    std::uint64_t seed = 0;

    void validate() const;
};

inline constexpr double kReflectanceCeiling = 1.2;

struct Scene
{
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t bands = 0;
    std::vector<Spectrum> pixels; // row-major
    std::vector<AbundanceVector> truth;

    std::size_t pixel_count() const noexcept { return height * width; }
};

/// a_h e_h + a_a e_a + a_d e_d, noise free.
Spectrum mix_endmembers(const EndmemberSet& endmembers, const AbundanceVector& abundance);

/// Linear mixing: x = sum_c a_c e_c + n, a ~ Dirichlet(prior), n ~ N(0,
/// noise_std^2) per band, clamped to [0, 1.2]. Each pixel draws from its own
/// substream derived from (seed, pixel index).
Scene generate_scene(const SceneConfig& config, const EndmemberSet& endmembers);

/// Draws `count` distinct pixels of the scene as labeled samples, ids being
/// the pixel indices.
std::vector<LabeledSample> sample_labeled(const Scene& scene, std::size_t count, std::uint64_t seed);

HyperCube to_cube(const Scene& scene);
AbundanceMap truth_map(const Scene& scene);

} // namespace beetlescan
