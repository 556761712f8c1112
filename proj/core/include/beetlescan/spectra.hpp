#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace beetlescan {

/// Per-band reflectance of one pixel.
using Spectrum = std::vector<double>;

enum class AbundanceClass : std::size_t
{
    healthy = 0,
    affected = 1,
    dead = 2
};

inline constexpr std::size_t kClassCount = 3;
inline constexpr std::array<AbundanceClass, kClassCount> kAllClasses{
    AbundanceClass::healthy, AbundanceClass::affected, AbundanceClass::dead};

std::string_view class_name(AbundanceClass c);

/// Fractions of healthy, affected and dead trees in a pixel. Always lies on
/// the probability simplex: components in [0,1] summing to 1 within 1e-9.
class AbundanceVector
{
  public:
    static constexpr double kSumTolerance = 1e-9;

    /// Pure healthy pixel.
    AbundanceVector() = default;

    /// Throws ValidationError unless the triple already lies on the simplex.
    AbundanceVector(double healthy, double affected, double dead);

    /// Accepts a triple whose sum is within `tolerance` of 1 and whose
    /// components are within [0,1], then rescales it so the components sum to
    /// exactly 1.0 in floating point. Renormalizing the result is a no-op.
    static AbundanceVector renormalized(double healthy, double affected, double dead, double tolerance = 1e-6);

    double healthy() const noexcept { return values_[0]; }
    double affected() const noexcept { return values_[1]; }
    double dead() const noexcept { return values_[2]; }

    double operator[](std::size_t i) const { return values_.at(i); }
    double operator[](AbundanceClass c) const { return values_.at(static_cast<std::size_t>(c)); }
    const std::array<double, kClassCount>& values() const noexcept { return values_; }

    friend bool operator==(const AbundanceVector&, const AbundanceVector&) = default;

  private:
    std::array<double, kClassCount> values_{1.0, 0.0, 0.0};
};

/// Divides non-negative `v` (with a positive sum) by its sum, then nudges the
/// largest share by single ulps until (v0 + v1) + v2 == 1.0 exactly.
std::array<double, kClassCount> close_to_simplex(std::array<double, kClassCount> v);

/// Euclidean distance between two abundance vectors.
double label_distance(const AbundanceVector& a, const AbundanceVector& b);

struct LabeledSample
{
    Spectrum spectrum;
    AbundanceVector label;
    std::string id;

    friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

struct Dataset
{
    std::size_t band_count = 0;
    std::vector<LabeledSample> labeled;
    std::vector<Spectrum> unlabeled;

    /// Throws ValidationError if any member spectrum breaks the shared band
    /// count or contains a non-finite value.
    void validate() const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Throws ValidationError if the spectrum is empty or holds non-finite values.
void validate_spectrum(std::span<const double> spectrum);

// ---------------------------------------------------------------------------
// Labeled CSV: header `band_0,...,band_{B-1},healthy,affected,dead`, optionally
// preceded by an `id` column.

Dataset load_labeled_csv(const std::filesystem::path& path);

/// Writes the labeled part of a dataset. Values are written in shortest
/// round-trip form so loading reproduces them exactly. The id column is
/// emitted only when `with_ids` is set.
void save_labeled_csv(const std::filesystem::path& path, std::span<const LabeledSample> samples,
                      std::size_t band_count, bool with_ids = false);

// ---------------------------------------------------------------------------
// Binary rasters. All share the header layout: 4 magic bytes, then three
// little-endian uint32 (height, width, channels), then height*width*channels
// little-endian float32 values, pixel-major.

/// Hyperspectral cube (`HSCN`).
struct HyperCube
{
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t bands = 0;
    std::vector<float> values;

    std::size_t pixel_count() const noexcept { return std::size_t{height} * width; }
    std::span<const float> pixel(std::size_t index) const;
    Spectrum spectrum(std::size_t index) const;

    friend bool operator==(const HyperCube&, const HyperCube&) = default;
};

/// Abundance map (`HABN`). `channels` is 3, or 4 when the fourth channel
/// carries an active flag (1 = predicted, 0 = masked out).
struct AbundanceMap
{
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t channels = 3;
    std::vector<float> values;

    std::size_t pixel_count() const noexcept { return std::size_t{height} * width; }
    bool has_mask_channel() const noexcept { return channels == 4; }
    bool is_active(std::size_t index) const;
    std::array<float, kClassCount> abundance(std::size_t index) const;

    friend bool operator==(const AbundanceMap&, const AbundanceMap&) = default;
};

/// Boolean pixel mask (`HMSK`): magic, uint32 height, uint32 width, then one
/// byte per pixel (0 = masked, 1 = active).
struct PixelMask
{
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<std::uint8_t> active;

    friend bool operator==(const PixelMask&, const PixelMask&) = default;
};

HyperCube read_cube(const std::filesystem::path& path);
void write_cube(const std::filesystem::path& path, const HyperCube& cube);

AbundanceMap read_abundance_map(const std::filesystem::path& path);
void write_abundance_map(const std::filesystem::path& path, const AbundanceMap& map);

PixelMask read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const PixelMask& mask);

/// Loads a cube as the unlabeled part of a dataset, pixels in row-major order.
Dataset load_unlabeled_cube(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Splits, folds and metrics.

struct FoldPlan
{
    std::size_t k = 0;
    std::vector<std::size_t> assignments; // fold index per sample

    std::vector<std::size_t> members(std::size_t fold) const;
    std::vector<std::size_t> complement(std::size_t fold) const;
    std::vector<std::size_t> fold_sizes() const;
};

/// Shuffle-then-stripe assignment: a seeded permutation is dealt round-robin
/// into k folds, so fold sizes differ by at most one.
FoldPlan make_folds(std::size_t n_samples, std::size_t k, std::uint64_t seed);

struct TrainValSplit
{
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    bool degenerate = false; // one side ended up empty
};

/// Seeded shuffle, then the first round-half-up(ratio * n) entries train.
TrainValSplit train_val_split(std::span<const std::size_t> indices, double ratio, std::uint64_t seed);

double rmse(std::span<const double> predictions, std::span<const double> truths);

} // namespace beetlescan
