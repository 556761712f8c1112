#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "beetlescan/pipeline.hpp"
#include "beetlescan/spectra.hpp"
#include "run_config.hpp"

namespace beetlescan::cli {

struct GeneratedFiles
{
    std::filesystem::path cube;       // scene.hscn
    std::filesystem::path truth;      // truth.habn
    std::filesystem::path endmembers; // endmembers.csv, one row per class
    std::filesystem::path labeled;    // labeled.csv, ids are pixel indices
};

GeneratedFiles generated_files(const std::filesystem::path& out_dir);

GeneratedFiles cmd_generate(const RunConfig& config, const std::filesystem::path& out_dir);

struct TrainedFiles
{
    std::filesystem::path checkpoint;
    std::filesystem::path pretrain_history;
    std::filesystem::path finetune_history;
};

TrainedFiles trained_files(const std::filesystem::path& checkpoint);

/// Pretrains on every cube pixel, fine-tunes and fits on the `split` share of
/// the labeled samples and reports RMSE on the rest.
TrainedFiles cmd_train(const RunConfig& config, const std::filesystem::path& cube,
                       const std::filesystem::path& labeled, const std::filesystem::path& checkpoint,
                       std::ostream& log);

CrossValidationResult cmd_evaluate(const RunConfig& config, const std::filesystem::path& cube,
                                   const std::filesystem::path& labeled, const std::filesystem::path& report,
                                   std::ostream& out);

/// Masked pixels are written as (0, 0, 0) with the active flag cleared; the
/// flag channel is present only when a mask is given.
AbundanceMap predict_map(const PipelineModel& pipeline, const HyperCube& cube, const PixelMask* mask = nullptr);

void cmd_predict_map(const std::filesystem::path& checkpoint, const std::filesystem::path& cube,
                     const std::optional<std::filesystem::path>& mask, const std::filesystem::path& out);

struct RgbImage
{
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint8_t> rgb;
};

/// Per-channel min/max stretch to 0..255. Min and max pool over the active
/// pixels of `map` and every map in `joint`; a zero-range channel renders 0
/// and masked pixels render black.
RgbImage render_map(const AbundanceMap& map, std::span<const AbundanceMap> joint = {});
std::vector<std::uint8_t> encode_ppm(const RgbImage& image);

void cmd_render_map(const std::filesystem::path& map, const std::filesystem::path& out,
                    std::span<const std::filesystem::path> joint_with);

} // namespace beetlescan::cli
