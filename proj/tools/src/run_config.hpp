#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "beetlescan/pipeline.hpp"
#include "beetlescan/synth.hpp"

namespace beetlescan::cli {

/// Every tunable of a run, read from flat `key = value` lines.
struct RunConfig
{
    SceneConfig scene;
    EndmemberOptions endmembers;
    std::size_t labeled_count = 40;
    PipelineConfig pipeline;
    std::size_t folds = 5;
    double split = 0.7;
    std::uint64_t seed = 0;

    /// Pushes `seed` into the scene and pipeline configs.
    void set_seed(std::uint64_t value);
    void validate() const;
};

/// Parses `key = value` lines; `#` starts a comment. Unknown or repeated keys
/// and malformed values throw ValidationError naming the line.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical text form; parse_run_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& config);

std::vector<std::string> run_config_keys();

} // namespace beetlescan::cli
