#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "beetlescan/contrastive.hpp"
#include "beetlescan/nn.hpp"
#include "beetlescan/spectra.hpp"
#include "beetlescan/svr.hpp"
#include "beetlescan/synth.hpp"

namespace beetlescan {

/// Clamp negatives to zero, then divide by the sum; an all-zero result maps
/// to (1/3, 1/3, 1/3). The output sums to exactly 1.0 in floating point, so
/// normalizing it again is a no-op. Throws ValidationError on non-finite
/// input.
AbundanceVector simplex_normalize(const std::array<double, kClassCount>& raw);

/// Per-feature z-scoring fitted on training data. Features with zero spread
/// are centred but not scaled.
struct Standardizer
{
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardizer fit(std::span<const FeatureVector> features);
    FeatureVector apply(std::span<const double> features) const;
    std::size_t dimension() const noexcept { return mean.size(); }

    friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

struct SvrSettings
{
    SvrConfig base;
    std::vector<double> c_grid{0.1, 1.0, 10.0, 100.0};
    std::vector<double> sigma_grid{0.1, 0.3, 1.0, 3.0, 10.0};
    std::size_t grid_folds = 5;
    bool tune = true; // false: fit `base` directly
};

/// Standardizer plus one independent SVR per abundance class.
struct AbundanceRegressor
{
    Standardizer standardizer;
    std::array<SvrModel, kClassCount> svrs;
    std::array<SvrConfig, kClassCount> configs; // selected per class; not persisted

    static AbundanceRegressor train(std::span<const FeatureVector> features, std::span<const AbundanceVector> labels,
                                    const SvrSettings& settings, std::uint64_t seed);
    std::array<double, kClassCount> predict_raw(std::span<const double> features) const;
    AbundanceVector predict(std::span<const double> features) const;
};

/// Eval-mode embeddings z = h(e(x)), computed in fixed-size chunks.
std::vector<FeatureVector> embed(const nn::EncoderModel& model, std::span<const Spectrum> spectra);

struct PipelineModel
{
    nn::EncoderModel encoder;
    Standardizer feature_standardizer;
    std::array<SvrModel, kClassCount> svrs;

    void validate() const;
};

AbundanceVector predict_abundance(const PipelineModel& pipeline, std::span<const double> spectrum);
std::vector<AbundanceVector> predict_abundances(const PipelineModel& pipeline, std::span<const Spectrum> spectra);

struct PipelineConfig
{
    PretrainConfig pretrain;
    AugmentationConfig augmentation;
    FinetuneConfig finetune;
    SvrSettings svr;
    std::uint64_t seed = 0; // drives init, shuffling, augmentation and SVR folds

    void validate() const;
};

/// Randomly initialised encoder pretrained on unlabeled spectra only.
TrainingResult pretrain_encoder(std::size_t band_count, std::span<const Spectrum> unlabeled,
                                const PipelineConfig& config);

struct PipelineTraining
{
    PipelineModel model;
    std::vector<EpochStats> pretrain_history;
    std::vector<EpochStats> finetune_history;
};

/// Fine-tunes a pretrained encoder on `labeled`, embeds the samples and fits
/// the three SVRs.
PipelineTraining fit_supervised(const nn::EncoderModel& pretrained, std::span<const LabeledSample> labeled,
                                const PipelineConfig& config);

/// pretrain -> fine-tune -> standardize embeddings -> fit three SVRs.
PipelineTraining train_pipeline(const Dataset& dataset, const PipelineConfig& config);

// ---------------------------------------------------------------------------
// Raw-band baselines.

enum class FeatureMode
{
    raw_hyperspectral,
    raw_aggregated
};

struct BaselineModel
{
    FeatureMode mode = FeatureMode::raw_hyperspectral;
    std::size_t band_count = 0;
    BandAggregation aggregation; // used in raw_aggregated mode
    AbundanceRegressor regressor;

    FeatureVector features(std::span<const double> spectrum) const;
    AbundanceVector predict(std::span<const double> spectrum) const;
    std::size_t feature_width() const noexcept { return regressor.standardizer.dimension(); }
};

/// `aggregation` defaults to the 13-window layout when empty.
BaselineModel train_baseline(std::span<const LabeledSample> labeled, FeatureMode mode, const SvrSettings& settings,
                             std::uint64_t seed, BandAggregation aggregation = {});

/// Predicts the training-set mean label everywhere.
struct MeanLabelModel
{
    AbundanceVector mean;

    static MeanLabelModel fit(std::span<const LabeledSample> labeled);
};

// ---------------------------------------------------------------------------
// Cross-validated comparison.

enum class Method
{
    model_features,
    raw_hyperspectral,
    raw_aggregated,
    mean_label
};

std::string_view method_name(Method method);

struct EvaluationReport
{
    Method method = Method::model_features;
    std::vector<std::array<double, kClassCount>> fold_rmse;
    std::array<double, kClassCount> class_mean{};
    double grand_mean = 0.0;

    /// Fills class_mean (mean over folds) and grand_mean (mean of classes).
    void finalize();
};

struct FoldModels
{
    PipelineModel proposed;
    BaselineModel raw_hyperspectral;
    BaselineModel raw_aggregated;
    MeanLabelModel mean_label;
};

/// Trains every method on the complement of `fold`. Only labels outside the
/// fold are read.
FoldModels train_fold(const Dataset& dataset, const nn::EncoderModel& pretrained, const FoldPlan& plan,
                      std::size_t fold, const PipelineConfig& config);

struct CrossValidationResult
{
    std::array<EvaluationReport, 3> reports; // model-features, raw-hyperspectral, raw-aggregated
    EvaluationReport mean_label_floor;
    std::vector<EpochStats> pretrain_history;
};

CrossValidationResult run_cross_validation(const Dataset& dataset, const PipelineConfig& config, std::size_t k,
                                           std::uint64_t seed);

/// `method,fold,class,rmse` rows (fold index, or `mean` for the summary rows,
/// whose class column also has an `average` entry). The mean-label floor is
/// written as method `mean-label`.
std::string report_csv(const CrossValidationResult& result);
void write_report_csv(const std::filesystem::path& path, const CrossValidationResult& result);
/// Table with one row per method and columns Healthy, Affected, Dead, Average.
std::string format_summary(const CrossValidationResult& result);

// ---------------------------------------------------------------------------
// Pipeline checkpoint: magic `HPIP`, uint32 version, uint32 entry count, then
// per entry a 16-byte zero-padded name, uint64 offset and uint64 size, then
// the blocks: `encoder` (ENCM), `standardizer` (STDZ), `svr.healthy`,
// `svr.affected`, `svr.dead` (SVRM each).

inline constexpr std::uint32_t kPipelineFormatVersion = 1;

std::vector<std::uint8_t> encode_pipeline(const PipelineModel& model);
PipelineModel decode_pipeline(std::span<const std::uint8_t> bytes);
void save_pipeline(const std::filesystem::path& path, const PipelineModel& model);
PipelineModel load_pipeline(const std::filesystem::path& path);

} // namespace beetlescan
