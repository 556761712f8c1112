#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "beetlescan/nn.hpp"
#include "beetlescan/random.hpp"
#include "beetlescan/spectra.hpp"

namespace beetlescan {

/// x' = beta * (alpha x + noise). alpha ~ U[alpha_min, alpha_max], noise is
/// i.i.d. N(0, sigma1^2) per band, beta is a natural cubic spline through
/// `num_knots` evenly spaced knots with values ~ N(1, sigma2^2).
struct AugmentationConfig
{
    double alpha_min = 0.9;
    double alpha_max = 1.1;
    double sigma1 = 0.01;
    double sigma2 = 0.1;
    std::size_t num_knots = 8;
    std::uint64_t seed = 0;

    void validate() const;
};

Spectrum magnitude_warp(std::span<const double> spectrum, const AugmentationConfig& config, Rng& rng);

/// u.v / (|u| |v|). Throws ValidationError if either norm is below 1e-12.
double cosine_sim(std::span<const double> u, std::span<const double> v);

struct LossResult
{
    double loss = 0.0;
    nn::Matrix gradient;             // d(loss)/d(embeddings), same shape
    std::size_t skipped_anchors = 0; // anchors without positives (fine-tune loss)
};

/// NT-Xent over 2B rows ordered (originals, augmented): row i and row i +/- B
/// are each other's positives, every other row is a negative, and the
/// self-similarity is excluded from the denominator.
LossResult simclr_loss(const nn::Matrix& embeddings, double tau);

/// Label-aware contrastive loss. For anchor i the numerator sums exp(sim/tau)
/// over K_i = {k != i : |y_i - y_k| < lambda}, the denominator over all
/// j != i. Anchors with empty K_i are skipped and counted; if every anchor is
/// skipped a ValidationError is thrown.
LossResult finetune_loss(const nn::Matrix& embeddings, std::span<const AbundanceVector> labels, double lambda,
                         double tau);

struct PretrainConfig
{
    double tau = 0.0866;
    std::size_t batch_size = 64;
    std::size_t epochs = 100;
    double learning_rate = 0.0094;
    double weight_decay = 0.0343;
    /// Spectra drawn (without replacement) per epoch; 0 uses all of them.
    std::size_t samples_per_epoch = 0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct FinetuneConfig
{
    double lambda = 0.6;
    double tau = 0.0866;
    std::size_t epochs = 100;
    double learning_rate = 0.0051;
    double weight_decay = 0.0066;

    void validate() const;
};

struct EpochStats
{
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    std::size_t skipped_anchors = 0;
};

struct TrainingResult
{
    nn::EncoderModel model;
    std::vector<EpochStats> history;
};

/// Self-supervised training of encoder and head on unlabeled spectra.
TrainingResult pretrain(nn::EncoderModel model, std::span<const Spectrum> unlabeled, const PretrainConfig& config,
                        const AugmentationConfig& augmentation);

/// Full-batch supervised fine-tuning of the projection head only; the conv
/// and batch-norm state is frozen and batch norm runs in eval mode.
TrainingResult finetune(nn::EncoderModel model, std::span<const LabeledSample> labeled, const FinetuneConfig& config);

/// CSV with header `epoch,mean_loss,skipped_anchors`.
void write_loss_history(const std::filesystem::path& path, std::span<const EpochStats> history);

} // namespace beetlescan
