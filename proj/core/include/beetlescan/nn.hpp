#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "beetlescan/spectra.hpp"

namespace beetlescan::nn {

/// Row-major dense matrix; rows are samples.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Mode
{
    train,
    eval
};

/// Hands out 64-byte aligned blocks. Eigen chooses the peeling of its
/// vectorized reductions from the runtime address of mapped data, so a fixed
/// alignment is what keeps results bit-identical from run to run.
template <class T>
struct AlignedAllocator
{
    using value_type = T;
    static constexpr std::align_val_t kAlignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

/// Storage for tensors and layer parameters.
using Buffer = std::vector<double, AlignedAllocator<double>>;

/// Contiguous (batch, channels, length) tensor.
struct Tensor3
{
    std::size_t batch = 0;
    std::size_t channels = 0;
    std::size_t length = 0;
    Buffer data;

    Tensor3() = default;
    Tensor3(std::size_t b, std::size_t c, std::size_t l, double fill = 0.0)
        : batch(b), channels(c), length(l), data(b * c * l, fill) {}

    double& operator()(std::size_t b, std::size_t c, std::size_t t) { return data[(b * channels + c) * length + t]; }
    double operator()(std::size_t b, std::size_t c, std::size_t t) const
    {
        return data[(b * channels + c) * length + t];
    }

    std::span<double> row(std::size_t b, std::size_t c) { return {data.data() + (b * channels + c) * length, length}; }
    std::span<const double> row(std::size_t b, std::size_t c) const
    {
        return {data.data() + (b * channels + c) * length, length};
    }

    bool same_shape(const Tensor3& o) const noexcept
    {
        return batch == o.batch && channels == o.channels && length == o.length;
    }

    friend bool operator==(const Tensor3&, const Tensor3&) = default;
};

/// Stacks spectra into a (n, 1, bands) tensor.
Tensor3 spectra_batch(std::span<const Spectrum> spectra);

// ---------------------------------------------------------------------------
// Layers. Parameter structs double as gradient accumulators of the same
// shape.

/// Stride 1, zero "same" padding (kernel / 2 on each side), odd kernels.
struct Conv1d
{
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 0;
    Buffer weight; // [out][in][kernel]
    Buffer bias;   // [out]

    static Conv1d zeros(std::size_t in_channels, std::size_t out_channels, std::size_t kernel);

    friend bool operator==(const Conv1d&, const Conv1d&) = default;
};

struct BatchNorm
{
    static constexpr double kMomentum = 0.9;
    static constexpr double kEpsilon = 1e-5;

    std::size_t channels = 0;
    Buffer scale;
    Buffer shift;
    Buffer running_mean;
    Buffer running_var;

    /// scale 1, shift 0, running mean 0, running variance 1.
    static BatchNorm identity(std::size_t channels);

    friend bool operator==(const BatchNorm&, const BatchNorm&) = default;
};

struct Dense
{
    std::size_t in_features = 0;
    std::size_t out_features = 0;
    Buffer weight; // [out][in]
    Buffer bias;   // [out]

    static Dense zeros(std::size_t in_features, std::size_t out_features);

    friend bool operator==(const Dense&, const Dense&) = default;
};

Tensor3 conv1d_forward(const Tensor3& input, const Conv1d& layer);
/// Accumulates into `grads` and returns the gradient with respect to `input`.
Tensor3 conv1d_backward(const Tensor3& grad_output, const Tensor3& input, const Conv1d& layer, Conv1d& grads);

struct BatchNormCache
{
    Mode mode = Mode::eval;
    Tensor3 normalized;
    std::vector<double> batch_mean;
    std::vector<double> batch_var; // biased
    std::vector<double> inv_std;
};

/// Train mode normalizes with batch statistics (returned through `cache`);
/// eval mode uses the running statistics. Running statistics are only
/// changed by update_running_stats.
Tensor3 batchnorm_forward(const Tensor3& input, const BatchNorm& bn, Mode mode, BatchNormCache* cache = nullptr);
Tensor3 batchnorm_backward(const Tensor3& grad_output, const BatchNorm& bn, const BatchNormCache& cache,
                           BatchNorm& grads);
/// running = momentum * running + (1 - momentum) * batch (unbiased variance).
void update_running_stats(BatchNorm& bn, const BatchNormCache& cache);

Tensor3 relu(const Tensor3& input);
/// `output` is the forward ReLU output; gradient passes where it is positive.
Tensor3 relu_backward(const Tensor3& grad_output, const Tensor3& output);

/// Mean over the length axis: (batch, channels).
Matrix global_avg_pool(const Tensor3& input);
Tensor3 global_avg_pool_backward(const Matrix& grad_output, std::size_t length);

Matrix dense_forward(const Matrix& input, const Dense& layer);
Matrix dense_backward(const Matrix& grad_output, const Matrix& input, const Dense& layer, Dense& grads);

// ---------------------------------------------------------------------------
// Encoder e (three conv/bn/relu blocks + global average pooling) and linear
// projection head h.

inline constexpr std::array<std::size_t, 3> kKernelSizes{7, 5, 3};
inline constexpr std::array<std::size_t, 3> kChannels{32, 64, 128};
inline constexpr std::size_t kLatentWidth = 128;
inline constexpr std::size_t kEmbeddingWidth = 16;

struct ParamRef
{
    std::string name;
    std::span<double> values;
};

struct EncoderModel
{
    std::size_t band_count = 0;
    std::array<Conv1d, 3> conv;
    std::array<BatchNorm, 3> bn;
    Dense head;

    /// He-normal conv and dense weights, zero biases, identity batch norms.
    static EncoderModel initialize(std::size_t band_count, std::uint64_t seed);
    /// Same architecture, every value zero. Used as a gradient buffer.
    static EncoderModel zeros_like(const EncoderModel& model);

    /// Throws ValidationError if the fixed architecture is violated.
    void validate() const;

    /// Every trainable tensor: conv weights/biases, bn scale/shift, head.
    std::vector<ParamRef> parameters();
    /// Only the projection head.
    std::vector<ParamRef> head_parameters();
    /// Conv and batch-norm tensors including running statistics.
    std::vector<ParamRef> frozen_state();

    friend bool operator==(const EncoderModel&, const EncoderModel&) = default;
};

struct EncoderOutput
{
    Matrix latent;    // (batch, 128)
    Matrix embedding; // (batch, 16)
};

/// Activations a train-mode forward pass must keep for backward.
struct EncoderTape
{
    bool recorded = false;
    std::array<Tensor3, 3> block_input;  // input of each conv
    std::array<BatchNormCache, 3> norm;  // per batch norm
    Tensor3 final_activation;            // ReLU output of the third block
    Matrix latent;
};

/// `input` is (batch, 1, bands). Pure: never mutates the model.
EncoderOutput encoder_forward(const EncoderModel& model, const Tensor3& input, Mode mode,
                              EncoderTape* tape = nullptr);

/// Backpropagates d(loss)/d(embedding) (and optionally an extra gradient at
/// the latent) through the recorded pass, accumulating into `grads`.
/// Returns the gradient with respect to the input batch.
Tensor3 encoder_backward(const EncoderModel& model, const EncoderTape& tape, const Matrix& grad_embedding,
                         EncoderModel& grads, const Matrix* grad_latent = nullptr);

/// Folds the batch statistics of a train-mode tape into the running stats.
void update_running_stats(EncoderModel& model, const EncoderTape& tape);

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay.

struct AdamWConfig
{
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

struct OptimizerState
{
    AdamWConfig config;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;

    explicit OptimizerState(AdamWConfig cfg = {}) : config(cfg) { config.validate(); }
};

/// p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps). Moments are sized on
/// the first call; later calls must present the same shapes.
void optimizer_step(std::span<const ParamRef> params, std::span<const ParamRef> grads, OptimizerState& state);

void zero(std::span<const ParamRef> params);

// ---------------------------------------------------------------------------
// Checkpoint (`ENCM`): magic, uint32 version, uint32 band count, then float64
// values in this order for each block i = 1..3:
//   conv_i.weight [out][in][k], conv_i.bias, bn_i.scale, bn_i.shift,
//   bn_i.running_mean, bn_i.running_var
// followed by head.weight [16][128], head.bias.

inline constexpr std::uint32_t kEncoderFormatVersion = 1;

std::vector<std::uint8_t> encode_encoder(const EncoderModel& model);
EncoderModel decode_encoder(std::span<const std::uint8_t> bytes);
void save_encoder(const std::filesystem::path& path, const EncoderModel& model);
EncoderModel load_encoder(const std::filesystem::path& path);

} // namespace beetlescan::nn
