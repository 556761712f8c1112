#include "beetlescan/nn.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "beetlescan/error.hpp"
#include "beetlescan/random.hpp"

namespace beetlescan::nn {

namespace {

using MatMap = Eigen::Map<Matrix>;
using ConstMatMap = Eigen::Map<const Matrix>;

std::string shape_str(const Tensor3& t)
{
    return "(" + std::to_string(t.batch) + "," + std::to_string(t.channels) + "," + std::to_string(t.length) + ")";
}

void check_finite(const Tensor3& t, const char* what)
{
    for (double v : t.data)
        if (!std::isfinite(v))
            throw ValidationError(std::string(what) + ": non-finite input value");
}

// im2col for one sample: rows (in_channel, tap), columns positions.
void im2col(const Tensor3& input, std::size_t b, std::size_t kernel, Matrix& col)
{
    const std::size_t L = input.length;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);
    col.resize(static_cast<Eigen::Index>(input.channels * kernel), static_cast<Eigen::Index>(L));
    for (std::size_t i = 0; i < input.channels; ++i)
    {
        const double* src = input.data.data() + (b * input.channels + i) * L;
        for (std::size_t k = 0; k < kernel; ++k)
        {
            double* dst = col.data() + (i * kernel + k) * L;
            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad;
            for (std::size_t t = 0; t < L; ++t)
            {
                const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t) + shift;
                dst[t] = (s >= 0 && s < static_cast<std::ptrdiff_t>(L)) ? src[s] : 0.0;
            }
        }
    }
}

void check_conv(const Tensor3& input, const Conv1d& layer)
{
    if (input.channels != layer.in_channels)
        throw ShapeError("conv1d: input has " + std::to_string(input.channels) + " channels, layer expects " +
                         std::to_string(layer.in_channels));
    if (layer.kernel % 2 == 0)
        throw ShapeError("conv1d: same padding requires an odd kernel size");
    if (layer.weight.size() != layer.out_channels * layer.in_channels * layer.kernel ||
        layer.bias.size() != layer.out_channels)
        throw ShapeError("conv1d: parameter sizes do not match the declared shape");
}

void he_normal(Buffer& w, std::size_t fan_in, Rng& rng)
{
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w)
        v = std * standard_normal(rng);
}

} // namespace

Tensor3 spectra_batch(std::span<const Spectrum> spectra)
{
    if (spectra.empty())
        throw ShapeError("cannot batch zero spectra");
    const std::size_t L = spectra.front().size();
    Tensor3 out(spectra.size(), 1, L);
    for (std::size_t b = 0; b < spectra.size(); ++b)
    {
        if (spectra[b].size() != L)
            throw ShapeError("spectra in a batch differ in band count");
        std::copy(spectra[b].begin(), spectra[b].end(), out.row(b, 0).begin());
    }
    return out;
}

Conv1d Conv1d::zeros(std::size_t in_channels, std::size_t out_channels, std::size_t kernel)
{
    return {in_channels, out_channels, kernel, Buffer(out_channels * in_channels * kernel, 0.0),
            Buffer(out_channels, 0.0)};
}

BatchNorm BatchNorm::identity(std::size_t channels)
{
    return {channels, Buffer(channels, 1.0), Buffer(channels, 0.0),
            Buffer(channels, 0.0), Buffer(channels, 1.0)};
}

Dense Dense::zeros(std::size_t in_features, std::size_t out_features)
{
    return {in_features, out_features, Buffer(in_features * out_features, 0.0),
            Buffer(out_features, 0.0)};
}

Tensor3 conv1d_forward(const Tensor3& input, const Conv1d& layer)
{
    check_conv(input, layer);
    const std::size_t L = input.length;
    Tensor3 out(input.batch, layer.out_channels, L);
    const ConstMatMap W(layer.weight.data(), static_cast<Eigen::Index>(layer.out_channels),
                        static_cast<Eigen::Index>(layer.in_channels * layer.kernel));
    const Eigen::Map<const Eigen::VectorXd> bias(layer.bias.data(), static_cast<Eigen::Index>(layer.out_channels));
    Matrix col;
    for (std::size_t b = 0; b < input.batch; ++b)
    {
        im2col(input, b, layer.kernel, col);
        MatMap Y(out.data.data() + b * layer.out_channels * L, static_cast<Eigen::Index>(layer.out_channels),
                 static_cast<Eigen::Index>(L));
        Y.noalias() = W * col;
        Y.colwise() += bias;
    }
    return out;
}

Tensor3 conv1d_backward(const Tensor3& grad_output, const Tensor3& input, const Conv1d& layer, Conv1d& grads)
{
    check_conv(input, layer);
    if (grad_output.batch != input.batch || grad_output.channels != layer.out_channels ||
        grad_output.length != input.length)
        throw ShapeError("conv1d backward: gradient shape " + shape_str(grad_output) + " does not match output");
    if (grads.weight.size() != layer.weight.size() || grads.bias.size() != layer.bias.size())
        throw ShapeError("conv1d backward: gradient buffer has the wrong shape");

    const std::size_t L = input.length;
    const auto rows = static_cast<Eigen::Index>(layer.in_channels * layer.kernel);
    const auto outc = static_cast<Eigen::Index>(layer.out_channels);
    const ConstMatMap W(layer.weight.data(), outc, rows);
    MatMap dW(grads.weight.data(), outc, rows);
    Eigen::Map<Eigen::VectorXd> db(grads.bias.data(), outc);

    Tensor3 grad_input(input.batch, input.channels, L);
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(layer.kernel / 2);
    Matrix col, dcol;
    for (std::size_t b = 0; b < input.batch; ++b)
    {
        im2col(input, b, layer.kernel, col);
        const ConstMatMap G(grad_output.data.data() + b * layer.out_channels * L, outc, static_cast<Eigen::Index>(L));
        dW.noalias() += G * col.transpose();
        db += G.rowwise().sum();
        dcol.noalias() = W.transpose() * G;
        for (std::size_t i = 0; i < input.channels; ++i)
        {
            double* dst = grad_input.data.data() + (b * input.channels + i) * L;
            for (std::size_t k = 0; k < layer.kernel; ++k)
            {
                const double* src = dcol.data() + (i * layer.kernel + k) * L;
                const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad;
                for (std::size_t t = 0; t < L; ++t)
                {
                    const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t) + shift;
                    if (s >= 0 && s < static_cast<std::ptrdiff_t>(L))
                        dst[s] += src[t];
                }
            }
        }
    }
    return grad_input;
}

Tensor3 batchnorm_forward(const Tensor3& input, const BatchNorm& bn, Mode mode, BatchNormCache* cache)
{
    if (input.channels != bn.channels)
        throw ShapeError("batchnorm: input has " + std::to_string(input.channels) + " channels, layer expects " +
                         std::to_string(bn.channels));
    const std::size_t n = input.batch * input.length;
    if (mode == Mode::train && n < 2)
        throw ValidationError("batchnorm: train mode needs at least two values per channel");

    Tensor3 out(input.batch, input.channels, input.length);
    BatchNormCache local;
    BatchNormCache& c = cache ? *cache : local;
    c.mode = mode;
    c.batch_mean.assign(bn.channels, 0.0);
    c.batch_var.assign(bn.channels, 0.0);
    c.inv_std.assign(bn.channels, 0.0);
    c.normalized = Tensor3(input.batch, input.channels, input.length);

    for (std::size_t ch = 0; ch < bn.channels; ++ch)
    {
        double mean, var;
        if (mode == Mode::train)
        {
            double s = 0.0;
            for (std::size_t b = 0; b < input.batch; ++b)
                for (double v : input.row(b, ch))
                    s += v;
            mean = s / static_cast<double>(n);
            double ss = 0.0;
            for (std::size_t b = 0; b < input.batch; ++b)
                for (double v : input.row(b, ch))
                    ss += (v - mean) * (v - mean);
            var = ss / static_cast<double>(n);
        }
        else
        {
            mean = bn.running_mean[ch];
            var = bn.running_var[ch];
        }
        const double inv_std = 1.0 / std::sqrt(var + BatchNorm::kEpsilon);
        c.batch_mean[ch] = mean;
        c.batch_var[ch] = var;
        c.inv_std[ch] = inv_std;
        for (std::size_t b = 0; b < input.batch; ++b)
        {
            auto x = input.row(b, ch);
            auto xh = c.normalized.row(b, ch);
            auto y = out.row(b, ch);
            for (std::size_t t = 0; t < input.length; ++t)
            {
                xh[t] = (x[t] - mean) * inv_std;
                y[t] = bn.scale[ch] * xh[t] + bn.shift[ch];
            }
        }
    }
    return out;
}

Tensor3 batchnorm_backward(const Tensor3& grad_output, const BatchNorm& bn, const BatchNormCache& cache,
                           BatchNorm& grads)
{
    if (!grad_output.same_shape(cache.normalized) || grad_output.channels != bn.channels)
        throw ShapeError("batchnorm backward: gradient shape does not match the cached pass");
    const std::size_t n = grad_output.batch * grad_output.length;
    Tensor3 grad_input(grad_output.batch, grad_output.channels, grad_output.length);
    for (std::size_t ch = 0; ch < bn.channels; ++ch)
    {
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (std::size_t b = 0; b < grad_output.batch; ++b)
        {
            auto dy = grad_output.row(b, ch);
            auto xh = cache.normalized.row(b, ch);
            for (std::size_t t = 0; t < grad_output.length; ++t)
            {
                sum_dy += dy[t];
                sum_dy_xh += dy[t] * xh[t];
            }
        }
        grads.scale[ch] += sum_dy_xh;
        grads.shift[ch] += sum_dy;

        const double g = bn.scale[ch] * cache.inv_std[ch];
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t b = 0; b < grad_output.batch; ++b)
        {
            auto dy = grad_output.row(b, ch);
            auto xh = cache.normalized.row(b, ch);
            auto dx = grad_input.row(b, ch);
            if (cache.mode == Mode::train)
                for (std::size_t t = 0; t < grad_output.length; ++t)
                    dx[t] = g * (dy[t] - inv_n * sum_dy - xh[t] * inv_n * sum_dy_xh);
            else
                for (std::size_t t = 0; t < grad_output.length; ++t)
                    dx[t] = g * dy[t];
        }
    }
    return grad_input;
}

void update_running_stats(BatchNorm& bn, const BatchNormCache& cache)
{
    if (cache.mode != Mode::train)
        return;
    const double n = static_cast<double>(cache.normalized.batch * cache.normalized.length);
    const double unbias = n / (n - 1.0);
    for (std::size_t ch = 0; ch < bn.channels; ++ch)
    {
        bn.running_mean[ch] = BatchNorm::kMomentum * bn.running_mean[ch] + (1.0 - BatchNorm::kMomentum) * cache.batch_mean[ch];
        bn.running_var[ch] =
            BatchNorm::kMomentum * bn.running_var[ch] + (1.0 - BatchNorm::kMomentum) * cache.batch_var[ch] * unbias;
    }
}

Tensor3 relu(const Tensor3& input)
{
    Tensor3 out = input;
    for (auto& v : out.data)
        v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor3 relu_backward(const Tensor3& grad_output, const Tensor3& output)
{
    if (!grad_output.same_shape(output))
        throw ShapeError("relu backward: shape mismatch");
    Tensor3 g = grad_output;
    for (std::size_t i = 0; i < g.data.size(); ++i)
        if (!(output.data[i] > 0.0))
            g.data[i] = 0.0;
    return g;
}

Matrix global_avg_pool(const Tensor3& input)
{
    if (input.length == 0)
        throw ShapeError("global average pooling over an empty axis");
    Matrix out(static_cast<Eigen::Index>(input.batch), static_cast<Eigen::Index>(input.channels));
    for (std::size_t b = 0; b < input.batch; ++b)
        for (std::size_t c = 0; c < input.channels; ++c)
        {
            double s = 0.0;
            for (double v : input.row(b, c))
                s += v;
            out(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(c)) = s / static_cast<double>(input.length);
        }
    return out;
}

Tensor3 global_avg_pool_backward(const Matrix& grad_output, std::size_t length)
{
    Tensor3 g(static_cast<std::size_t>(grad_output.rows()), static_cast<std::size_t>(grad_output.cols()), length);
    const double inv = 1.0 / static_cast<double>(length);
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t c = 0; c < g.channels; ++c)
        {
            const double v = grad_output(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(c)) * inv;
            for (auto& x : g.row(b, c))
                x = v;
        }
    return g;
}

Matrix dense_forward(const Matrix& input, const Dense& layer)
{
    if (static_cast<std::size_t>(input.cols()) != layer.in_features)
        throw ShapeError("dense: input has " + std::to_string(input.cols()) + " features, layer expects " +
                         std::to_string(layer.in_features));
    // A plain loop keeps each row's result independent of the batch size;
    // a blocked GEMM would pick its kernel, and so its rounding, by shape.
    Matrix out(input.rows(), static_cast<Eigen::Index>(layer.out_features));
    for (Eigen::Index b = 0; b < input.rows(); ++b)
    {
        const double* x = input.data() + b * input.cols();
        for (std::size_t o = 0; o < layer.out_features; ++o)
        {
            const double* w = layer.weight.data() + o * layer.in_features;
            double s = 0.0;
            for (std::size_t k = 0; k < layer.in_features; ++k)
                s += x[k] * w[k];
            out(b, static_cast<Eigen::Index>(o)) = s + layer.bias[o];
        }
    }
    return out;
}

Matrix dense_backward(const Matrix& grad_output, const Matrix& input, const Dense& layer, Dense& grads)
{
    if (static_cast<std::size_t>(grad_output.cols()) != layer.out_features || grad_output.rows() != input.rows() ||
        static_cast<std::size_t>(input.cols()) != layer.in_features)
        throw ShapeError("dense backward: shape mismatch");
    const auto outf = static_cast<Eigen::Index>(layer.out_features);
    const auto inf = static_cast<Eigen::Index>(layer.in_features);
    const ConstMatMap W(layer.weight.data(), outf, inf);
    MatMap dW(grads.weight.data(), outf, inf);
    Eigen::Map<Eigen::RowVectorXd> db(grads.bias.data(), outf);
    dW.noalias() += grad_output.transpose() * input;
    db += grad_output.colwise().sum();
    return grad_output * W;
}

// ---------------------------------------------------------------------------

EncoderModel EncoderModel::initialize(std::size_t band_count, std::uint64_t seed)
{
    if (band_count == 0)
        throw ValidationError("encoder band count must be positive");
    EncoderModel m;
    m.band_count = band_count;
    auto rng = make_rng(seed, {0x696e6974});
    std::size_t in = 1;
    for (std::size_t i = 0; i < 3; ++i)
    {
        m.conv[i] = Conv1d::zeros(in, kChannels[i], kKernelSizes[i]);
        he_normal(m.conv[i].weight, in * kKernelSizes[i], rng);
        m.bn[i] = BatchNorm::identity(kChannels[i]);
        in = kChannels[i];
    }
    m.head = Dense::zeros(kLatentWidth, kEmbeddingWidth);
    he_normal(m.head.weight, kLatentWidth, rng);
    return m;
}

EncoderModel EncoderModel::zeros_like(const EncoderModel& model)
{
    EncoderModel z = model;
    for (auto& p : z.parameters())
        std::fill(p.values.begin(), p.values.end(), 0.0);
    for (auto& bn : z.bn)
    {
        std::fill(bn.running_mean.begin(), bn.running_mean.end(), 0.0);
        std::fill(bn.running_var.begin(), bn.running_var.end(), 0.0);
    }
    return z;
}

void EncoderModel::validate() const
{
    if (band_count == 0)
        throw ValidationError("encoder band count must be positive");
    std::size_t in = 1;
    for (std::size_t i = 0; i < 3; ++i)
    {
        const auto& c = conv[i];
        if (c.in_channels != in || c.out_channels != kChannels[i] || c.kernel != kKernelSizes[i] ||
            c.weight.size() != c.out_channels * c.in_channels * c.kernel || c.bias.size() != c.out_channels)
            throw ValidationError("conv" + std::to_string(i + 1) + " does not match the fixed encoder architecture");
        const auto& b = bn[i];
        if (b.channels != kChannels[i] || b.scale.size() != b.channels || b.shift.size() != b.channels ||
            b.running_mean.size() != b.channels || b.running_var.size() != b.channels)
            throw ValidationError("bn" + std::to_string(i + 1) + " does not match the fixed encoder architecture");
        for (double v : b.running_var)
            if (!(v > 0.0))
                throw ValidationError("bn" + std::to_string(i + 1) + " running variance must be positive");
        in = kChannels[i];
    }
    if (head.in_features != kLatentWidth || head.out_features != kEmbeddingWidth ||
        head.weight.size() != kLatentWidth * kEmbeddingWidth || head.bias.size() != kEmbeddingWidth)
        throw ValidationError("projection head must map 128 -> 16");
}

std::vector<ParamRef> EncoderModel::parameters()
{
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < 3; ++i)
    {
        const std::string n = std::to_string(i + 1);
        out.push_back({"conv" + n + ".weight", conv[i].weight});
        out.push_back({"conv" + n + ".bias", conv[i].bias});
        out.push_back({"bn" + n + ".scale", bn[i].scale});
        out.push_back({"bn" + n + ".shift", bn[i].shift});
    }
    out.push_back({"head.weight", head.weight});
    out.push_back({"head.bias", head.bias});
    return out;
}

std::vector<ParamRef> EncoderModel::head_parameters()
{
    return {{"head.weight", head.weight}, {"head.bias", head.bias}};
}

std::vector<ParamRef> EncoderModel::frozen_state()
{
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < 3; ++i)
    {
        const std::string n = std::to_string(i + 1);
        out.push_back({"conv" + n + ".weight", conv[i].weight});
        out.push_back({"conv" + n + ".bias", conv[i].bias});
        out.push_back({"bn" + n + ".scale", bn[i].scale});
        out.push_back({"bn" + n + ".shift", bn[i].shift});
        out.push_back({"bn" + n + ".running_mean", bn[i].running_mean});
        out.push_back({"bn" + n + ".running_var", bn[i].running_var});
    }
    return out;
}

EncoderOutput encoder_forward(const EncoderModel& model, const Tensor3& input, Mode mode, EncoderTape* tape)
{
    if (input.channels != 1)
        throw ShapeError("encoder input must have one channel, got " + shape_str(input));
    if (input.batch == 0 || input.length == 0)
        throw ShapeError("encoder input is empty");
    if (model.band_count != 0 && input.length != model.band_count)
        throw ShapeError("encoder expects " + std::to_string(model.band_count) + " bands, got " + shape_str(input));
    check_finite(input, "encoder");

    EncoderTape local;
    EncoderTape& tp = tape ? *tape : local;
    tp.recorded = false;

    Tensor3 x = input;
    for (std::size_t i = 0; i < 3; ++i)
    {
        Tensor3 y = conv1d_forward(x, model.conv[i]);
        if (tape)
            tp.block_input[i] = std::move(x);
        y = batchnorm_forward(y, model.bn[i], mode, tape ? &tp.norm[i] : nullptr);
        x = relu(y);
    }
    EncoderOutput out;
    out.latent = global_avg_pool(x);
    out.embedding = dense_forward(out.latent, model.head);
    if (tape)
    {
        tp.final_activation = std::move(x);
        tp.latent = out.latent;
        tp.recorded = true;
    }
    return out;
}

Tensor3 encoder_backward(const EncoderModel& model, const EncoderTape& tape, const Matrix& grad_embedding,
                         EncoderModel& grads, const Matrix* grad_latent)
{
    if (!tape.recorded)
        throw ValidationError("encoder backward called without a recorded forward pass");
    if (grad_embedding.rows() != tape.latent.rows() ||
        static_cast<std::size_t>(grad_embedding.cols()) != kEmbeddingWidth)
        throw ShapeError("encoder backward: embedding gradient shape mismatch");

    Matrix d_latent = dense_backward(grad_embedding, tape.latent, model.head, grads.head);
    if (grad_latent)
    {
        if (grad_latent->rows() != d_latent.rows() || grad_latent->cols() != d_latent.cols())
            throw ShapeError("encoder backward: latent gradient shape mismatch");
        d_latent += *grad_latent;
    }
    Tensor3 g = global_avg_pool_backward(d_latent, tape.final_activation.length);
    const Tensor3* activation = &tape.final_activation;
    for (std::size_t i = 3; i-- > 0;)
    {
        g = relu_backward(g, *activation);
        g = batchnorm_backward(g, model.bn[i], tape.norm[i], grads.bn[i]);
        g = conv1d_backward(g, tape.block_input[i], model.conv[i], grads.conv[i]);
        activation = &tape.block_input[i];
    }
    return g;
}

void update_running_stats(EncoderModel& model, const EncoderTape& tape)
{
    if (!tape.recorded)
        throw ValidationError("no recorded forward pass to take statistics from");
    for (std::size_t i = 0; i < 3; ++i)
        update_running_stats(model.bn[i], tape.norm[i]);
}

// ---------------------------------------------------------------------------

void AdamWConfig::validate() const
{
    if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0))
        throw ValidationError("learning rate and weight decay must be non-negative");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
        throw ValidationError("moment decay rates must lie in (0,1)");
    if (!(epsilon > 0.0))
        throw ValidationError("optimizer epsilon must be positive");
}

void optimizer_step(std::span<const ParamRef> params, std::span<const ParamRef> grads, OptimizerState& state)
{
    if (params.size() != grads.size())
        throw ShapeError("optimizer: parameter and gradient lists differ in length");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].values.size() != grads[i].values.size())
            throw ShapeError("optimizer: shape mismatch for '" + params[i].name + "'");

    if (state.first_moment.empty())
    {
        for (const auto& p : params)
        {
            state.first_moment.emplace_back(p.values.size(), 0.0);
            state.second_moment.emplace_back(p.values.size(), 0.0);
        }
    }
    if (state.first_moment.size() != params.size())
        throw ShapeError("optimizer: state was created for a different parameter list");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (state.first_moment[i].size() != params[i].values.size())
            throw ShapeError("optimizer: state shape mismatch for '" + params[i].name + "'");

    const auto& cfg = state.config;
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;

    for (std::size_t i = 0; i < params.size(); ++i)
    {
        auto p = params[i].values;
        auto g = grads[i].values;
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        for (std::size_t j = 0; j < p.size(); ++j)
        {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            p[j] = p[j] * decay - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
        }
    }
}

void zero(std::span<const ParamRef> params)
{
    for (const auto& p : params)
        std::fill(p.values.begin(), p.values.end(), 0.0);
}

} // namespace beetlescan::nn
