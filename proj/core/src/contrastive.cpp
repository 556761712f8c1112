#include "beetlescan/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "beetlescan/error.hpp"
#include "beetlescan/spline.hpp"

namespace beetlescan {

namespace {

constexpr double kMinNorm = 1e-12;

struct Normalized
{
    nn::Matrix unit;           // rows scaled to unit length
    Eigen::VectorXd norms;
};

Normalized normalize_rows(const nn::Matrix& z)
{
    Normalized out{z, Eigen::VectorXd(z.rows())};
    for (Eigen::Index i = 0; i < z.rows(); ++i)
    {
        const double n = z.row(i).norm();
        if (!(n >= kMinNorm))
            throw ValidationError("embedding row " + std::to_string(i) + " has (near) zero norm");
        out.norms(i) = n;
        out.unit.row(i) /= n;
    }
    return out;
}

// Given G = d(loss)/d(S) with S = U U^T, returns d(loss)/d(Z).
nn::Matrix similarity_backward(const nn::Matrix& G, const Normalized& nz)
{
    nn::Matrix dU = (G + G.transpose()) * nz.unit;
    nn::Matrix dZ(dU.rows(), dU.cols());
    for (Eigen::Index i = 0; i < dU.rows(); ++i)
    {
        const double radial = dU.row(i).dot(nz.unit.row(i));
        dZ.row(i) = (dU.row(i) - radial * nz.unit.row(i)) / nz.norms(i);
    }
    return dZ;
}

double logsumexp(std::span<const double> xs)
{
    double m = -std::numeric_limits<double>::infinity();
    for (double x : xs)
        m = std::max(m, x);
    double s = 0.0;
    for (double x : xs)
        s += std::exp(x - m);
    return m + std::log(s);
}

} // namespace

void AugmentationConfig::validate() const
{
    if (!(alpha_min > 0.0) || !(alpha_max >= alpha_min) || !std::isfinite(alpha_max))
        throw ValidationError("alpha range must satisfy 0 < alpha_min <= alpha_max < inf");
    if (!(sigma1 >= 0.0) || !(sigma2 >= 0.0))
        throw ValidationError("augmentation noise deviations must be non-negative");
    if (num_knots < 2)
        throw ValidationError("magnitude warping needs at least two knots");
}

Spectrum magnitude_warp(std::span<const double> spectrum, const AugmentationConfig& config, Rng& rng)
{
    config.validate();
    if (spectrum.size() < config.num_knots)
        throw ValidationError("spectrum has " + std::to_string(spectrum.size()) + " bands, fewer than the " +
                              std::to_string(config.num_knots) + " warping knots");
    const double alpha = uniform(rng, config.alpha_min, config.alpha_max);
    Spectrum out(spectrum.size());
    for (std::size_t b = 0; b < spectrum.size(); ++b)
        out[b] = alpha * spectrum[b] + config.sigma1 * standard_normal(rng);

    std::vector<double> knots(config.num_knots);
    for (auto& k : knots)
        k = 1.0 + config.sigma2 * standard_normal(rng);
    const auto beta = spline_curve(knots, spectrum.size());
    for (std::size_t b = 0; b < out.size(); ++b)
        out[b] *= beta[b];
    return out;
}

double cosine_sim(std::span<const double> u, std::span<const double> v)
{
    if (u.size() != v.size())
        throw ShapeError("cosine similarity of vectors with different lengths");
    double uv = 0.0, uu = 0.0, vv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i)
    {
        uv += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    const double nu = std::sqrt(uu), nv = std::sqrt(vv);
    if (!(nu >= kMinNorm) || !(nv >= kMinNorm))
        throw ValidationError("cosine similarity is undefined for a zero-norm vector");
    return std::clamp(uv / (nu * nv), -1.0, 1.0);
}

LossResult simclr_loss(const nn::Matrix& embeddings, double tau)
{
    if (!(tau > 0.0))
        throw ValidationError("temperature must be positive");
    const Eigen::Index m = embeddings.rows();
    if (m < 2 || m % 2 != 0)
        throw ShapeError("SimCLR loss needs an even number (>= 2) of embedding rows");
    const Eigen::Index half = m / 2;

    const Normalized nz = normalize_rows(embeddings);
    const nn::Matrix sim = nz.unit * nz.unit.transpose();

    nn::Matrix G = nn::Matrix::Zero(m, m);
    std::vector<double> logits(static_cast<std::size_t>(m - 1));
    double total = 0.0;
    const double inv_m = 1.0 / static_cast<double>(m);
    for (Eigen::Index i = 0; i < m; ++i)
    {
        const Eigen::Index pos = i < half ? i + half : i - half;
        std::size_t n = 0;
        for (Eigen::Index j = 0; j < m; ++j)
            if (j != i)
                logits[n++] = sim(i, j) / tau;
        const double lse = logsumexp(logits);
        total += lse - sim(i, pos) / tau;
        for (Eigen::Index j = 0; j < m; ++j)
            if (j != i)
                G(i, j) = inv_m / tau * std::exp(sim(i, j) / tau - lse);
        G(i, pos) -= inv_m / tau;
    }
    LossResult out;
    out.loss = total * inv_m;
    out.gradient = similarity_backward(G, nz);
    return out;
}

LossResult finetune_loss(const nn::Matrix& embeddings, std::span<const AbundanceVector> labels, double lambda,
                         double tau)
{
    if (!(tau > 0.0) || !(lambda > 0.0))
        throw ValidationError("temperature and label threshold must be positive");
    const Eigen::Index n = embeddings.rows();
    if (n < 2)
        throw ShapeError("fine-tuning loss needs at least two samples");
    if (static_cast<std::size_t>(n) != labels.size())
        throw ShapeError("fine-tuning loss: embedding and label counts differ");

    const Normalized nz = normalize_rows(embeddings);
    const nn::Matrix sim = nz.unit * nz.unit.transpose();

    std::vector<std::vector<Eigen::Index>> positives(static_cast<std::size_t>(n));
    std::size_t active = 0;
    for (Eigen::Index i = 0; i < n; ++i)
    {
        for (Eigen::Index k = 0; k < n; ++k)
            if (k != i && label_distance(labels[static_cast<std::size_t>(i)], labels[static_cast<std::size_t>(k)]) < lambda)
                positives[static_cast<std::size_t>(i)].push_back(k);
        if (!positives[static_cast<std::size_t>(i)].empty())
            ++active;
    }
    if (active == 0)
        throw ValidationError("fine-tuning loss: no anchor has a positive within the label threshold");

    nn::Matrix G = nn::Matrix::Zero(n, n);
    const double inv_a = 1.0 / static_cast<double>(active);
    std::vector<double> den, num;
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
    {
        const auto& pos = positives[static_cast<std::size_t>(i)];
        if (pos.empty())
            continue;
        den.clear();
        num.clear();
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i)
                den.push_back(sim(i, j) / tau);
        for (auto k : pos)
            num.push_back(sim(i, k) / tau);
        const double lse_den = logsumexp(den);
        const double lse_num = logsumexp(num);
        total += lse_den - lse_num;
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i)
                G(i, j) += inv_a / tau * std::exp(sim(i, j) / tau - lse_den);
        for (auto k : pos)
            G(i, k) -= inv_a / tau * std::exp(sim(i, k) / tau - lse_num);
    }
    LossResult out;
    out.loss = total * inv_a;
    out.gradient = similarity_backward(G, nz);
    out.skipped_anchors = static_cast<std::size_t>(n) - active;
    return out;
}

void PretrainConfig::validate() const
{
    if (!(tau > 0.0))
        throw ValidationError("pretraining temperature must be positive");
    if (batch_size < 2)
        throw ValidationError("pretraining batch size must be at least 2");
    if (epochs < 1)
        throw ValidationError("pretraining needs at least one epoch");
    nn::AdamWConfig{learning_rate, weight_decay}.validate();
}

void FinetuneConfig::validate() const
{
    if (!(lambda > 0.0))
        throw ValidationError("label threshold lambda must be positive");
    if (!(tau > 0.0))
        throw ValidationError("fine-tuning temperature must be positive");
    if (epochs < 1)
        throw ValidationError("fine-tuning needs at least one epoch");
    nn::AdamWConfig{learning_rate, weight_decay}.validate();
}

TrainingResult pretrain(nn::EncoderModel model, std::span<const Spectrum> unlabeled, const PretrainConfig& config,
                        const AugmentationConfig& augmentation)
{
    config.validate();
    augmentation.validate();
    model.validate();
    if (unlabeled.size() < config.batch_size)
        throw ValidationError("pretraining needs at least " + std::to_string(config.batch_size) +
                              " unlabeled spectra, got " + std::to_string(unlabeled.size()));
    for (const auto& s : unlabeled)
        if (s.size() != model.band_count)
            throw ShapeError("unlabeled spectrum band count does not match the encoder");

    nn::OptimizerState opt(nn::AdamWConfig{config.learning_rate, config.weight_decay});
    nn::EncoderModel grads = nn::EncoderModel::zeros_like(model);
    auto params = model.parameters();
    auto grad_refs = grads.parameters();

    std::vector<std::size_t> order(unlabeled.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t per_epoch =
        config.samples_per_epoch == 0 ? unlabeled.size() : std::min(config.samples_per_epoch, unlabeled.size());

    TrainingResult result;
    nn::EncoderTape tape_a, tape_b;
    std::vector<Spectrum> originals, augmented;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch)
    {
        auto shuffle_rng = make_rng(config.seed, {0x70726574, epoch});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start + 1 < per_epoch; start += config.batch_size)
        {
            const std::size_t end = std::min(start + config.batch_size, per_epoch);
            originals.clear();
            augmented.clear();
            for (std::size_t p = start; p < end; ++p)
            {
                const std::size_t idx = order[p];
                originals.push_back(unlabeled[idx]);
                auto rng = make_rng(augmentation.seed, {0x61756720, epoch, idx});
                augmented.push_back(magnitude_warp(unlabeled[idx], augmentation, rng));
            }
            const auto b = static_cast<Eigen::Index>(originals.size());

            auto out_a = nn::encoder_forward(model, nn::spectra_batch(originals), nn::Mode::train, &tape_a);
            auto out_b = nn::encoder_forward(model, nn::spectra_batch(augmented), nn::Mode::train, &tape_b);
            nn::Matrix z(2 * b, static_cast<Eigen::Index>(nn::kEmbeddingWidth));
            z.topRows(b) = out_a.embedding;
            z.bottomRows(b) = out_b.embedding;

            const LossResult loss = simclr_loss(z, config.tau);
            nn::zero(grad_refs);
            nn::encoder_backward(model, tape_a, loss.gradient.topRows(b), grads);
            nn::encoder_backward(model, tape_b, loss.gradient.bottomRows(b), grads);
            nn::optimizer_step(params, grad_refs, opt);
            nn::update_running_stats(model, tape_a);
            nn::update_running_stats(model, tape_b);

            loss_sum += loss.loss;
            ++batches;
        }
        result.history.push_back({epoch, batches ? loss_sum / static_cast<double>(batches) : 0.0, 0});
    }
    result.model = std::move(model);
    return result;
}

TrainingResult finetune(nn::EncoderModel model, std::span<const LabeledSample> labeled, const FinetuneConfig& config)
{
    config.validate();
    model.validate();
    if (labeled.size() < 2)
        throw ValidationError("fine-tuning needs at least two labeled samples");

    std::vector<Spectrum> spectra;
    std::vector<AbundanceVector> labels;
    for (const auto& s : labeled)
    {
        if (s.spectrum.size() != model.band_count)
            throw ShapeError("labeled sample '" + s.id + "' band count does not match the encoder");
        spectra.push_back(s.spectrum);
        labels.push_back(s.label);
    }

    // Frozen encoder: its latent features never change during fine-tuning.
    const nn::Matrix latent = nn::encoder_forward(model, nn::spectra_batch(spectra), nn::Mode::eval).latent;

    nn::OptimizerState opt(nn::AdamWConfig{config.learning_rate, config.weight_decay});
    nn::Dense head_grad = nn::Dense::zeros(model.head.in_features, model.head.out_features);
    auto params = model.head_parameters();
    std::vector<nn::ParamRef> grad_refs{{"head.weight", head_grad.weight}, {"head.bias", head_grad.bias}};

    TrainingResult result;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch)
    {
        const nn::Matrix z = nn::dense_forward(latent, model.head);
        const LossResult loss = finetune_loss(z, labels, config.lambda, config.tau);
        nn::zero(grad_refs);
        nn::dense_backward(loss.gradient, latent, model.head, head_grad);
        nn::optimizer_step(params, grad_refs, opt);
        result.history.push_back({epoch, loss.loss, loss.skipped_anchors});
    }
    result.model = std::move(model);
    return result;
}

void write_loss_history(const std::filesystem::path& path, std::span<const EpochStats> history)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open '" + path.string() + "' for writing");
    out << "epoch,mean_loss,skipped_anchors\n";
    out.precision(17);
    for (const auto& h : history)
        out << h.epoch << ',' << h.mean_loss << ',' << h.skipped_anchors << '\n';
    if (!out)
        throw IoError("write to '" + path.string() + "' failed");
}

} // namespace beetlescan
