#include "beetlescan/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "beetlescan/error.hpp"
#include "beetlescan/random.hpp"
#include "binary_io.hpp"

namespace beetlescan {

namespace {

constexpr auto kPipelineMagic = detail::make_magic("HPIP");
constexpr auto kStandardizerMagic = detail::make_magic("STDZ");
constexpr std::size_t kEmbedChunk = 256;
constexpr std::size_t kTocNameBytes = 16;

// Seed paths for the independent random streams of one training run.
enum SeedStream : std::uint64_t
{
    kInitStream = 1,
    kShuffleStream = 2,
    kAugmentStream = 3,
    kSvrStream = 4,
};

std::vector<FeatureVector> standardize_all(const Standardizer& s, std::span<const FeatureVector> xs)
{
    std::vector<FeatureVector> out;
    out.reserve(xs.size());
    for (const auto& x : xs)
        out.push_back(s.apply(x));
    return out;
}

void append_number(std::string& out, double v)
{
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, ptr);
}

std::vector<std::uint8_t> encode_standardizer(const Standardizer& s)
{
    detail::ByteWriter w;
    w.magic(kStandardizerMagic);
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(s.dimension()));
    w.f64s(s.mean);
    w.f64s(s.scale);
    return w.take();
}

Standardizer decode_standardizer(std::span<const std::uint8_t> bytes)
{
    detail::ByteReader r(bytes, "standardizer");
    r.expect_magic(kStandardizerMagic);
    if (r.u32() != 1)
        throw FormatError("standardizer: unsupported format version");
    const std::size_t dim = r.u32();
    Standardizer s;
    s.mean = r.f64s(dim);
    s.scale = r.f64s(dim);
    r.expect_end();
    for (double v : s.scale)
        if (!(v > 0.0) || !std::isfinite(v))
            throw ValidationError("standardizer: scales must be positive");
    return s;
}

} // namespace

AbundanceVector simplex_normalize(const std::array<double, kClassCount>& raw)
{
    std::array<double, kClassCount> v{};
    double sum = 0.0;
    for (std::size_t i = 0; i < kClassCount; ++i)
    {
        if (!std::isfinite(raw[i]))
            throw ValidationError("simplex_normalize: non-finite input");
        v[i] = raw[i] > 0.0 ? raw[i] : 0.0;
        sum += v[i];
    }
    if (sum <= 0.0)
        v = {1.0, 1.0, 1.0};
    v = close_to_simplex(v);
    return AbundanceVector(v[0], v[1], v[2]);
}

Standardizer Standardizer::fit(std::span<const FeatureVector> features)
{
    if (features.empty())
        throw ValidationError("cannot fit a standardizer on zero samples");
    const std::size_t d = features.front().size();
    Standardizer s;
    s.mean.assign(d, 0.0);
    s.scale.assign(d, 0.0);
    for (const auto& x : features)
    {
        if (x.size() != d)
            throw ShapeError("standardizer: features differ in width");
        for (std::size_t j = 0; j < d; ++j)
            s.mean[j] += x[j];
    }
    const double n = static_cast<double>(features.size());
    for (auto& m : s.mean)
        m /= n;
    for (const auto& x : features)
        for (std::size_t j = 0; j < d; ++j)
            s.scale[j] += (x[j] - s.mean[j]) * (x[j] - s.mean[j]);
    for (auto& v : s.scale)
    {
        v = std::sqrt(v / n);
        if (!(v > 1e-12))
            v = 1.0;
    }
    return s;
}

FeatureVector Standardizer::apply(std::span<const double> features) const
{
    if (features.size() != mean.size())
        throw ShapeError("standardizer expects " + std::to_string(mean.size()) + " features, got " +
                         std::to_string(features.size()));
    FeatureVector out(features.size());
    for (std::size_t j = 0; j < out.size(); ++j)
        out[j] = (features[j] - mean[j]) / scale[j];
    return out;
}

AbundanceRegressor AbundanceRegressor::train(std::span<const FeatureVector> features,
                                             std::span<const AbundanceVector> labels, const SvrSettings& settings,
                                             std::uint64_t seed)
{
    if (features.size() != labels.size())
        throw ShapeError("regressor: feature and label counts differ");
    if (features.size() < 2)
        throw ValidationError("regressor needs at least two labeled samples");
    AbundanceRegressor reg;
    reg.standardizer = Standardizer::fit(features);
    const auto xs = standardize_all(reg.standardizer, features);
    for (std::size_t c = 0; c < kClassCount; ++c)
    {
        std::vector<double> ys(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i)
            ys[i] = labels[i][c];
        SvrConfig cfg = settings.base;
        if (settings.tune)
        {
            const std::size_t folds = std::min(settings.grid_folds, xs.size());
            cfg = grid_search(xs, ys, settings.c_grid, settings.sigma_grid, folds, settings.base,
                              derive_seed(seed, {kSvrStream, c}))
                      .best;
        }
        reg.configs[c] = cfg;
        reg.svrs[c] = svr_fit(xs, ys, cfg).model;
    }
    return reg;
}

std::array<double, kClassCount> AbundanceRegressor::predict_raw(std::span<const double> features) const
{
    const auto x = standardizer.apply(features);
    std::array<double, kClassCount> raw{};
    for (std::size_t c = 0; c < kClassCount; ++c)
        raw[c] = svr_predict(svrs[c], x);
    return raw;
}

AbundanceVector AbundanceRegressor::predict(std::span<const double> features) const
{
    return simplex_normalize(predict_raw(features));
}

std::vector<FeatureVector> embed(const nn::EncoderModel& model, std::span<const Spectrum> spectra)
{
    for (const auto& s : spectra)
        if (s.size() != model.band_count)
            throw ShapeError("spectrum has " + std::to_string(s.size()) + " bands, encoder expects " +
                             std::to_string(model.band_count));
    std::vector<FeatureVector> out;
    out.reserve(spectra.size());
    for (std::size_t start = 0; start < spectra.size(); start += kEmbedChunk)
    {
        const auto chunk = spectra.subspan(start, std::min(kEmbedChunk, spectra.size() - start));
        const auto z = nn::encoder_forward(model, nn::spectra_batch(chunk), nn::Mode::eval).embedding;
        for (Eigen::Index i = 0; i < z.rows(); ++i)
            out.emplace_back(z.row(i).begin(), z.row(i).end());
    }
    return out;
}

void PipelineModel::validate() const
{
    encoder.validate();
    if (feature_standardizer.dimension() != nn::kEmbeddingWidth)
        throw ValidationError("pipeline standardizer width does not match the embedding width");
    for (const auto& s : svrs)
        if (s.dimension != nn::kEmbeddingWidth)
            throw ValidationError("pipeline SVR input width does not match the embedding width");
}

AbundanceVector predict_abundance(const PipelineModel& pipeline, std::span<const double> spectrum)
{
    const Spectrum s(spectrum.begin(), spectrum.end());
    return predict_abundances(pipeline, std::span<const Spectrum>(&s, 1)).front();
}

std::vector<AbundanceVector> predict_abundances(const PipelineModel& pipeline, std::span<const Spectrum> spectra)
{
    const auto z = embed(pipeline.encoder, spectra);
    std::vector<AbundanceVector> out;
    out.reserve(z.size());
    for (const auto& e : z)
    {
        const auto x = pipeline.feature_standardizer.apply(e);
        std::array<double, kClassCount> raw{};
        for (std::size_t c = 0; c < kClassCount; ++c)
            raw[c] = svr_predict(pipeline.svrs[c], x);
        out.push_back(simplex_normalize(raw));
    }
    return out;
}

void PipelineConfig::validate() const
{
    pretrain.validate();
    augmentation.validate();
    finetune.validate();
    svr.base.validate();
    if (svr.tune)
    {
        if (svr.c_grid.empty() || svr.sigma_grid.empty())
            throw ValidationError("SVR grids must be non-empty");
        if (svr.grid_folds < 2)
            throw ValidationError("SVR grid search needs at least two folds");
        for (double c : svr.c_grid)
            if (!(c > 0.0))
                throw ValidationError("SVR C grid values must be positive");
        for (double s : svr.sigma_grid)
            if (!(s > 0.0))
                throw ValidationError("SVR sigma grid values must be positive");
    }
}

TrainingResult pretrain_encoder(std::size_t band_count, std::span<const Spectrum> unlabeled,
                                const PipelineConfig& config)
{
    config.validate();
    PretrainConfig pre = config.pretrain;
    pre.seed = derive_seed(config.seed, {kShuffleStream});
    AugmentationConfig aug = config.augmentation;
    aug.seed = derive_seed(config.seed, {kAugmentStream});
    auto model = nn::EncoderModel::initialize(band_count, derive_seed(config.seed, {kInitStream}));
    return pretrain(std::move(model), unlabeled, pre, aug);
}

PipelineTraining fit_supervised(const nn::EncoderModel& pretrained, std::span<const LabeledSample> labeled,
                                const PipelineConfig& config)
{
    config.validate();
    auto tuned = finetune(pretrained, labeled, config.finetune);

    std::vector<Spectrum> spectra;
    std::vector<AbundanceVector> labels;
    for (const auto& s : labeled)
    {
        spectra.push_back(s.spectrum);
        labels.push_back(s.label);
    }
    const auto z = embed(tuned.model, spectra);
    const auto reg = AbundanceRegressor::train(z, labels, config.svr, config.seed);

    PipelineTraining out;
    out.model.encoder = std::move(tuned.model);
    out.model.feature_standardizer = reg.standardizer;
    out.model.svrs = reg.svrs;
    out.finetune_history = std::move(tuned.history);
    return out;
}

PipelineTraining train_pipeline(const Dataset& dataset, const PipelineConfig& config)
{
    dataset.validate();
    if (dataset.labeled.size() < 2)
        throw ValidationError("pipeline training needs at least two labeled samples");
    if (dataset.unlabeled.empty())
        throw ValidationError("pipeline training needs unlabeled spectra for pretraining");
    auto pre = pretrain_encoder(dataset.band_count, dataset.unlabeled, config);
    auto out = fit_supervised(pre.model, dataset.labeled, config);
    out.pretrain_history = std::move(pre.history);
    return out;
}

FeatureVector BaselineModel::features(std::span<const double> spectrum) const
{
    if (spectrum.size() != band_count)
        throw ShapeError("spectrum has " + std::to_string(spectrum.size()) + " bands, baseline expects " +
                         std::to_string(band_count));
    if (mode == FeatureMode::raw_aggregated)
        return aggregate_bands(spectrum, aggregation);
    return FeatureVector(spectrum.begin(), spectrum.end());
}

AbundanceVector BaselineModel::predict(std::span<const double> spectrum) const
{
    return regressor.predict(features(spectrum));
}

BaselineModel train_baseline(std::span<const LabeledSample> labeled, FeatureMode mode, const SvrSettings& settings,
                             std::uint64_t seed, BandAggregation aggregation)
{
    if (labeled.size() < 2)
        throw ValidationError("baseline training needs at least two labeled samples");
    BaselineModel m;
    m.mode = mode;
    m.band_count = labeled.front().spectrum.size();
    if (mode == FeatureMode::raw_aggregated)
    {
        m.aggregation = aggregation.windows.empty() ? default_aggregation(m.band_count) : std::move(aggregation);
        m.aggregation.validate(m.band_count);
    }
    std::vector<FeatureVector> xs;
    std::vector<AbundanceVector> ys;
    for (const auto& s : labeled)
    {
        xs.push_back(m.features(s.spectrum));
        ys.push_back(s.label);
    }
    m.regressor = AbundanceRegressor::train(xs, ys, settings, seed);
    return m;
}

MeanLabelModel MeanLabelModel::fit(std::span<const LabeledSample> labeled)
{
    if (labeled.empty())
        throw ValidationError("mean-label predictor needs at least one sample");
    std::array<double, kClassCount> s{};
    for (const auto& x : labeled)
        for (std::size_t c = 0; c < kClassCount; ++c)
            s[c] += x.label[c];
    const double n = static_cast<double>(labeled.size());
    return {AbundanceVector::renormalized(s[0] / n, s[1] / n, s[2] / n)};
}

std::string_view method_name(Method method)
{
    switch (method)
    {
        case Method::model_features: return "model-features";
        case Method::raw_hyperspectral: return "raw-hyperspectral";
        case Method::raw_aggregated: return "raw-aggregated";
        case Method::mean_label: return "mean-label";
    }
    return "unknown";
}

void EvaluationReport::finalize()
{
    if (fold_rmse.empty())
        throw ValidationError("evaluation report has no folds");
    for (std::size_t c = 0; c < kClassCount; ++c)
    {
        double s = 0.0;
        for (const auto& f : fold_rmse)
            s += f[c];
        class_mean[c] = s / static_cast<double>(fold_rmse.size());
    }
    grand_mean = (class_mean[0] + class_mean[1] + class_mean[2]) / 3.0;
}

FoldModels train_fold(const Dataset& dataset, const nn::EncoderModel& pretrained, const FoldPlan& plan,
                      std::size_t fold, const PipelineConfig& config)
{
    if (plan.assignments.size() != dataset.labeled.size())
        throw ShapeError("fold plan does not cover the labeled samples");
    std::vector<LabeledSample> train;
    for (auto i : plan.complement(fold))
        train.push_back(dataset.labeled[i]);

    const std::uint64_t fold_seed = derive_seed(config.seed, {0x666f6c64, fold});
    PipelineConfig cfg = config;
    cfg.seed = fold_seed;
    FoldModels m;
    m.proposed = fit_supervised(pretrained, train, cfg).model;
    m.raw_hyperspectral = train_baseline(train, FeatureMode::raw_hyperspectral, config.svr, fold_seed);
    m.raw_aggregated = train_baseline(train, FeatureMode::raw_aggregated, config.svr, fold_seed);
    m.mean_label = MeanLabelModel::fit(train);
    return m;
}

CrossValidationResult run_cross_validation(const Dataset& dataset, const PipelineConfig& config, std::size_t k,
                                           std::uint64_t seed)
{
    dataset.validate();
    config.validate();
    if (dataset.labeled.size() < k)
        throw ValidationError("cross-validation needs at least " + std::to_string(k) + " labeled samples, got " +
                              std::to_string(dataset.labeled.size()));
    if (dataset.unlabeled.empty())
        throw ValidationError("cross-validation needs unlabeled spectra for pretraining");

    // Pretraining never reads labels, so one encoder serves every fold.
    PipelineConfig cfg = config;
    cfg.seed = seed;
    auto pre = pretrain_encoder(dataset.band_count, dataset.unlabeled, cfg);
    const FoldPlan plan = make_folds(dataset.labeled.size(), k, seed);

    CrossValidationResult result;
    result.pretrain_history = pre.history;
    const std::array<Method, 3> methods{Method::model_features, Method::raw_hyperspectral, Method::raw_aggregated};
    for (std::size_t m = 0; m < 3; ++m)
        result.reports[m].method = methods[m];
    result.mean_label_floor.method = Method::mean_label;

    for (std::size_t f = 0; f < k; ++f)
    {
        const FoldModels models = train_fold(dataset, pre.model, plan, f, cfg);
        const auto members = plan.members(f);

        std::vector<Spectrum> spectra;
        for (auto i : members)
            spectra.push_back(dataset.labeled[i].spectrum);
        const auto proposed = predict_abundances(models.proposed, spectra);

        std::array<std::array<std::vector<double>, kClassCount>, 4> preds;
        std::array<std::vector<double>, kClassCount> truth;
        for (std::size_t r = 0; r < members.size(); ++r)
        {
            const auto& sample = dataset.labeled[members[r]];
            const std::array<AbundanceVector, 4> p{proposed[r], models.raw_hyperspectral.predict(sample.spectrum),
                                                   models.raw_aggregated.predict(sample.spectrum),
                                                   models.mean_label.mean};
            for (std::size_t c = 0; c < kClassCount; ++c)
            {
                truth[c].push_back(sample.label[c]);
                for (std::size_t m = 0; m < 4; ++m)
                    preds[m][c].push_back(p[m][c]);
            }
        }
        for (std::size_t m = 0; m < 4; ++m)
        {
            std::array<double, kClassCount> row{};
            for (std::size_t c = 0; c < kClassCount; ++c)
                row[c] = rmse(preds[m][c], truth[c]);
            (m < 3 ? result.reports[m] : result.mean_label_floor).fold_rmse.push_back(row);
        }
    }
    for (auto& r : result.reports)
        r.finalize();
    result.mean_label_floor.finalize();
    return result;
}

std::string report_csv(const CrossValidationResult& result)
{
    std::string out = "method,fold,class,rmse\n";
    auto emit = [&out](const EvaluationReport& r) {
        const std::string name(method_name(r.method));
        for (std::size_t f = 0; f < r.fold_rmse.size(); ++f)
            for (std::size_t c = 0; c < kClassCount; ++c)
            {
                out += name + "," + std::to_string(f) + "," + std::string(class_name(kAllClasses[c])) + ",";
                append_number(out, r.fold_rmse[f][c]);
                out += '\n';
            }
        for (std::size_t c = 0; c < kClassCount; ++c)
        {
            out += name + ",mean," + std::string(class_name(kAllClasses[c])) + ",";
            append_number(out, r.class_mean[c]);
            out += '\n';
        }
        out += name + ",mean,average,";
        append_number(out, r.grand_mean);
        out += '\n';
    };
    for (const auto& r : result.reports)
        emit(r);
    emit(result.mean_label_floor);
    return out;
}

void write_report_csv(const std::filesystem::path& path, const CrossValidationResult& result)
{
    const auto text = report_csv(result);
    detail::write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string format_summary(const CrossValidationResult& result)
{
    char line[160];
    std::string out;
    std::snprintf(line, sizeof(line), "%-20s %9s %9s %9s %9s\n", "method", "Healthy", "Affected", "Dead", "Average");
    out += line;
    for (const auto& r : result.reports)
    {
        std::snprintf(line, sizeof(line), "%-20s %9.4f %9.4f %9.4f %9.4f\n", std::string(method_name(r.method)).c_str(),
                      r.class_mean[0], r.class_mean[1], r.class_mean[2], r.grand_mean);
        out += line;
    }
    std::snprintf(line, sizeof(line), "# mean-label floor average %.4f\n", result.mean_label_floor.grand_mean);
    out += line;
    return out;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_pipeline(const PipelineModel& model)
{
    model.validate();
    const std::array<std::pair<const char*, std::vector<std::uint8_t>>, 5> blocks{{
        {"encoder", nn::encode_encoder(model.encoder)},
        {"standardizer", encode_standardizer(model.feature_standardizer)},
        {"svr.healthy", encode_svr(model.svrs[0])},
        {"svr.affected", encode_svr(model.svrs[1])},
        {"svr.dead", encode_svr(model.svrs[2])},
    }};
    detail::ByteWriter w;
    w.magic(kPipelineMagic);
    w.u32(kPipelineFormatVersion);
    w.u32(static_cast<std::uint32_t>(blocks.size()));
    std::uint64_t offset = 12 + blocks.size() * (kTocNameBytes + 16);
    for (const auto& [name, bytes] : blocks)
    {
        std::array<std::uint8_t, kTocNameBytes> padded{};
        std::memcpy(padded.data(), name, std::strlen(name));
        w.bytes(padded);
        w.u64(offset);
        w.u64(bytes.size());
        offset += bytes.size();
    }
    for (const auto& [name, bytes] : blocks)
        w.bytes(bytes);
    return w.take();
}

PipelineModel decode_pipeline(std::span<const std::uint8_t> bytes)
{
    detail::ByteReader r(bytes, "pipeline checkpoint");
    r.expect_magic(kPipelineMagic);
    const auto version = r.u32();
    if (version != kPipelineFormatVersion)
        throw FormatError("pipeline checkpoint: unsupported format version " + std::to_string(version));
    const std::size_t count = r.u32();

    auto block = [&](std::size_t offset, std::size_t size) {
        if (offset > bytes.size() || size > bytes.size() - offset)
            throw FormatError("pipeline checkpoint: table of contents points outside the file");
        return bytes.subspan(offset, size);
    };

    PipelineModel model;
    std::array<bool, 5> seen{};
    for (std::size_t e = 0; e < count; ++e)
    {
        const auto raw = r.bytes(kTocNameBytes);
        const std::string name(reinterpret_cast<const char*>(raw.data()),
                               strnlen(reinterpret_cast<const char*>(raw.data()), kTocNameBytes));
        const auto offset = static_cast<std::size_t>(r.u64());
        const auto size = static_cast<std::size_t>(r.u64());
        const auto payload = block(offset, size);
        if (name == "encoder")
            model.encoder = nn::decode_encoder(payload), seen[0] = true;
        else if (name == "standardizer")
            model.feature_standardizer = decode_standardizer(payload), seen[1] = true;
        else if (name == "svr.healthy")
            model.svrs[0] = decode_svr(payload), seen[2] = true;
        else if (name == "svr.affected")
            model.svrs[1] = decode_svr(payload), seen[3] = true;
        else if (name == "svr.dead")
            model.svrs[2] = decode_svr(payload), seen[4] = true;
        else
            throw FormatError("pipeline checkpoint: unknown block '" + name + "'");
    }
    if (!std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }))
        throw FormatError("pipeline checkpoint: missing blocks");
    model.validate();
    return model;
}

void save_pipeline(const std::filesystem::path& path, const PipelineModel& model)
{
    detail::write_file(path, encode_pipeline(model));
}

PipelineModel load_pipeline(const std::filesystem::path& path)
{
    return decode_pipeline(detail::read_file(path));
}

} // namespace beetlescan
