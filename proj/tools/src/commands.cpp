#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "beetlescan/contrastive.hpp"
#include "beetlescan/error.hpp"
#include "beetlescan/synth.hpp"

namespace beetlescan::cli {

namespace fs = std::filesystem;

namespace {

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("write to '" + path.string() + "' failed");
}

template <class F>
auto stage(const char* name, F&& fn)
{
    try
    {
        return fn();
    }
    catch (const Error& e)
    {
        throw Error(std::string(name) + ": " + e.what());
    }
}

Dataset load_dataset(const fs::path& cube_path, const fs::path& labeled_path)
{
    Dataset labeled = load_labeled_csv(labeled_path);
    Dataset data = load_unlabeled_cube(cube_path);
    if (labeled.band_count != data.band_count)
        throw ShapeError("labeled CSV has " + std::to_string(labeled.band_count) + " bands but cube '" +
                         cube_path.string() + "' has " + std::to_string(data.band_count));
    data.labeled = std::move(labeled.labeled);
    data.validate();
    return data;
}

Spectrum through_float(const Spectrum& s)
{
    Spectrum out(s.size());
    std::transform(s.begin(), s.end(), out.begin(), [](double v) { return static_cast<double>(static_cast<float>(v)); });
    return out;
}

} // namespace

GeneratedFiles generated_files(const fs::path& out_dir)
{
    return {out_dir / "scene.hscn", out_dir / "truth.habn", out_dir / "endmembers.csv", out_dir / "labeled.csv"};
}

GeneratedFiles cmd_generate(const RunConfig& config, const fs::path& out_dir)
{
    config.validate();
    const auto endmembers = make_endmembers(config.scene.bands, config.seed, config.endmembers);
    const Scene scene = generate_scene(config.scene, endmembers);
    auto labeled = sample_labeled(scene, config.labeled_count, derive_seed(config.seed, {0x6c61626c}));
    for (auto& s : labeled)
        s.spectrum = through_float(s.spectrum);

    std::vector<LabeledSample> rows;
    for (std::size_t c = 0; c < kClassCount; ++c)
    {
        std::array<double, kClassCount> onehot{};
        onehot[c] = 1.0;
        rows.push_back({endmembers[c].spectrum, AbundanceVector(onehot[0], onehot[1], onehot[2]),
                        std::string(class_name(kAllClasses[c]))});
    }

    fs::create_directories(out_dir);
    const auto files = generated_files(out_dir);
    write_cube(files.cube, to_cube(scene));
    write_abundance_map(files.truth, truth_map(scene));
    save_labeled_csv(files.endmembers, rows, scene.bands, true);
    save_labeled_csv(files.labeled, labeled, scene.bands, true);
    return files;
}

TrainedFiles trained_files(const fs::path& checkpoint)
{
    auto with_suffix = [&](const char* suffix) {
        fs::path p = checkpoint;
        p += suffix;
        return p;
    };
    return {checkpoint, with_suffix(".pretrain_loss.csv"), with_suffix(".finetune_loss.csv")};
}

TrainedFiles cmd_train(const RunConfig& config, const fs::path& cube, const fs::path& labeled,
                       const fs::path& checkpoint, std::ostream& log)
{
    config.validate();
    const Dataset data = stage("loading data", [&] { return load_dataset(cube, labeled); });
    if (data.labeled.size() < 2)
        throw ValidationError("training needs at least two labeled samples, '" + labeled.string() + "' has " +
                              std::to_string(data.labeled.size()));

    std::vector<std::size_t> indices(data.labeled.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    const auto split = train_val_split(indices, config.split, derive_seed(config.seed, {0x73706c74}));
    std::vector<LabeledSample> train, val;
    for (auto i : split.train)
        train.push_back(data.labeled[i]);
    for (auto i : split.val)
        val.push_back(data.labeled[i]);
    if (train.size() < 2)
        throw ValidationError("split leaves fewer than two training samples");

    const auto pre = stage("pretraining", [&] { return pretrain_encoder(data.band_count, data.unlabeled, config.pipeline); });
    const auto fit = stage("fine-tuning", [&] { return fit_supervised(pre.model, train, config.pipeline); });

    log << "pretraining: " << pre.history.size() << " epochs, final loss " << pre.history.back().mean_loss << "\n";
    log << "fine-tuning: " << fit.finetune_history.size() << " epochs, final loss "
        << fit.finetune_history.back().mean_loss << "\n";
    if (!val.empty())
    {
        std::vector<Spectrum> spectra;
        for (const auto& s : val)
            spectra.push_back(s.spectrum);
        const auto pred = predict_abundances(fit.model, spectra);
        const auto floor = MeanLabelModel::fit(train);
        double model_sum = 0.0, floor_sum = 0.0;
        for (std::size_t c = 0; c < kClassCount; ++c)
        {
            std::vector<double> p, f, t;
            for (std::size_t i = 0; i < val.size(); ++i)
            {
                p.push_back(pred[i][c]);
                f.push_back(floor.mean[c]);
                t.push_back(val[i].label[c]);
            }
            model_sum += rmse(p, t);
            floor_sum += rmse(f, t);
        }
        log << "held-out (" << val.size() << " samples) mean RMSE " << model_sum / 3.0 << ", mean-label floor "
            << floor_sum / 3.0 << "\n";
    }

    const auto files = trained_files(checkpoint);
    save_pipeline(files.checkpoint, fit.model);
    write_loss_history(files.pretrain_history, pre.history);
    write_loss_history(files.finetune_history, fit.finetune_history);
    return files;
}

CrossValidationResult cmd_evaluate(const RunConfig& config, const fs::path& cube, const fs::path& labeled,
                                   const fs::path& report, std::ostream& out)
{
    config.validate();
    const Dataset data = load_dataset(cube, labeled);
    auto result = run_cross_validation(data, config.pipeline, config.folds, config.seed);
    write_report_csv(report, result);
    out << format_summary(result);
    return result;
}

AbundanceMap predict_map(const PipelineModel& pipeline, const HyperCube& cube, const PixelMask* mask)
{
    if (cube.bands != pipeline.encoder.band_count)
        throw ShapeError("cube has " + std::to_string(cube.bands) + " bands, checkpoint expects " +
                         std::to_string(pipeline.encoder.band_count));
    if (mask && (mask->height != cube.height || mask->width != cube.width))
        throw ShapeError("mask is " + std::to_string(mask->height) + "x" + std::to_string(mask->width) +
                         " but cube is " + std::to_string(cube.height) + "x" + std::to_string(cube.width));

    AbundanceMap map;
    map.height = cube.height;
    map.width = cube.width;
    map.channels = mask ? 4 : 3;
    map.values.assign(cube.pixel_count() * map.channels, 0.0f);

    std::vector<std::size_t> active;
    std::vector<Spectrum> spectra;
    for (std::size_t p = 0; p < cube.pixel_count(); ++p)
        if (!mask || mask->active[p])
        {
            active.push_back(p);
            spectra.push_back(cube.spectrum(p));
        }
    const auto pred = predict_abundances(pipeline, spectra);
    for (std::size_t i = 0; i < active.size(); ++i)
    {
        float* px = map.values.data() + active[i] * map.channels;
        for (std::size_t c = 0; c < kClassCount; ++c)
            px[c] = static_cast<float>(pred[i][c]);
        if (mask)
            px[3] = 1.0f;
    }
    return map;
}

void cmd_predict_map(const fs::path& checkpoint, const fs::path& cube, const std::optional<fs::path>& mask,
                     const fs::path& out)
{
    const auto pipeline = load_pipeline(checkpoint);
    const auto data = read_cube(cube);
    std::optional<PixelMask> m;
    if (mask)
        m = read_mask(*mask);
    write_abundance_map(out, predict_map(pipeline, data, m ? &*m : nullptr));
}

RgbImage render_map(const AbundanceMap& map, std::span<const AbundanceMap> joint)
{
    std::array<double, kClassCount> lo, hi;
    lo.fill(std::numeric_limits<double>::infinity());
    hi.fill(-std::numeric_limits<double>::infinity());
    auto pool = [&](const AbundanceMap& m) {
        for (std::size_t p = 0; p < m.pixel_count(); ++p)
        {
            if (!m.is_active(p))
                continue;
            const auto a = m.abundance(p);
            for (std::size_t c = 0; c < kClassCount; ++c)
            {
                lo[c] = std::min(lo[c], static_cast<double>(a[c]));
                hi[c] = std::max(hi[c], static_cast<double>(a[c]));
            }
        }
    };
    pool(map);
    for (const auto& m : joint)
        pool(m);

    RgbImage img{map.width, map.height, std::vector<std::uint8_t>(map.pixel_count() * 3, 0)};
    for (std::size_t p = 0; p < map.pixel_count(); ++p)
    {
        if (!map.is_active(p))
            continue;
        const auto a = map.abundance(p);
        for (std::size_t c = 0; c < kClassCount; ++c)
        {
            const double range = hi[c] - lo[c];
            if (!(range > 0.0))
                continue;
            const double v = std::clamp((static_cast<double>(a[c]) - lo[c]) / range, 0.0, 1.0);
            img.rgb[p * 3 + c] = static_cast<std::uint8_t>(std::lround(255.0 * v));
        }
    }
    return img;
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& image)
{
    const std::string header =
        "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.rgb.begin(), image.rgb.end());
    return out;
}

void cmd_render_map(const fs::path& map, const fs::path& out, std::span<const fs::path> joint_with)
{
    const auto m = read_abundance_map(map);
    std::vector<AbundanceMap> siblings;
    for (const auto& p : joint_with)
        siblings.push_back(read_abundance_map(p));
    write_bytes(out, encode_ppm(render_map(m, siblings)));
}

} // namespace beetlescan::cli
