#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "beetlescan/error.hpp"
#include "beetlescan/pipeline.hpp"
#include "beetlescan/random.hpp"
#include "support.hpp"

using namespace beetlescan;

namespace {

PipelineConfig tiny_config(std::uint64_t seed)
{
    PipelineConfig c;
    c.pretrain.epochs = 2;
    c.pretrain.batch_size = 16;
    c.finetune.epochs = 10;
    c.svr.c_grid = {1.0, 10.0};
    c.svr.sigma_grid = {1.0, 3.0};
    c.svr.grid_folds = 3;
    c.seed = seed;
    return c;
}

Dataset tiny_dataset(std::uint64_t seed, std::size_t bands = 24, std::size_t labeled = 15)
{
    SceneConfig sc;
    sc.height = 8;
    sc.width = 8;
    sc.bands = bands;
    sc.seed = seed;
    const auto scene = generate_scene(sc, make_endmembers(bands, seed));
    Dataset ds;
    ds.band_count = bands;
    ds.unlabeled = scene.pixels;
    ds.labeled = sample_labeled(scene, labeled, seed);
    return ds;
}

std::vector<std::uint8_t> baseline_bytes(const BaselineModel& m)
{
    std::vector<std::uint8_t> out;
    for (const auto& s : m.regressor.svrs)
    {
        const auto b = encode_svr(s);
        out.insert(out.end(), b.begin(), b.end());
    }
    for (double v : m.regressor.standardizer.mean)
        out.insert(out.end(), reinterpret_cast<const std::uint8_t*>(&v), reinterpret_cast<const std::uint8_t*>(&v) + 8);
    return out;
}

} // namespace

TEST_SUITE("pipeline")
{
    TEST_CASE("simplex normalization")
    {
        CHECK(simplex_normalize({0.2, 0.3, 0.5}).values() == std::array<double, 3>{0.2, 0.3, 0.5});
        const auto a = simplex_normalize({-0.1, 0.6, 0.6});
        CHECK(a.healthy() == 0.0);
        CHECK(a.affected() == doctest::Approx(0.5));
        const auto z = simplex_normalize({-1.0, 0.0, -2.0});
        for (double v : z.values())
            CHECK(v == doctest::Approx(1.0 / 3.0));
        CHECK_THROWS_AS(simplex_normalize({std::nan(""), 0.0, 1.0}), ValidationError);

        Rng rng = make_rng(3);
        for (int i = 0; i < 200; ++i)
        {
            const std::array<double, 3> raw{standard_normal(rng), standard_normal(rng), standard_normal(rng)};
            const auto p = simplex_normalize(raw);
            const auto again = simplex_normalize(p.values());
            for (std::size_t c = 0; c < 3; ++c)
                CHECK(again[c] == doctest::Approx(p[c]).epsilon(1e-12));
            const auto scaled = simplex_normalize({raw[0] * 7.0, raw[1] * 7.0, raw[2] * 7.0});
            for (std::size_t c = 0; c < 3; ++c)
                CHECK(scaled[c] == doctest::Approx(p[c]).epsilon(1e-12));
        }
    }

    TEST_CASE("standardizer")
    {
        const std::vector<FeatureVector> xs{{1.0, 5.0}, {3.0, 5.0}};
        const auto s = Standardizer::fit(xs);
        CHECK(s.mean == std::vector<double>{2.0, 5.0});
        CHECK(s.scale == std::vector<double>{1.0, 1.0});
        CHECK(s.apply(xs[0]) == FeatureVector{-1.0, 0.0});
        CHECK_THROWS_AS(s.apply(FeatureVector{1.0}), ShapeError);
        CHECK_THROWS_AS(Standardizer::fit({}), ValidationError);
    }

    TEST_CASE("embedding is batch independent in eval mode")
    {
        Rng rng = make_rng(4);
        const auto spectra = testing_support::random_spectra(300, 20, rng);
        const auto model = nn::EncoderModel::initialize(20, 1);
        const auto all = embed(model, spectra);
        REQUIRE(all.size() == 300);
        CHECK(all[0].size() == nn::kEmbeddingWidth);
        for (std::size_t i : {0, 17, 255, 256, 299})
        {
            const auto one = embed(model, std::span(spectra).subspan(i, 1));
            for (std::size_t j = 0; j < nn::kEmbeddingWidth; ++j)
                CHECK(one[0][j] == doctest::Approx(all[i][j]).epsilon(1e-12));
        }
        const std::vector<Spectrum> twins{spectra[3], spectra[3]};
        const auto t = embed(model, twins);
        CHECK(t[0] == t[1]);
        CHECK_THROWS_AS(embed(model, testing_support::random_spectra(1, 21, rng)), ShapeError);
    }

    TEST_CASE("baselines use full or aggregated bands")
    {
        SceneConfig sc;
        sc.height = 6;
        sc.width = 6;
        sc.seed = 2;
        const auto scene = generate_scene(sc, make_endmembers(kDefaultBands, 2));
        const auto labeled = sample_labeled(scene, 12, 1);
        SvrSettings fixed;
        fixed.tune = false;
        const auto raw = train_baseline(labeled, FeatureMode::raw_hyperspectral, fixed, 1);
        const auto agg = train_baseline(labeled, FeatureMode::raw_aggregated, fixed, 1);
        CHECK(raw.feature_width() == 234);
        CHECK(agg.feature_width() == 13);
        const auto p = agg.predict(scene.pixels[0]);
        CHECK(std::abs(p.healthy() + p.affected() + p.dead() - 1.0) <= 1e-9);

        // Constant labels: every SVR sits inside its tube and predicts the constant.
        auto same = labeled;
        for (auto& s : same)
            s.label = AbundanceVector(0.2, 0.3, 0.5);
        const auto flat = train_baseline(same, FeatureMode::raw_hyperspectral, SvrSettings{}, 1);
        const auto q = flat.predict(scene.pixels[5]);
        CHECK(q.healthy() == doctest::Approx(0.2).epsilon(0.1));
        CHECK(q.dead() == doctest::Approx(0.5).epsilon(0.1));

        const auto floor = MeanLabelModel::fit(same);
        CHECK(floor.mean.affected() == doctest::Approx(0.3));
    }

    TEST_CASE("full-resolution bands separate affected where aggregated bands cannot")
    {
        SceneConfig sc;
        sc.height = 16;
        sc.width = 16;
        sc.seed = 12;
        const auto scene = generate_scene(sc, make_endmembers(kDefaultBands, 12));
        const auto labeled = sample_labeled(scene, 40, 12);
        const auto raw = train_baseline(labeled, FeatureMode::raw_hyperspectral, SvrSettings{}, 1);
        const auto agg = train_baseline(labeled, FeatureMode::raw_aggregated, SvrSettings{}, 1);
        std::vector<double> pr, pa, truth;
        for (std::size_t p = 0; p < scene.pixels.size(); ++p)
        {
            pr.push_back(raw.predict(scene.pixels[p]).affected());
            pa.push_back(agg.predict(scene.pixels[p]).affected());
            truth.push_back(scene.truth[p].affected());
        }
        CHECK(rmse(pr, truth) < rmse(pa, truth));
    }

    TEST_CASE("training is deterministic and composes the stages")
    {
        const auto ds = tiny_dataset(5);
        const auto cfg = tiny_config(8);
        const auto a = train_pipeline(ds, cfg), b = train_pipeline(ds, cfg);
        CHECK(encode_pipeline(a.model) == encode_pipeline(b.model));
        CHECK(a.pretrain_history.size() == 2);
        CHECK(a.finetune_history.size() == 10);
        CHECK_NOTHROW(a.model.validate());

        auto other = cfg;
        other.seed = 9;
        CHECK(encode_pipeline(train_pipeline(ds, other).model) != encode_pipeline(a.model));

        // With both step sizes at zero the weights are the seeded initialization.
        auto frozen = cfg;
        frozen.pretrain.learning_rate = 0.0;
        frozen.finetune.learning_rate = 0.0;
        const auto z = train_pipeline(ds, frozen).model.encoder;
        const auto init = nn::EncoderModel::initialize(ds.band_count, derive_seed(cfg.seed, {1}));
        CHECK(z.head == init.head);
        for (std::size_t i = 0; i < 3; ++i)
        {
            CHECK(z.conv[i] == init.conv[i]);
            CHECK(z.bn[i].scale == init.bn[i].scale);
        }

        const auto preds = predict_abundances(a.model, ds.unlabeled);
        for (std::size_t i = 0; i < preds.size(); i += 7)
            CHECK(predict_abundance(a.model, ds.unlabeled[i]) == preds[i]);
    }

    TEST_CASE("fold models never see held-out labels")
    {
        const auto ds = tiny_dataset(6);
        const auto cfg = tiny_config(3);
        const auto pre = pretrain_encoder(ds.band_count, ds.unlabeled, cfg).model;
        const auto plan = make_folds(ds.labeled.size(), 3, 4);
        for (std::size_t f = 0; f < 3; ++f)
        {
            auto poisoned = ds;
            for (auto i : plan.members(f))
                poisoned.labeled[i].label = AbundanceVector(0.0, 0.0, 1.0);
            const auto clean = train_fold(ds, pre, plan, f, cfg);
            const auto dirty = train_fold(poisoned, pre, plan, f, cfg);
            CHECK(encode_pipeline(clean.proposed) == encode_pipeline(dirty.proposed));
            CHECK(baseline_bytes(clean.raw_hyperspectral) == baseline_bytes(dirty.raw_hyperspectral));
            CHECK(baseline_bytes(clean.raw_aggregated) == baseline_bytes(dirty.raw_aggregated));
            CHECK(clean.mean_label.mean == dirty.mean_label.mean);
        }
    }

    TEST_CASE("cross-validation report structure")
    {
        const auto ds = tiny_dataset(7);
        const auto cv = run_cross_validation(ds, tiny_config(0), 3, 11);
        const std::array<Method, 3> order{Method::model_features, Method::raw_hyperspectral, Method::raw_aggregated};
        for (std::size_t m = 0; m < 3; ++m)
        {
            const auto& r = cv.reports[m];
            CHECK(r.method == order[m]);
            REQUIRE(r.fold_rmse.size() == 3);
            for (std::size_t c = 0; c < 3; ++c)
            {
                double s = 0.0;
                for (const auto& f : r.fold_rmse)
                {
                    CHECK(std::isfinite(f[c]));
                    s += f[c];
                }
                CHECK(r.class_mean[c] == doctest::Approx(s / 3.0).epsilon(1e-14));
            }
            CHECK(r.grand_mean ==
                  doctest::Approx((r.class_mean[0] + r.class_mean[1] + r.class_mean[2]) / 3.0).epsilon(1e-14));
        }
        CHECK(cv.mean_label_floor.method == Method::mean_label);
        CHECK(cv.pretrain_history.size() == 2);

        const auto csv = report_csv(cv);
        std::istringstream lines(csv);
        std::string line;
        std::getline(lines, line);
        CHECK(line == "method,fold,class,rmse");
        std::size_t rows = 0;
        while (std::getline(lines, line))
            ++rows;
        CHECK(rows == 4 * (3 * 3 + 4));
        CHECK(csv.find("raw-aggregated,mean,average,") != std::string::npos);
        CHECK(csv.find("mean-label,2,dead,") != std::string::npos);

        const auto summary = format_summary(cv);
        CHECK(summary.rfind("method", 0) == 0);
        CHECK(summary.find("model-features") != std::string::npos);
        CHECK(summary.find("# mean-label floor average") != std::string::npos);

        CHECK(report_csv(run_cross_validation(ds, tiny_config(0), 3, 11)) == csv);
        CHECK_THROWS_AS(run_cross_validation(ds, tiny_config(0), 20, 11), ValidationError);
    }

    TEST_CASE("pipeline checkpoint round trip")
    {
        const auto ds = tiny_dataset(9);
        const auto model = train_pipeline(ds, tiny_config(2)).model;
        const auto bytes = encode_pipeline(model);
        const auto back = decode_pipeline(bytes);
        CHECK(back.encoder == model.encoder);
        CHECK(back.feature_standardizer == model.feature_standardizer);
        CHECK(back.svrs == model.svrs);
        CHECK(encode_pipeline(back) == bytes);

        testing_support::TempDir dir("hpip");
        save_pipeline(dir / "p.hpip", model);
        const auto loaded = load_pipeline(dir / "p.hpip");
        CHECK(predict_abundances(loaded, ds.unlabeled) == predict_abundances(model, ds.unlabeled));

        auto cut = bytes;
        cut.resize(cut.size() / 2);
        CHECK_THROWS_AS(decode_pipeline(cut), FormatError);
        auto bad = bytes;
        bad[1] = '?';
        CHECK_THROWS_AS(decode_pipeline(bad), FormatError);
        CHECK_THROWS_AS(load_pipeline(dir / "nope.hpip"), IoError);
    }

    TEST_CASE("configuration validation")
    {
        auto cfg = tiny_config(0);
        CHECK_NOTHROW(cfg.validate());
        cfg.svr.grid_folds = 1;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
        cfg = tiny_config(0);
        cfg.svr.sigma_grid = {1.0, -1.0};
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
        cfg = tiny_config(0);
        cfg.pretrain.tau = 0.0;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
    }
}
