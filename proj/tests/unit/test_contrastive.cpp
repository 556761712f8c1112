#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "beetlescan/contrastive.hpp"
#include "beetlescan/error.hpp"
#include "beetlescan/synth.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace beetlescan;
using testing_support::random_matrix;
using testing_support::rows_of;

namespace {

// Structured spectra: noisy mixtures of three smooth endmembers.
std::vector<Spectrum> mixture_spectra(std::size_t count, std::size_t bands, std::uint64_t seed)
{
    SceneConfig cfg;
    cfg.height = 1;
    cfg.width = count;
    cfg.bands = bands;
    cfg.seed = seed;
    return generate_scene(cfg, make_endmembers(bands, seed)).pixels;
}

std::vector<LabeledSample> labeled_mixtures(std::size_t count, std::size_t bands, std::uint64_t seed)
{
    SceneConfig cfg;
    cfg.height = 1;
    cfg.width = count;
    cfg.bands = bands;
    cfg.seed = seed;
    const auto scene = generate_scene(cfg, make_endmembers(bands, seed));
    return sample_labeled(scene, count, seed);
}

std::vector<AbundanceVector> random_labels(std::size_t n, Rng& rng)
{
    std::vector<AbundanceVector> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(testing_support::random_abundance(rng));
    return out;
}

oracle::Rows label_rows(const std::vector<AbundanceVector>& labels)
{
    oracle::Rows out;
    for (const auto& l : labels)
        out.emplace_back(l.values().begin(), l.values().end());
    return out;
}

} // namespace

TEST_SUITE("contrastive")
{
    TEST_CASE("magnitude warp: identity, pure scaling and unbiased mean")
    {
        Rng data = make_rng(1);
        const Spectrum x = testing_support::random_spectra(1, 40, data)[0];

        AugmentationConfig id;
        id.alpha_min = id.alpha_max = 1.0;
        id.sigma1 = id.sigma2 = 0.0;
        Rng rng = make_rng(2);
        CHECK(magnitude_warp(x, id, rng) == x);

        AugmentationConfig twice = id;
        twice.alpha_min = twice.alpha_max = 2.0;
        const auto y = magnitude_warp(x, twice, rng);
        for (std::size_t b = 0; b < x.size(); ++b)
            CHECK(y[b] == 2.0 * x[b]);

        const Spectrum flat(40, 0.5);
        AugmentationConfig def;
        Spectrum mean(40, 0.0);
        const int draws = 4000;
        for (int d = 0; d < draws; ++d)
        {
            const auto w = magnitude_warp(flat, def, rng);
            for (std::size_t b = 0; b < 40; ++b)
                mean[b] += w[b] / draws;
        }
        for (double m : mean)
            CHECK(std::abs(m - 0.5) / 0.5 < 0.02);

        Rng a = make_rng(5), b = make_rng(5);
        CHECK(magnitude_warp(x, def, a) == magnitude_warp(x, def, b));

        auto few = def;
        few.num_knots = 1;
        CHECK_THROWS_AS(magnitude_warp(x, few, rng), ValidationError);
        CHECK_THROWS_AS(magnitude_warp(Spectrum(4, 1.0), def, rng), ValidationError);
    }

    TEST_CASE("cosine similarity")
    {
        const std::vector<double> u{1, 0}, v{0, 2}, w{-3, 0}, z{0, 0};
        CHECK(cosine_sim(u, u) == doctest::Approx(1.0));
        CHECK(cosine_sim(u, v) == doctest::Approx(0.0));
        CHECK(cosine_sim(u, w) == doctest::Approx(-1.0));
        CHECK_THROWS_AS(cosine_sim(u, z), ValidationError);
        CHECK_THROWS_AS(cosine_sim(u, std::vector<double>{1, 2, 3}), ShapeError);
    }

    TEST_CASE("SimCLR loss matches the brute-force oracle and its gradient")
    {
        Rng rng = make_rng(11);
        for (std::size_t b : {1, 2, 3, 5})
        {
            const auto z = random_matrix(2 * b, 16, rng);
            for (double tau : {0.0866, 0.5, 1.0})
            {
                const auto r = simclr_loss(z, tau);
                CHECK(std::abs(r.loss - oracle::simclr(rows_of(z), tau)) <= 1e-10 * std::max(1.0, std::abs(r.loss)));
                if (b > 1)
                    CHECK(r.loss > 0.0);
            }
        }

        const auto z = random_matrix(8, 16, rng);
        const auto report = gradcheck::check_embedding_loss(z, [](const nn::Matrix& m) { return simclr_loss(m, 0.2); });
        CHECK(report.checked == 8 * 16);
        CHECK(report.max_rel_error < 1e-6);
    }

    TEST_CASE("SimCLR loss with a single pair is zero")
    {
        // Only the positive is in the denominator.
        Rng rng = make_rng(12);
        CHECK(simclr_loss(random_matrix(2, 16, rng), 0.1).loss == doctest::Approx(0.0).epsilon(1e-12));
    }

    TEST_CASE("SimCLR loss is invariant to row scaling and rotation")
    {
        Rng rng = make_rng(13);
        const auto z = random_matrix(6, 16, rng);
        const double base = simclr_loss(z, 0.3).loss;

        nn::Matrix scaled = z;
        for (Eigen::Index i = 0; i < scaled.rows(); ++i)
            scaled.row(i) *= 0.1 + static_cast<double>(i);
        CHECK(simclr_loss(scaled, 0.3).loss == doctest::Approx(base).epsilon(1e-12));

        const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(random_matrix(16, 16, rng)).householderQ();
        const nn::Matrix rotated = z * q;
        CHECK(simclr_loss(rotated, 0.3).loss == doctest::Approx(base).epsilon(1e-12));
    }

    TEST_CASE("SimCLR loss rewards aligned positives")
    {
        Rng rng = make_rng(14);
        const auto top = random_matrix(4, 16, rng);
        nn::Matrix aligned(8, 16), crossed(8, 16);
        aligned << top, top;
        crossed.topRows(4) = top;
        for (Eigen::Index i = 0; i < 4; ++i)
            crossed.row(4 + i) = top.row((i + 1) % 4);
        CHECK(simclr_loss(aligned, 0.1).loss < simclr_loss(crossed, 0.1).loss);

        CHECK_THROWS_AS(simclr_loss(random_matrix(3, 16, rng), 0.1), ShapeError);
        CHECK_THROWS_AS(simclr_loss(aligned, 0.0), ValidationError);
        nn::Matrix dead = aligned;
        dead.row(2).setZero();
        CHECK_THROWS_AS(simclr_loss(dead, 0.1), ValidationError);
    }

    TEST_CASE("fine-tune loss: oracle, identical labels, empty positives")
    {
        Rng rng = make_rng(21);
        for (int trial = 0; trial < 10; ++trial)
        {
            const auto z = random_matrix(6, 16, rng);
            const auto y = random_labels(6, rng);
            const auto want = oracle::finetune(rows_of(z), label_rows(y), 0.6, 0.0866);
            if (want.active == 0)
            {
                CHECK_THROWS_AS(finetune_loss(z, y, 0.6, 0.0866), ValidationError);
                continue;
            }
            const auto got = finetune_loss(z, y, 0.6, 0.0866);
            CHECK(std::abs(got.loss - want.loss) <= 1e-10 * std::max(1.0, std::abs(want.loss)));
            CHECK(got.skipped_anchors == want.skipped);
        }

        const auto z = random_matrix(5, 16, rng);
        const std::vector<AbundanceVector> same(5, AbundanceVector(0.2, 0.3, 0.5));
        CHECK(finetune_loss(z, same, 0.6, 0.1).loss == doctest::Approx(0.0).epsilon(1e-12));

        const std::vector<AbundanceVector> apart{AbundanceVector(1, 0, 0), AbundanceVector(0, 1, 0),
                                                 AbundanceVector(0, 0, 1)};
        CHECK_THROWS_AS(finetune_loss(random_matrix(3, 16, rng), apart, 0.6, 0.1), ValidationError);

        // One isolated anchor is skipped, not fatal.
        std::vector<AbundanceVector> mixed(4, AbundanceVector(1, 0, 0));
        mixed[3] = AbundanceVector(0, 0, 1);
        const auto r = finetune_loss(random_matrix(4, 16, rng), mixed, 0.6, 0.1);
        CHECK(r.skipped_anchors == 1);
        CHECK(r.gradient.row(3).norm() > 0.0); // still a negative for the others
    }

    TEST_CASE("fine-tune loss gradient and permutation symmetry")
    {
        Rng rng = make_rng(22);
        const auto z = random_matrix(7, 16, rng);
        auto y = random_labels(7, rng);
        y[1] = y[0];
        const auto loss = [&](const nn::Matrix& m) { return finetune_loss(m, y, 0.6, 0.2); };
        const auto report = gradcheck::check_embedding_loss(z, loss);
        CHECK(report.max_rel_error < 1e-6);

        std::vector<std::size_t> perm(7);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        nn::Matrix zp(7, 16);
        std::vector<AbundanceVector> yp(7);
        for (std::size_t i = 0; i < 7; ++i)
        {
            zp.row(static_cast<Eigen::Index>(i)) = z.row(static_cast<Eigen::Index>(perm[i]));
            yp[i] = y[perm[i]];
        }
        const auto a = finetune_loss(z, y, 0.6, 0.2), b = finetune_loss(zp, yp, 0.6, 0.2);
        CHECK(b.loss == doctest::Approx(a.loss).epsilon(1e-12));
        for (std::size_t i = 0; i < 7; ++i)
            CHECK((b.gradient.row(static_cast<Eigen::Index>(i)) - a.gradient.row(static_cast<Eigen::Index>(perm[i])))
                      .norm() < 1e-12);
    }

    TEST_CASE("pretraining lowers the loss and is deterministic")
    {
        const auto spectra = mixture_spectra(200, 24, 31);
        PretrainConfig cfg;
        cfg.batch_size = 32;
        cfg.epochs = 30;
        cfg.seed = 4;
        AugmentationConfig aug;
        aug.seed = 5;
        const auto init = nn::EncoderModel::initialize(24, 3);

        const auto run = pretrain(init, spectra, cfg, aug);
        REQUIRE(run.history.size() == 30);
        double tail = 0.0;
        for (std::size_t e = 25; e < 30; ++e)
            tail += run.history[e].mean_loss / 5.0;
        CHECK(tail < run.history.front().mean_loss);

        cfg.epochs = 3;
        const auto a = pretrain(init, spectra, cfg, aug), b = pretrain(init, spectra, cfg, aug);
        CHECK(a.model == b.model);
        CHECK(a.history.front().mean_loss == b.history.front().mean_loss);

        // Zero step size: trainable weights stay put, running statistics move.
        cfg.learning_rate = 0.0;
        auto frozen = pretrain(init, spectra, cfg, aug).model;
        auto start = init;
        const auto p0 = start.parameters(), p1 = frozen.parameters();
        for (std::size_t i = 0; i < p0.size(); ++i)
            CHECK(std::equal(p0[i].values.begin(), p0[i].values.end(), p1[i].values.begin()));
        CHECK(frozen.bn[0].running_mean != init.bn[0].running_mean);

        cfg.batch_size = 201;
        CHECK_THROWS_AS(pretrain(init, spectra, cfg, aug), ValidationError);
    }

    TEST_CASE("fine-tuning only moves the head and lowers the loss")
    {
        const auto labeled = labeled_mixtures(40, 24, 41);
        const auto start = nn::EncoderModel::initialize(24, 6);
        FinetuneConfig cfg;
        cfg.epochs = 50;
        const auto run = finetune(start, labeled, cfg);
        REQUIRE(run.history.size() == 50);
        CHECK(run.history.back().mean_loss < run.history.front().mean_loss);

        auto before = start;
        auto after = run.model;
        const auto f0 = before.frozen_state(), f1 = after.frozen_state();
        REQUIRE(f0.size() == f1.size());
        for (std::size_t i = 0; i < f0.size(); ++i)
            CHECK(std::equal(f0[i].values.begin(), f0[i].values.end(), f1[i].values.begin()));
        CHECK(after.head != before.head);

        cfg.learning_rate = 0.0;
        CHECK(finetune(start, labeled, cfg).model == start);

        CHECK_THROWS_AS(finetune(start, std::span(labeled).first(1), cfg), ValidationError);
    }

    TEST_CASE("loss history CSV")
    {
        testing_support::TempDir dir("hist");
        const std::vector<EpochStats> h{{0, 1.5, 0}, {1, 0.25, 2}};
        write_loss_history(dir / "h.csv", h);
        const auto bytes = testing_support::slurp(dir / "h.csv");
        CHECK(std::string(bytes.begin(), bytes.end()) == "epoch,mean_loss,skipped_anchors\n0,1.5,0\n1,0.25,2\n");
    }
}
