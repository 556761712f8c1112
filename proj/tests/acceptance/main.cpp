// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances are fixed here, next to the checks that use them.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "beetlescan/pipeline.hpp"
#include "beetlescan/random.hpp"
#include "commands.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "run_config.hpp"
#include "support.hpp"

using namespace beetlescan;
using Clock = std::chrono::steady_clock;

namespace {

// Criterion 1
constexpr double kGradRelTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr double kGradFloor = 1e-5; // below this magnitude the comparison is absolute
constexpr double kGradBudgetSeconds = 60.0;
// Criterion 2
constexpr double kLossOracleTol = 1e-10;
// Criterion 3
constexpr double kQpRelTol = 1e-3;
constexpr double kKktTol = 1e-3;
// Criterion 4
constexpr double kSimplexSumTol = 1e-9;
constexpr int kSimplexTriples = 10000;
// Criterion 5
constexpr double kRmseCeiling = 0.15;
constexpr double kFloorImprovement = 0.30;
constexpr int kBenchmarkSeeds = 5;
constexpr int kRequiredSeeds = 4;
constexpr double kBenchmarkBudgetSeconds = 15 * 60.0;
// Pretraining schedule for the benchmark; see README "Acceptance suite".
constexpr std::size_t kBenchmarkEpochs = 10;
constexpr std::size_t kBenchmarkSamplesPerEpoch = 1024;

struct Outcome
{
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* format, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof(buf), format, args...);
    return buf;
}

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool bitwise_equal(std::span<const double> a, std::span<const double> b)
{
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// ---------------------------------------------------------------------------

Outcome gradient_fidelity()
{
    const auto t0 = Clock::now();
    Rng rng = make_rng(101);
    auto model = nn::EncoderModel::initialize(32, 7);
    // Move every tensor away from its trivial initial value.
    for (auto& p : model.parameters())
        for (auto& v : p.values)
            v += 0.05 * standard_normal(rng);
    for (auto& bn : model.bn)
        for (std::size_t c = 0; c < bn.channels; ++c)
        {
            bn.running_mean[c] = 0.1 * standard_normal(rng);
            bn.running_var[c] = uniform(rng, 0.5, 2.0);
        }

    nn::Tensor3 input(4, 1, 32);
    for (auto& v : input.data)
        v = uniform(rng, 0.0, 1.0);
    const std::vector<AbundanceVector> labels{AbundanceVector(0.7, 0.2, 0.1), AbundanceVector(0.6, 0.3, 0.1),
                                              AbundanceVector(0.1, 0.1, 0.8), AbundanceVector(0.2, 0.0, 0.8)};
    const PretrainConfig pre;
    const FinetuneConfig ft;

    gradcheck::Options opts;
    opts.step = kGradStep;
    opts.floor = kGradFloor;
    struct Case
    {
        const char* name;
        nn::Mode mode;
        gradcheck::LossFn loss;
    };
    const std::vector<Case> cases{
        {"simclr/train", nn::Mode::train, [&](const nn::Matrix& z) { return simclr_loss(z, pre.tau); }},
        {"simclr/eval", nn::Mode::eval, [&](const nn::Matrix& z) { return simclr_loss(z, pre.tau); }},
        {"finetune/train", nn::Mode::train,
         [&](const nn::Matrix& z) { return finetune_loss(z, labels, ft.lambda, ft.tau); }},
        {"finetune/eval", nn::Mode::eval,
         [&](const nn::Matrix& z) { return finetune_loss(z, labels, ft.lambda, ft.tau); }},
    };

    Outcome o{true, ""};
    for (const auto& c : cases)
    {
        const auto r = gradcheck::check_encoder(model, input, c.mode, c.loss, opts);
        o.pass &= r.max_rel_error < kGradRelTol;
        o.detail += fmt("%s max rel %.2e over %zu entries (%zu more at step/16 reach %.1e, %zu kink skips); ",
                        c.name, r.max_rel_error, r.checked, r.refined, r.refined_max_rel_error, r.kinks);
    }
    const double secs = seconds_since(t0);
    o.pass &= secs < kGradBudgetSeconds;
    o.detail += fmt("%.1f s", secs);
    return o;
}

Outcome loss_oracles()
{
    Rng rng = make_rng(202);
    double worst = 0.0;
    int instances = 0;
    for (int i = 0; i < 10; ++i)
    {
        const std::size_t b = 1 + static_cast<std::size_t>(i % 8);
        const auto z = testing_support::random_matrix(2 * b, 16, rng);
        const double tau = uniform(rng, 0.05, 1.0);
        worst = std::max(worst, std::abs(simclr_loss(z, tau).loss - oracle::simclr(testing_support::rows_of(z), tau)));
        ++instances;
    }
    while (instances < 20)
    {
        const std::size_t n = 2 + static_cast<std::size_t>(uniform(rng, 0.0, 10.999));
        const auto z = testing_support::random_matrix(n, 16, rng);
        std::vector<AbundanceVector> y;
        oracle::Rows yr;
        for (std::size_t k = 0; k < n; ++k)
        {
            y.push_back(testing_support::random_abundance(rng));
            yr.emplace_back(y.back().values().begin(), y.back().values().end());
        }
        const double lambda = uniform(rng, 0.3, 0.9), tau = uniform(rng, 0.05, 1.0);
        const auto want = oracle::finetune(testing_support::rows_of(z), yr, lambda, tau);
        if (want.active == 0)
            continue; // the loss is undefined; covered by the unit tests
        const auto got = finetune_loss(z, y, lambda, tau);
        worst = std::max(worst, std::abs(got.loss - want.loss));
        if (got.skipped_anchors != want.skipped)
            worst = INFINITY;
        ++instances;
    }
    return {worst <= kLossOracleTol, fmt("20 instances, max abs difference %.2e", worst)};
}

Outcome svr_correctness()
{
    Rng rng = make_rng(303);
    double worst_obj = 0.0, worst_kkt = 0.0;
    bool all_converged = true;
    for (int i = 0; i < 5; ++i)
    {
        const std::size_t n = 4 + static_cast<std::size_t>(i) + (i > 2 ? 2 : 0); // 4..10
        std::vector<FeatureVector> x;
        std::vector<double> y;
        for (std::size_t k = 0; k < n; ++k)
        {
            x.push_back({standard_normal(rng), standard_normal(rng), standard_normal(rng)});
            y.push_back(uniform(rng, 0.0, 1.0));
        }
        SvrConfig cfg;
        cfg.c = std::array<double, 5>{0.1, 1.0, 10.0, 3.0, 100.0}[i];
        cfg.sigma = std::array<double, 5>{0.3, 1.0, 3.0, 1.0, 0.7}[i];
        cfg.epsilon = 0.05;
        const auto fit = svr_fit(x, y, cfg);
        all_converged &= fit.converged;
        const auto qp = oracle::svr_dual_qp(oracle::rbf_gram(x, cfg.sigma), y, cfg.epsilon, cfg.c);
        worst_obj = std::max(worst_obj, std::abs(fit.objective - qp.objective) / std::max(std::abs(qp.objective), 1e-12));
        if (fit.converged)
            worst_kkt = std::max(worst_kkt, svr_kkt_violation(x, y, cfg, fit.alpha, fit.alpha_star));
    }
    return {worst_obj <= kQpRelTol && worst_kkt <= kKktTol && all_converged,
            fmt("max relative objective gap %.2e, max KKT violation %.2e, all converged: %s", worst_obj, worst_kkt,
                all_converged ? "yes" : "no")};
}

Outcome simplex_contract()
{
    Rng rng = make_rng(404);
    std::size_t bad_range = 0, bad_sum = 0, not_idempotent = 0, not_invariant = 0;
    double worst_sum = 0.0, real_scale_drift = 0.0;
    for (int i = 0; i < kSimplexTriples; ++i)
    {
        // Mix of signed, non-negative and all-negative triples.
        std::array<double, 3> raw{};
        for (auto& v : raw)
            v = standard_normal(rng) * std::pow(10.0, uniform(rng, -3.0, 3.0));
        if (i % 3 == 0)
            for (auto& v : raw)
                v = std::abs(v);
        if (i % 97 == 0)
            for (auto& v : raw)
                v = -std::abs(v);
        const auto p = simplex_normalize(raw);
        const auto& a = p.values();
        const double sum = a[0] + a[1] + a[2];
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
        bad_range += (a[0] < 0.0 || a[1] < 0.0 || a[2] < 0.0);
        bad_sum += std::abs(sum - 1.0) > kSimplexSumTol;
        not_idempotent += simplex_normalize(a).values() != a;
        if (raw[0] >= 0.0 && raw[1] >= 0.0 && raw[2] >= 0.0)
        {
            // Positive scales that keep the scaled triple exactly proportional.
            const double k = std::ldexp(1.0, static_cast<int>(uniform(rng, -20.0, 20.0)));
            not_invariant += simplex_normalize({k * raw[0], k * raw[1], k * raw[2]}).values() != a;
            // A general real scale rounds the input itself, so it is only
            // reported, not gated.
            const double r = uniform(rng, 1e-3, 1e3);
            const auto b = simplex_normalize({r * raw[0], r * raw[1], r * raw[2]}).values();
            for (std::size_t c = 0; c < 3; ++c)
                real_scale_drift = std::max(real_scale_drift, std::abs(b[c] - a[c]));
        }
    }
    return {bad_range == 0 && bad_sum == 0 && not_idempotent == 0 && not_invariant == 0,
            fmt("%d triples: %zu negative, %zu off-simplex (worst |sum-1| %.1e), %zu not idempotent, %zu not "
                "invariant under power-of-two scales; real scales drift at most %.1e",
                kSimplexTriples, bad_range, bad_sum, worst_sum, not_idempotent, not_invariant, real_scale_drift)};
}

Outcome synthetic_benchmark()
{
    const auto t0 = Clock::now();
    int ok_a = 0, ok_b = 0, ok_c = 0;
    std::string rows;
    for (int s = 1; s <= kBenchmarkSeeds; ++s)
    {
        cli::RunConfig cfg; // library defaults: 64x64x234 scene, 40 labeled, 5 folds
        cfg.set_seed(static_cast<std::uint64_t>(s));
        cfg.pipeline.pretrain.epochs = kBenchmarkEpochs;
        cfg.pipeline.pretrain.samples_per_epoch = kBenchmarkSamplesPerEpoch;
        cfg.validate();

        testing_support::TempDir dir("bench");
        const auto files = cli::cmd_generate(cfg, dir.path());
        std::ostringstream sink;
        const auto cv = cli::cmd_evaluate(cfg, files.cube, files.labeled, dir / "report.csv", sink);
        const double model = cv.reports[0].grand_mean, raw = cv.reports[1].grand_mean,
                     agg = cv.reports[2].grand_mean, floor = cv.mean_label_floor.grand_mean;
        const bool a = model < kRmseCeiling, b = model <= (1.0 - kFloorImprovement) * floor, c = raw < agg;
        ok_a += a;
        ok_b += b;
        ok_c += c;
        rows += fmt("seed %d: model %.4f raw %.4f aggregated %.4f floor %.4f [%c%c%c]; ", s, model, raw, agg, floor,
                    a ? 'a' : '-', b ? 'b' : '-', c ? 'c' : '-');
        std::fprintf(stderr, "  benchmark seed %d done after %.0f s\n", s, seconds_since(t0));
    }
    const double secs = seconds_since(t0);
    const bool pass = ok_a >= kRequiredSeeds && ok_b >= kRequiredSeeds && ok_c >= kRequiredSeeds &&
                      secs < kBenchmarkBudgetSeconds;
    return {pass, rows + fmt("(a) %d/5 (b) %d/5 (c) %d/5 seeds, %.0f s", ok_a, ok_b, ok_c, secs)};
}

Outcome freeze_contract()
{
    SceneConfig sc;
    sc.height = 12;
    sc.width = 12;
    sc.bands = 40;
    sc.seed = 6;
    const auto scene = generate_scene(sc, make_endmembers(40, 6));
    Dataset ds;
    ds.band_count = 40;
    ds.unlabeled = scene.pixels;
    ds.labeled = sample_labeled(scene, 20, 6);

    PipelineConfig cfg;
    cfg.pretrain.epochs = 3;
    cfg.pretrain.batch_size = 32;
    cfg.finetune.epochs = 30;
    cfg.svr.tune = false;
    cfg.seed = 6;
    const auto pre = pretrain_encoder(40, ds.unlabeled, cfg).model;
    const auto tuned = fit_supervised(pre, ds.labeled, cfg).model.encoder;

    auto a = pre;
    auto b = tuned;
    const auto fa = a.frozen_state(), fb = b.frozen_state();
    std::size_t mismatched = 0, values = 0;
    for (std::size_t i = 0; i < fa.size(); ++i)
    {
        mismatched += !bitwise_equal(fa[i].values, fb[i].values);
        values += fa[i].values.size();
    }
    const bool head_moved = !bitwise_equal(pre.head.weight, tuned.head.weight);
    return {mismatched == 0 && head_moved,
            fmt("%zu frozen tensors (%zu values), %zu changed; head updated: %s", fa.size(), values, mismatched,
                head_moved ? "yes" : "no")};
}

Outcome determinism()
{
    auto cfg = cli::parse_run_config("seed = 17\nheight = 24\nwidth = 24\nlabeled_count = 30\n"
                                     "epochs_self = 2\nsamples_per_epoch = 256\nepochs_ft = 20\n");
    testing_support::TempDir a("det-a"), b("det-b");
    const auto ga = cli::cmd_generate(cfg, a.path());
    const auto gb = cli::cmd_generate(cfg, b.path());
    const bool cube_same = testing_support::slurp(ga.cube) == testing_support::slurp(gb.cube);
    std::ostringstream sink;
    cli::cmd_evaluate(cfg, ga.cube, ga.labeled, a / "report.csv", sink);
    cli::cmd_evaluate(cfg, ga.cube, ga.labeled, b / "report.csv", sink);
    const auto ra = testing_support::slurp(a / "report.csv"), rb = testing_support::slurp(b / "report.csv");
    const bool report_same = ra == rb && !ra.empty();
    return {cube_same && report_same, fmt("generate cubes identical: %s; evaluate reports identical: %s (%zu bytes)",
                                          cube_same ? "yes" : "no", report_same ? "yes" : "no", ra.size())};
}

Outcome round_trips()
{
    testing_support::TempDir dir("rt");
    auto cfg = cli::parse_run_config("seed = 23\nheight = 16\nwidth = 16\nbands = 64\nlabeled_count = 20\n"
                                     "epochs_self = 2\nepochs_ft = 10\nsvr_tune = false\n");
    const auto g = cli::cmd_generate(cfg, dir.path());
    std::ostringstream sink;
    cli::cmd_train(cfg, g.cube, g.labeled, dir / "model.hpip", sink);

    // Checkpoint: a fresh load predicts bit-identically to a second load and
    // re-encodes to the same bytes.
    const auto m1 = load_pipeline(dir / "model.hpip");
    save_pipeline(dir / "copy.hpip", m1);
    const auto m2 = load_pipeline(dir / "copy.hpip");
    const bool ckpt_bytes = testing_support::slurp(dir / "model.hpip") == testing_support::slurp(dir / "copy.hpip");
    Rng rng = make_rng(5);
    const auto probes = testing_support::random_spectra(50, 64, rng);
    const auto p1 = predict_abundances(m1, probes), p2 = predict_abundances(m2, probes);
    bool preds_same = true;
    for (std::size_t i = 0; i < probes.size(); ++i)
        preds_same &= bitwise_equal(p1[i].values(), p2[i].values());

    // Cube and maps: write/read reproduces every float bit.
    const auto cube = read_cube(g.cube);
    write_cube(dir / "cube2.hscn", cube);
    const auto cube2 = read_cube(dir / "cube2.hscn");
    const bool cube_same = cube2 == cube &&
                           std::memcmp(cube.values.data(), cube2.values.data(), cube.values.size() * 4) == 0;

    PixelMask mask{16, 16, std::vector<std::uint8_t>(256, 1)};
    for (std::size_t p = 0; p < 256; p += 5)
        mask.active[p] = 0;
    bool maps_same = true;
    for (const PixelMask* m : std::array<const PixelMask*, 2>{nullptr, &mask})
    {
        const auto map = cli::predict_map(m1, cube, m);
        write_abundance_map(dir / "map.habn", map);
        const auto back = read_abundance_map(dir / "map.habn");
        maps_same &= back == map &&
                     std::memcmp(back.values.data(), map.values.data(), map.values.size() * 4) == 0;
    }
    write_mask(dir / "mask.hmsk", mask);
    maps_same &= read_mask(dir / "mask.hmsk") == mask;

    const bool pass = ckpt_bytes && preds_same && cube_same && maps_same;
    return {pass, fmt("checkpoint bytes %s, probe predictions %s, cube %s, maps and mask %s",
                      ckpt_bytes ? "identical" : "differ", preds_same ? "identical" : "differ",
                      cube_same ? "identical" : "differ", maps_same ? "identical" : "differ")};
}

} // namespace

int main()
{
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"gradient fidelity", gradient_fidelity},
        {"loss oracle equivalence", loss_oracles},
        {"SVR correctness", svr_correctness},
        {"simplex contract", simplex_contract},
        {"end-to-end synthetic benchmark", synthetic_benchmark},
        {"freeze contract", freeze_contract},
        {"determinism", determinism},
        {"round-trips", round_trips},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i)
    {
        Outcome o;
        try
        {
            o = criteria[i].second();
        }
        catch (const std::exception& e)
        {
            o = {false, std::string("threw: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("criterion %zu: %s %s -- %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first,
                    o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
