#include <benchmark/benchmark.h>

#include "beetlescan/contrastive.hpp"
#include "beetlescan/nn.hpp"
#include "beetlescan/random.hpp"
#include "beetlescan/svr.hpp"

using namespace beetlescan;

namespace {

nn::Tensor3 random_batch(std::size_t batch, std::size_t bands, std::uint64_t seed)
{
    Rng rng = make_rng(seed);
    nn::Tensor3 t(batch, 1, bands);
    for (auto& v : t.data)
        v = uniform(rng, 0.0, 1.0);
    return t;
}

void BM_EncoderForwardEval(benchmark::State& state)
{
    const auto model = nn::EncoderModel::initialize(234, 1);
    const auto input = random_batch(static_cast<std::size_t>(state.range(0)), 234, 2);
    for (auto _ : state)
        benchmark::DoNotOptimize(nn::encoder_forward(model, input, nn::Mode::eval).embedding.data());
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderForwardEval)->Arg(1)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_EncoderTrainStep(benchmark::State& state)
{
    const auto model = nn::EncoderModel::initialize(234, 1);
    const auto input = random_batch(static_cast<std::size_t>(state.range(0)), 234, 3);
    auto grads = nn::EncoderModel::zeros_like(model);
    Rng rng = make_rng(4);
    nn::Matrix upstream(state.range(0), static_cast<Eigen::Index>(nn::kEmbeddingWidth));
    for (Eigen::Index i = 0; i < upstream.size(); ++i)
        upstream.data()[i] = standard_normal(rng);
    nn::EncoderTape tape;
    for (auto _ : state)
    {
        nn::encoder_forward(model, input, nn::Mode::train, &tape);
        benchmark::DoNotOptimize(nn::encoder_backward(model, tape, upstream, grads).data.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderTrainStep)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_SimclrLoss(benchmark::State& state)
{
    Rng rng = make_rng(5);
    nn::Matrix z(2 * state.range(0), static_cast<Eigen::Index>(nn::kEmbeddingWidth));
    for (Eigen::Index i = 0; i < z.size(); ++i)
        z.data()[i] = standard_normal(rng);
    for (auto _ : state)
        benchmark::DoNotOptimize(simclr_loss(z, 0.0866).loss);
}
BENCHMARK(BM_SimclrLoss)->Arg(64)->Arg(256);

void BM_SvrFit(benchmark::State& state)
{
    Rng rng = make_rng(6);
    const auto n = static_cast<std::size_t>(state.range(0));
    std::vector<FeatureVector> x(n, FeatureVector(16));
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i)
    {
        for (auto& v : x[i])
            v = standard_normal(rng);
        y[i] = uniform(rng, 0.0, 1.0);
    }
    SvrConfig cfg;
    cfg.c = 10.0;
    cfg.sigma = 3.0;
    for (auto _ : state)
        benchmark::DoNotOptimize(svr_fit(x, y, cfg).objective);
}
BENCHMARK(BM_SvrFit)->Arg(32)->Arg(200);

} // namespace

BENCHMARK_MAIN();
