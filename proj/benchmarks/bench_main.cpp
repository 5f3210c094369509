#include <benchmark/benchmark.h>

#include <random>

#include "cmtf/encoding/encoding.hpp"
#include "cmtf/forecast/forecaster.hpp"
#include "cmtf/interp/interp.hpp"
#include "cmtf/tensor/graph.hpp"

namespace {

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0, 1);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = z(rng);
    return m;
}

void BM_Wma(benchmark::State& state) {
    const auto x = gaussian(state.range(0), 1, 1);
    const std::vector<double> v(x.data(), x.data() + x.size());
    for (auto _ : state) benchmark::DoNotOptimize(cmtf::encoding::wma(v, {30}));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Wma)->Arg(1000)->Arg(100000);

void BM_Matmul(benchmark::State& state) {
    using namespace cmtf::tensor;
    const auto n = static_cast<std::size_t>(state.range(0));
    Tensor a({n, n}, 0.5), b({n, n}, 0.25);
    for (auto _ : state) {
        Graph g;
        auto out = sum(matmul(g.leaf(a), g.leaf(b)));
        g.backward(out);
        benchmark::DoNotOptimize(out.value()[0]);
    }
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64);

void BM_GroupLasso(benchmark::State& state) {
    const auto d = state.range(0);
    const auto x = gaussian(90, d, 2);
    const Eigen::MatrixXd y = x.leftCols(3) * Eigen::MatrixXd::Ones(3, 5) + gaussian(90, 5, 3);
    cmtf::interp::GroupLassoOptions o;
    o.alpha = 0.05;
    for (auto _ : state) benchmark::DoNotOptimize(cmtf::interp::group_lasso_fit(x, y, o).iterations);
}
BENCHMARK(BM_GroupLasso)->Arg(20)->Arg(80)->Unit(benchmark::kMillisecond);

void BM_StabilitySelect(benchmark::State& state) {
    const auto x = gaussian(500, 30, 4);
    const Eigen::MatrixXd y = 2.0 * x.col(0) + 0.1 * gaussian(500, 1, 5);
    std::vector<std::string> names;
    for (int j = 0; j < 30; ++j) names.push_back("f" + std::to_string(j));
    cmtf::interp::SelectionConfig c;
    c.corr.threshold = 0.5;
    for (auto _ : state) benchmark::DoNotOptimize(cmtf::interp::stability_select(x, y, names, c).final_features);
}
BENCHMARK(BM_StabilitySelect)->Unit(benchmark::kMillisecond);

void BM_EncoderForward(benchmark::State& state) {
    cmtf::forecast::TransformerConfig cfg;
    cfg.d_model = static_cast<int>(state.range(0));
    cfg.num_heads = 2;
    cfg.d_ffn = 2 * cfg.d_model;
    cfg.lookback = 30;
    const auto p = cmtf::forecast::init_params(cfg, 20, 5);
    const auto w = gaussian(30, 20, 6);
    for (auto _ : state) benchmark::DoNotOptimize(cmtf::forecast::encoder_forward(p, cfg, w));
}
BENCHMARK(BM_EncoderForward)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_TrainEpoch(benchmark::State& state) {
    cmtf::forecast::TransformerConfig cfg;
    cfg.d_model = 16;
    cfg.num_heads = 2;
    cfg.d_ffn = 32;
    cfg.lookback = 8;
    cfg.epochs = 1;
    cmtf::forecast::SequenceData d;
    d.features = gaussian(700, 10, 7);
    d.targets = (d.features.leftCols(5).array() > 0).cast<double>();
    for (std::size_t t = 7; t < 700; ++t) d.train.push_back(t);
    for (auto _ : state) benchmark::DoNotOptimize(cmtf::forecast::train(d, cfg).history.train_loss);
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
