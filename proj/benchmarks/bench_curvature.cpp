#include <benchmark/benchmark.h>

#include "fedbens/curvature.hpp"
#include "fedbens/data.hpp"
#include "fedbens/model.hpp"
#include "fedbens/rng.hpp"

namespace {

using namespace fedbens;

struct Fixture {
    ModelSpec spec{{20, 16, 5}, Activation::kRelu};
    ParamVector params = init_params(spec, 0);
    Dataset data = gen_synthetic_blobs(5, 20, 100, 0.7, 1);
    PriorSpec prior{0.1};
};

void BM_GgnDiagonal(benchmark::State& state) {
    Fixture f;
    for (auto _ : state) {
        benchmark::DoNotOptimize(ggn_diagonal(f.params, f.spec, f.data, 0.1, f.prior));
    }
}
BENCHMARK(BM_GgnDiagonal);

void BM_GgnLastLayerFull(benchmark::State& state) {
    Fixture f;
    for (auto _ : state) {
        benchmark::DoNotOptimize(ggn_last_layer_full(f.params, f.spec, f.data, 0.1, f.prior));
    }
}
BENCHMARK(BM_GgnLastLayerFull);

void BM_KfacFactorsExact(benchmark::State& state) {
    Fixture f;
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            kfac_factors(f.params, f.spec, f.data, KfacMode::exact_classes()));
    }
}
BENCHMARK(BM_KfacFactorsExact);

void BM_KroneckerMatVec(benchmark::State& state) {
    Fixture f;
    const auto precision = assemble_kronecker(
        kfac_factors(f.params, f.spec, f.data, KfacMode::exact_classes()), f.spec, 0.1, f.prior);
    std::vector<double> v(precision.dim());
    Rng rng(2);
    for (double& x : v) x = rng.normal();
    for (auto _ : state) {
        benchmark::DoNotOptimize(mat_vec(precision, v));
    }
}
BENCHMARK(BM_KroneckerMatVec);

}  // namespace

BENCHMARK_MAIN();
