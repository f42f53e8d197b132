#include <benchmark/benchmark.h>

#include "fedbens/federation.hpp"
#include "fedbens/posterior.hpp"
#include "fedbens/rng.hpp"

namespace {

using namespace fedbens;

// Fused objective with C clients x M Kronecker components, as the server
// sees it during optimization.
GlobalObjective make_objective(int clients, int mixtures) {
    const ModelSpec spec{{20, 16, 5}, Activation::kRelu};
    const Dataset data = gen_synthetic_blobs(5, 20, 60, 0.7, 3);
    const PriorSpec prior{0.1};

    GlobalObjective g;
    g.prior = prior;
    Rng rng(5);
    for (int c = 0; c < clients; ++c) {
        ClientPosterior cp;
        for (int m = 0; m < mixtures; ++m) {
            ParamVector mean = init_params(spec, rng.next_u64());
            const auto precision = assemble_kronecker(
                kfac_factors(mean, spec, data, KfacMode::exact_classes()), spec, 0.1, prior);
            cp.components.push_back(LaplaceComponent::make(std::move(mean), precision));
        }
        g.clients.push_back(std::move(cp));
    }
    return g;
}

void BM_GlobalGrad(benchmark::State& state) {
    const auto objective = make_objective(static_cast<int>(state.range(0)), 3);
    std::vector<double> w(objective.dim());
    Rng rng(7);
    for (double& v : w) v = 0.2 * rng.normal();
    for (auto _ : state) {
        benchmark::DoNotOptimize(global_grad(objective, w));
    }
}
BENCHMARK(BM_GlobalGrad)->Arg(2)->Arg(5)->Arg(10);

void BM_GlobalNegLogPosterior(benchmark::State& state) {
    const auto objective = make_objective(5, static_cast<int>(state.range(0)));
    std::vector<double> w(objective.dim());
    Rng rng(9);
    for (double& v : w) v = 0.2 * rng.normal();
    for (auto _ : state) {
        benchmark::DoNotOptimize(global_neg_log_posterior(objective, w));
    }
}
BENCHMARK(BM_GlobalNegLogPosterior)->Arg(1)->Arg(3)->Arg(5);

}  // namespace

BENCHMARK_MAIN();
