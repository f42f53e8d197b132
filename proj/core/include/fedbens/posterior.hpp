#pragma once

#include <span>
#include <vector>

#include "fedbens/curvature.hpp"
#include "fedbens/model.hpp"

namespace fedbens {

// One Gaussian of a client's posterior mixture: N(w | mean, precision).
// log_norm = 0.5 * logdet(precision) - (d/2) log(2 pi), so
// component_log_density(mean) == log_norm.
struct LaplaceComponent {
    ParamVector mean;
    PrecisionStructure precision;
    double log_norm = 0.0;

    static LaplaceComponent make(ParamVector mean, PrecisionStructure precision);
};

// Equal-weight mixture of M components fitted to one client's data.
struct ClientPosterior {
    std::vector<LaplaceComponent> components;
};

// The multimodal fused objective: C client mixtures sharing one prior, with
// the overcounted prior divided back out (C-1 times).
struct GlobalObjective {
    std::vector<ClientPosterior> clients;
    PriorSpec prior;

    std::size_t dim() const;
};

double component_log_density(const LaplaceComponent& c, std::span<const double> w);

// log sum_m (1/M) N_m(w), evaluated with max-subtraction.
double mixture_log_density(const ClientPosterior& cp, std::span<const double> w);

// Posterior weight of each component at w; softmax of component log
// densities (sharpness-aware: the 0.5 logdet term participates).
std::vector<double> responsibilities(const ClientPosterior& cp, std::span<const double> w);

// Gradient of mixture_log_density: sum_m r_m * (-Lambda_m (w - mean_m)).
std::vector<double> mixture_grad(const ClientPosterior& cp, std::span<const double> w);

// Unnormalized log prior, -(|w|^2) / (2 sigma^2).
double log_prior(const GlobalObjective& g, std::span<const double> w);

// L(w) = -sum_c mixture_log_density_c(w) + (C-1) * log_prior(w).
// Minimizing L maximizes the fused log posterior.
double global_neg_log_posterior(const GlobalObjective& g, std::span<const double> w);

// grad L(w) = -sum_c mixture_grad_c(w) + (C-1) * (-w / sigma^2).
std::vector<double> global_grad(const GlobalObjective& g, std::span<const double> w);

}  // namespace fedbens
