#include "fedbens/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fedbens {

LaplaceComponent LaplaceComponent::make(ParamVector mean, PrecisionStructure precision) {
    if (mean.dim() != precision.dim())
        throw std::invalid_argument("LaplaceComponent: mean and precision dims differ");
    LaplaceComponent c;
    c.log_norm = 0.5 * precision.log_det -
                 0.5 * static_cast<double>(mean.dim()) * std::log(2.0 * std::numbers::pi);
    c.mean = std::move(mean);
    c.precision = std::move(precision);
    return c;
}

std::size_t GlobalObjective::dim() const {
    return clients.front().components.front().mean.dim();
}

double component_log_density(const LaplaceComponent& c, std::span<const double> w) {
    if (w.size() != c.mean.dim())
        throw std::invalid_argument("component_log_density: dimension mismatch");
    std::vector<double> delta(w.size());
    for (std::size_t j = 0; j < w.size(); ++j) delta[j] = w[j] - c.mean.values[j];
    return c.log_norm - 0.5 * quadratic_form(c.precision, delta);
}

namespace {

std::vector<double> component_log_densities(const ClientPosterior& cp,
                                            std::span<const double> w) {
    std::vector<double> out;
    out.reserve(cp.components.size());
    for (const auto& c : cp.components) out.push_back(component_log_density(c, w));
    return out;
}

}  // namespace

double mixture_log_density(const ClientPosterior& cp, std::span<const double> w) {
    if (cp.components.empty())
        throw std::invalid_argument("mixture_log_density: empty mixture");
    const auto logs = component_log_densities(cp, w);
    const double peak = *std::max_element(logs.begin(), logs.end());
    double acc = 0.0;
    for (double v : logs) acc += std::exp(v - peak);
    const double log_m = std::log(static_cast<double>(cp.components.size()));
    return peak + std::log(acc) - log_m;
}

std::vector<double> responsibilities(const ClientPosterior& cp, std::span<const double> w) {
    const auto logs = component_log_densities(cp, w);
    const double peak = *std::max_element(logs.begin(), logs.end());
    std::vector<double> r(logs.size());
    double total = 0.0;
    for (std::size_t m = 0; m < logs.size(); ++m) {
        r[m] = std::exp(logs[m] - peak);
        total += r[m];
    }
    for (double& v : r) v /= total;
    return r;
}

std::vector<double> mixture_grad(const ClientPosterior& cp, std::span<const double> w) {
    const auto resp = responsibilities(cp, w);
    std::vector<double> grad(w.size(), 0.0);
    std::vector<double> delta(w.size());
    for (std::size_t m = 0; m < cp.components.size(); ++m) {
        const auto& c = cp.components[m];
        for (std::size_t j = 0; j < w.size(); ++j) delta[j] = w[j] - c.mean.values[j];
        const auto lambda_delta = mat_vec(c.precision, delta);
        for (std::size_t j = 0; j < w.size(); ++j) grad[j] -= resp[m] * lambda_delta[j];
    }
    return grad;
}

double log_prior(const GlobalObjective& g, std::span<const double> w) {
    double sq = 0.0;
    for (double v : w) sq += v * v;
    return -sq / (2.0 * g.prior.variance);
}

double global_neg_log_posterior(const GlobalObjective& g, std::span<const double> w) {
    if (g.clients.empty())
        throw std::invalid_argument("global_neg_log_posterior: no clients");
    double loss = 0.0;
    for (const auto& client : g.clients) loss -= mixture_log_density(client, w);
    const double overcount = static_cast<double>(g.clients.size()) - 1.0;
    return loss + overcount * log_prior(g, w);
}

std::vector<double> global_grad(const GlobalObjective& g, std::span<const double> w) {
    if (g.clients.empty()) throw std::invalid_argument("global_grad: no clients");
    std::vector<double> grad(w.size(), 0.0);
    for (const auto& client : g.clients) {
        const auto mg = mixture_grad(client, w);
        for (std::size_t j = 0; j < w.size(); ++j) grad[j] -= mg[j];
    }
    const double overcount = static_cast<double>(g.clients.size()) - 1.0;
    const double tau = g.prior.precision();
    for (std::size_t j = 0; j < w.size(); ++j) grad[j] += overcount * (-w[j] * tau);
    return grad;
}

}  // namespace fedbens
