#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedbens/curvature.hpp"
#include "fedbens/linalg.hpp"
#include "fedbens/model.hpp"

namespace fedbens {

// Closed-form and brute-force references. Everything here is deliberately
// independent of the structured implementations it is used to check:
// dense matrices, full Jacobians, textbook formulas.

struct combination_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct oracle_scale_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Exact Gaussian posterior (conjugate linear-regression case).
struct GaussianPosterior {
    std::vector<double> mean;
    Matrix precision;  // symmetric positive definite

    std::size_t dim() const { return mean.size(); }
};

// Bayesian linear regression: precision = X^T X / noise_var + tau I,
// mean = precision^{-1} X^T y / noise_var.
GaussianPosterior blr_local_posterior(const Matrix& x, std::span<const double> y,
                                      double noise_var, const PriorSpec& prior);

// Pooled posterior over the concatenated client data.
GaussianPosterior blr_pooled_posterior(const std::vector<Matrix>& xs,
                                       const std::vector<std::vector<double>>& ys,
                                       double noise_var, const PriorSpec& prior);

// The exact product rule for client posteriors sharing one prior:
// precision = sum_c Lambda_c - (C-1) tau I, mean = precision^{-1} sum_c Lambda_c mu_c.
// Throws combination_error if the combined precision is not positive definite.
GaussianPosterior combine_gaussian_posteriors(const std::vector<GaussianPosterior>& locals,
                                          const PriorSpec& prior);

double dense_gaussian_log_pdf(std::span<const double> mean, const Matrix& precision,
                              std::span<const double> w);

// Materializes any PrecisionStructure as its dense d x d matrix. Guarded to
// the oracle scale (d <= 200).
Matrix dense_expand(const PrecisionStructure& p);

// Dense GGN of the summed negative log likelihood (likelihood part only,
// no temperature, no prior), built from full per-class Jacobians.
Matrix dense_ggn(const ParamVector& params, const ModelSpec& spec, const Dataset& data);

// Exhaustive 2-D minimization on a uniform inclusive grid; ties resolved to
// the lowest linear index (row-major over y then x).
struct GridResult {
    double x = 0.0;
    double y = 0.0;
    double value = 0.0;
};
GridResult grid_search_2d(const std::function<double(double, double)>& objective,
                          double x_lo, double x_hi, double y_lo, double y_hi,
                          int resolution);

}  // namespace fedbens
