#include "fedbens/oracle.hpp"

#include <cmath>
#include <numbers>

namespace fedbens {

namespace {

constexpr std::size_t kOracleMaxDim = 200;

void check_oracle_dim(std::size_t d, const char* what) {
    if (d > kOracleMaxDim)
        throw oracle_scale_error(std::string(what) + ": dense oracle limited to d <= 200");
}

}  // namespace

GaussianPosterior blr_local_posterior(const Matrix& x, std::span<const double> y,
                                      double noise_var, const PriorSpec& prior) {
    if (!(noise_var > 0.0))
        throw std::invalid_argument("blr_local_posterior: noise_var must be > 0");
    prior.validate();
    if (x.rows != y.size())
        throw std::invalid_argument("blr_local_posterior: X rows must match y length");
    const std::size_t d = x.cols;

    GaussianPosterior post;
    post.precision = Matrix(d, d);
    const double inv_noise = 1.0 / noise_var;
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t a = 0; a < d; ++a) {
            const double xia = x(i, a) * inv_noise;
            for (std::size_t b = 0; b < d; ++b) post.precision(a, b) += xia * x(i, b);
        }
    }
    const double tau = prior.precision();
    for (std::size_t a = 0; a < d; ++a) post.precision(a, a) += tau;

    std::vector<double> xty(d, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t a = 0; a < d; ++a) xty[a] += x(i, a) * y[i] * inv_noise;
    }
    const auto chol = cholesky(post.precision);
    if (!chol) throw combination_error("blr_local_posterior: precision not positive definite");
    post.mean = chol->solve(xty);
    return post;
}

GaussianPosterior blr_pooled_posterior(const std::vector<Matrix>& xs,
                                       const std::vector<std::vector<double>>& ys,
                                       double noise_var, const PriorSpec& prior) {
    if (xs.empty() || xs.size() != ys.size())
        throw std::invalid_argument("blr_pooled_posterior: bad client lists");
    std::size_t total_rows = 0;
    for (const auto& x : xs) total_rows += x.rows;
    const std::size_t d = xs.front().cols;

    Matrix pooled(total_rows, d);
    std::vector<double> y_all;
    y_all.reserve(total_rows);
    std::size_t row = 0;
    for (std::size_t c = 0; c < xs.size(); ++c) {
        if (xs[c].cols != d || xs[c].rows != ys[c].size())
            throw std::invalid_argument("blr_pooled_posterior: client shape mismatch");
        for (std::size_t i = 0; i < xs[c].rows; ++i, ++row) {
            for (std::size_t a = 0; a < d; ++a) pooled(row, a) = xs[c](i, a);
            y_all.push_back(ys[c][i]);
        }
    }
    return blr_local_posterior(pooled, y_all, noise_var, prior);
}

GaussianPosterior combine_gaussian_posteriors(const std::vector<GaussianPosterior>& locals,
                                          const PriorSpec& prior) {
    if (locals.empty()) throw std::invalid_argument("combine_gaussian_posteriors: no posteriors");
    prior.validate();
    const std::size_t d = locals.front().dim();

    Matrix precision(d, d);
    std::vector<double> weighted_mean(d, 0.0);
    for (const auto& local : locals) {
        if (local.dim() != d || local.precision.rows != d)
            throw std::invalid_argument("combine_gaussian_posteriors: dimension mismatch");
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t b = 0; b < d; ++b) precision(a, b) += local.precision(a, b);
        }
        const auto lm = matvec(local.precision, local.mean);
        for (std::size_t a = 0; a < d; ++a) weighted_mean[a] += lm[a];
    }
    const double overcount = (static_cast<double>(locals.size()) - 1.0) * prior.precision();
    for (std::size_t a = 0; a < d; ++a) precision(a, a) -= overcount;

    const auto chol = cholesky(precision);
    if (!chol)
        throw combination_error(
            "combine_gaussian_posteriors: combined precision is not positive definite");

    GaussianPosterior out;
    out.mean = chol->solve(weighted_mean);
    out.precision = std::move(precision);
    return out;
}

double dense_gaussian_log_pdf(std::span<const double> mean, const Matrix& precision,
                              std::span<const double> w) {
    const std::size_t d = mean.size();
    check_oracle_dim(d, "dense_gaussian_log_pdf");
    if (w.size() != d || precision.rows != d || precision.cols != d)
        throw std::invalid_argument("dense_gaussian_log_pdf: dimension mismatch");

    const auto chol = cholesky(precision);
    if (!chol)
        throw combination_error("dense_gaussian_log_pdf: precision not positive definite");

    std::vector<double> delta(d);
    for (std::size_t j = 0; j < d; ++j) delta[j] = w[j] - mean[j];
    const auto pd = matvec(precision, delta);
    double quad = 0.0;
    for (std::size_t j = 0; j < d; ++j) quad += delta[j] * pd[j];

    return 0.5 * chol->log_det() -
           0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) - 0.5 * quad;
}

Matrix dense_expand(const PrecisionStructure& p) {
    const std::size_t d = p.dim();
    check_oracle_dim(d, "dense_expand");
    Matrix out(d, d);

    std::visit(
        [&](const auto& repr) {
            using T = std::decay_t<decltype(repr)>;
            if constexpr (std::is_same_v<T, DiagonalPrecision>) {
                for (std::size_t j = 0; j < d; ++j) out(j, j) = repr.entries[j];
            } else if constexpr (std::is_same_v<T, DiagLastFullPrecision>) {
                const std::size_t d_front = repr.front.size();
                for (std::size_t j = 0; j < d_front; ++j) out(j, j) = repr.front[j];
                for (std::size_t r = 0; r < repr.last_block.rows; ++r)
                    for (std::size_t c = 0; c < repr.last_block.cols; ++c)
                        out(d_front + r, d_front + c) = repr.last_block(r, c);
            } else {
                // Block-diagonal with per-layer entries G[k,k'] * A[j,j'] at
                // flat indices (k * (in+1) + j, k' * (in+1) + j').
                for (std::size_t l = 0; l < repr.layers.size(); ++l) {
                    const LayerBlock& block = p.layout[l];
                    const Matrix& a = repr.layers[l].input_factor;
                    const Matrix& g = repr.layers[l].output_factor;
                    const std::size_t cols = block.cols;
                    for (int k = 0; k < block.rows; ++k)
                        for (int kp = 0; kp < block.rows; ++kp)
                            for (std::size_t j = 0; j < cols; ++j)
                                for (std::size_t jp = 0; jp < cols; ++jp)
                                    out(block.offset + k * cols + j,
                                        block.offset + kp * cols + jp) =
                                        g(k, kp) * a(j, jp);
                }
            }
        },
        p.repr);
    return out;
}

Matrix dense_ggn(const ParamVector& params, const ModelSpec& spec, const Dataset& data) {
    const std::size_t d = params.dim();
    check_oracle_dim(d, "dense_ggn");
    data.validate();

    Matrix out(d, d);
    const int num_classes = spec.num_classes();
    for (std::size_t i = 0; i < data.count; ++i) {
        const ForwardTrace trace = forward_trace(params, spec, data.row(i));
        for (int k = 0; k < num_classes; ++k) {
            const double weight = trace.probs[k];
            const ParamVector grad = class_gradient(params, spec, trace, k);
            for (std::size_t a = 0; a < d; ++a) {
                const double ga = grad.values[a];
                if (ga == 0.0) continue;
                for (std::size_t b = 0; b < d; ++b) {
                    const double gb = grad.values[b];
                    out(a, b) += weight * ga * gb;
                }
            }
        }
    }
    return out;
}

GridResult grid_search_2d(const std::function<double(double, double)>& objective,
                          double x_lo, double x_hi, double y_lo, double y_hi,
                          int resolution) {
    if (resolution < 10) throw std::invalid_argument("grid_search_2d: resolution must be >= 10");
    if (!(x_lo < x_hi) || !(y_lo < y_hi))
        throw std::invalid_argument("grid_search_2d: bounds must be ordered");

    const double dx = (x_hi - x_lo) / static_cast<double>(resolution - 1);
    const double dy = (y_hi - y_lo) / static_cast<double>(resolution - 1);

    GridResult best;
    bool first = true;
    for (int iy = 0; iy < resolution; ++iy) {
        const double y = y_lo + iy * dy;
        for (int ix = 0; ix < resolution; ++ix) {
            const double x = x_lo + ix * dx;
            const double v = objective(x, y);
            if (first || v < best.value) {
                best = {x, y, v};
                first = false;
            }
        }
    }
    return best;
}

}  // namespace fedbens
