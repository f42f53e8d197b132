#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fedbens/model.hpp"
#include "fedbens/oracle.hpp"
#include "t_helpers.hpp"

using namespace fedbens;

namespace {

Matrix random_design(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix x(rows, cols);
    for (double& v : x.data) v = rng.normal();
    return x;
}

std::vector<double> random_targets(std::size_t n, Rng& rng) {
    std::vector<double> y(n);
    for (double& v : y) v = rng.normal();
    return y;
}

struct ConjugateInstance {
    std::vector<Matrix> xs;
    std::vector<std::vector<double>> ys;
    std::vector<GaussianPosterior> locals;
};

ConjugateInstance random_instance(int clients, std::size_t d, std::size_t n_per_client,
                                  double noise_var, const PriorSpec& prior, Rng& rng) {
    ConjugateInstance inst;
    for (int c = 0; c < clients; ++c) {
        inst.xs.push_back(random_design(n_per_client, d, rng));
        inst.ys.push_back(random_targets(n_per_client, rng));
        inst.locals.push_back(
            blr_local_posterior(inst.xs.back(), inst.ys.back(), noise_var, prior));
    }
    return inst;
}

double matrix_rel_err(const Matrix& a, const Matrix& b) {
    Matrix diff = a;
    for (std::size_t i = 0; i < diff.data.size(); ++i) diff.data[i] -= b.data[i];
    return frobenius_norm(diff) / frobenius_norm(b);
}

double vector_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, denom = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        denom += b[i] * b[i];
    }
    return std::sqrt(num / denom);
}

}  // namespace

TEST_CASE("blr: scalar conjugate arithmetic") {
    Matrix x(1, 1);
    x(0, 0) = 1.0;
    const std::vector<double> y = {1.0};
    const auto post = blr_local_posterior(x, y, 1.0, PriorSpec{1.0});
    CHECK(post.precision(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(post.mean[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("blr: overwhelming prior pulls the mean to zero") {
    Rng rng(3);
    const Matrix x = random_design(30, 4, rng);
    const auto y = random_targets(30, rng);
    const auto post = blr_local_posterior(x, y, 1.0, PriorSpec{1e-12});
    for (double m : post.mean) CHECK(std::abs(m) < 1e-9);
}

TEST_CASE("blr matches a gradient-descent ridge solver") {
    Rng rng(5);
    const std::size_t d = 5, n = 40;
    const double noise_var = 0.7;
    const PriorSpec prior{0.4};
    const Matrix x = random_design(n, d, rng);
    const auto y = random_targets(n, rng);
    const auto post = blr_local_posterior(x, y, noise_var, prior);

    // Independent route: minimize |Xw - y|^2 / (2 nv) + tau |w|^2 / 2 by
    // plain gradient descent.
    std::vector<double> w(d, 0.0);
    const double tau = prior.precision();
    double lip = tau;  // upper bound via trace of the quadratic's Hessian
    for (double v : x.data) lip += v * v / noise_var;
    const double lr = 1.0 / lip;
    for (int it = 0; it < 200000; ++it) {
        std::vector<double> grad(d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double residual = -y[i];
            for (std::size_t j = 0; j < d; ++j) residual += x(i, j) * w[j];
            for (std::size_t j = 0; j < d; ++j) grad[j] += residual * x(i, j) / noise_var;
        }
        for (std::size_t j = 0; j < d; ++j) {
            grad[j] += tau * w[j];
            w[j] -= lr * grad[j];
        }
    }
    for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(w[j] - post.mean[j]) < 1e-8);
}

TEST_CASE("product rule: combining client posteriors equals the pooled posterior") {
    Rng rng(7);
    const PriorSpec prior{0.1};
    for (const int clients : {2, 5}) {
        for (const std::size_t d : {std::size_t{5}, std::size_t{20}}) {
            const auto inst = random_instance(clients, d, 30, 1.0, prior, rng);
            const auto combined = combine_gaussian_posteriors(inst.locals, prior);
            const auto pooled = blr_pooled_posterior(inst.xs, inst.ys, 1.0, prior);

            CHECK(matrix_rel_err(combined.precision, pooled.precision) < 1e-9);
            CHECK(vector_rel_err(combined.mean, pooled.mean) < 1e-9);
        }
    }
}

TEST_CASE("product rule: dropping the prior correction breaks the identity") {
    Rng rng(9);
    const PriorSpec prior{0.1};
    const auto inst = random_instance(5, 10, 30, 1.0, prior, rng);
    const auto pooled = blr_pooled_posterior(inst.xs, inst.ys, 1.0, prior);

    // Wrong rule: plain product of posteriors, no (C-1) tau I subtraction.
    const std::size_t d = 10;
    Matrix bad_precision(d, d);
    std::vector<double> weighted(d, 0.0);
    for (const auto& local : inst.locals) {
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) bad_precision(a, b) += local.precision(a, b);
        const auto lm = matvec(local.precision, local.mean);
        for (std::size_t a = 0; a < d; ++a) weighted[a] += lm[a];
    }
    const auto chol = cholesky(bad_precision);
    REQUIRE(chol.has_value());
    const auto bad_mean = chol->solve(weighted);

    CHECK(matrix_rel_err(bad_precision, pooled.precision) > 1e-3);
    CHECK(vector_rel_err(bad_mean, pooled.mean) > 1e-3);
}

TEST_CASE("product rule: C=1 is the identity; client order is irrelevant") {
    Rng rng(11);
    const PriorSpec prior{0.2};
    const auto inst = random_instance(3, 6, 15, 0.5, prior, rng);

    const auto single = combine_gaussian_posteriors({inst.locals[0]}, prior);
    CHECK(matrix_rel_err(single.precision, inst.locals[0].precision) < 1e-14);
    for (std::size_t j = 0; j < 6; ++j)
        CHECK(single.mean[j] == doctest::Approx(inst.locals[0].mean[j]).epsilon(1e-12));

    auto reversed = inst.locals;
    std::reverse(reversed.begin(), reversed.end());
    const auto a = combine_gaussian_posteriors(inst.locals, prior);
    const auto b = combine_gaussian_posteriors(reversed, prior);
    CHECK(matrix_rel_err(a.precision, b.precision) < 1e-14);
    CHECK(vector_rel_err(a.mean, b.mean) < 1e-12);
}

TEST_CASE("product rule: two identical locals combine to 2 Lambda - tau I") {
    Rng rng(12);
    const std::size_t d = 4;
    Matrix b(d, d);
    for (double& v : b.data) v = rng.normal();
    Matrix lambda = matmul(b, transpose(b));
    const double tau = 0.8;
    for (std::size_t i = 0; i < d; ++i) lambda(i, i) += tau + 1.0;

    GaussianPosterior local;
    local.mean = random_targets(d, rng);
    local.precision = lambda;
    const auto combined = combine_gaussian_posteriors({local, local}, PriorSpec{1.0 / tau});
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c)
            CHECK(combined.precision(r, c) ==
                  doctest::Approx(2.0 * lambda(r, c) - (r == c ? tau : 0.0)).epsilon(1e-12));
}

TEST_CASE("product rule: non-PD combination is rejected") {
    // Two "posteriors" with precision below tau cannot come from this prior;
    // the subtraction goes indefinite and must be caught.
    GaussianPosterior weak;
    weak.mean = {0.0, 0.0};
    weak.precision = Matrix(2, 2);
    weak.precision(0, 0) = weak.precision(1, 1) = 0.5;
    CHECK_THROWS_AS((void)combine_gaussian_posteriors({weak, weak}, PriorSpec{0.5}),
                    combination_error);
}

TEST_CASE("dense_gaussian_log_pdf at the mean is the log normalizer") {
    Rng rng(13);
    const std::size_t d = 7;
    Matrix b(d, d);
    for (double& v : b.data) v = rng.normal();
    Matrix precision = matmul(b, transpose(b));
    for (std::size_t i = 0; i < d; ++i) precision(i, i) += 1.0;
    const auto mean = random_targets(d, rng);

    const double at_mean = dense_gaussian_log_pdf(mean, precision, mean);
    const double expected = 0.5 * cholesky(precision)->log_det() -
                            0.5 * double(d) * std::log(2.0 * std::numbers::pi);
    CHECK(at_mean == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("dense_expand of a diagonal structure is diag(v)") {
    Rng rng(17);
    const ModelSpec spec{{2, 2}, Activation::kRelu};
    const auto p = t::random_diag_structure(spec, 1.5, rng);
    const auto& entries = std::get<DiagonalPrecision>(p.repr).entries;
    const Matrix dense = dense_expand(p);
    for (std::size_t r = 0; r < dense.rows; ++r)
        for (std::size_t c = 0; c < dense.cols; ++c)
            CHECK(dense(r, c) == (r == c ? entries[r] : 0.0));
}

TEST_CASE("dense_ggn is symmetric PSD and refuses oracle-scale abuse") {
    Rng rng(19);
    const ModelSpec spec{{3, 4, 2}, Activation::kRelu};
    const auto params = t::random_params(spec, rng);
    const auto data = t::random_dataset(spec, 4, rng);
    const Matrix g = dense_ggn(params, spec, data);
    for (std::size_t r = 0; r < g.rows; ++r)
        for (std::size_t c = 0; c < g.cols; ++c)
            CHECK(g(r, c) == doctest::Approx(g(c, r)).epsilon(1e-12));
    Matrix damped = g;
    for (std::size_t i = 0; i < g.rows; ++i) damped(i, i) += 1e-9;
    CHECK(cholesky(damped).has_value());

    const ModelSpec big{{100, 40, 10}, Activation::kRelu};
    const auto big_params = zeros_like(big);
    CHECK_THROWS_AS((void)dense_ggn(big_params, big, data), oracle_scale_error);
}

TEST_CASE("grid_search_2d: origin found exactly when the grid contains it") {
    const auto result = grid_search_2d([](double x, double y) { return x * x + y * y; },
                                       -1.0, 1.0, -1.0, 1.0, 101);
    CHECK(result.x == 0.0);
    CHECK(result.y == 0.0);
    CHECK(result.value == 0.0);
}

TEST_CASE("grid_search_2d: shifted quadratic located within one cell") {
    const auto result = grid_search_2d(
        [](double x, double y) {
            return (x - 0.3) * (x - 0.3) + 2.0 * (y + 0.2) * (y + 0.2);
        },
        -1.0, 1.0, -1.0, 1.0, 1001);
    CHECK(std::abs(result.x - 0.3) <= 2.0 / 1000.0 + 1e-12);
    CHECK(std::abs(result.y + 0.2) <= 2.0 / 1000.0 + 1e-12);
}

TEST_CASE("grid_search_2d agrees with Adam on a bimodal toy") {
    // Two unequal Gaussian wells; the deeper sits near (0.6, -0.4).
    const auto objective = [](double x, double y) {
        const double well1 = std::exp(-8.0 * ((x - 0.6) * (x - 0.6) + (y + 0.4) * (y + 0.4)));
        const double well2 = std::exp(-8.0 * ((x + 0.5) * (x + 0.5) + (y - 0.5) * (y - 0.5)));
        return -(1.0 * well1 + 0.6 * well2);
    };
    const int resolution = 401;
    const auto grid = grid_search_2d(objective, -1.5, 1.5, -1.5, 1.5, resolution);

    auto state = OptimizerState::make_adam(2, {.lr = 0.02});
    std::vector<double> w = {0.2, -0.1};
    for (int step = 0; step < 4000; ++step) {
        const double h = 1e-6;
        const std::vector<double> grad = {
            (objective(w[0] + h, w[1]) - objective(w[0] - h, w[1])) / (2 * h),
            (objective(w[0], w[1] + h) - objective(w[0], w[1] - h)) / (2 * h)};
        adam_step(state, w, grad);
    }
    const double cell = 3.0 / (resolution - 1);
    CHECK(std::abs(grid.x - w[0]) <= cell + 1e-9);
    CHECK(std::abs(grid.y - w[1]) <= cell + 1e-9);

    CHECK_THROWS_AS((void)grid_search_2d(objective, -1, 1, -1, 1, 5), std::invalid_argument);
}
