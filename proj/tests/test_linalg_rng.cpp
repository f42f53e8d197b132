#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedbens/linalg.hpp"
#include "fedbens/rng.hpp"

using namespace fedbens;

TEST_CASE("rng is deterministic and derived streams differ") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    CHECK(Rng::derive(1, 2, 3) == Rng::derive(1, 2, 3));
    CHECK(Rng::derive(1, 2, 3) != Rng::derive(1, 2, 4));
    CHECK(Rng::derive(1, 2, 3) != Rng::derive(2, 2, 3));
}

TEST_CASE("uniform draws stay in range") {
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.uniform(-0.25, 0.75);
        CHECK(v >= -0.25);
        CHECK(v < 0.75);
    }
}

TEST_CASE("below has no obvious bias and honors the bound") {
    Rng rng(11);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 50000; ++i) counts[rng.below(5)] += 1;
    for (int c : counts) {
        CHECK(c > 9000);
        CHECK(c < 11000);
    }
}

TEST_CASE("normal moments are roughly standard") {
    Rng rng(13);
    const int n = 200000;
    double mean = 0.0, var = 0.0;
    std::vector<double> draws(n);
    for (double& v : draws) {
        v = rng.normal();
        mean += v;
    }
    mean /= n;
    for (double v : draws) var += (v - mean) * (v - mean);
    var /= n;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("gamma moments match shape for small and large shape") {
    Rng rng(17);
    for (double shape : {0.3, 1.0, 4.5}) {
        const int n = 200000;
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += rng.gamma(shape);
        mean /= n;
        // Gamma(shape, 1) has mean = shape.
        CHECK(std::abs(mean - shape) < 0.05 * std::max(1.0, shape));
    }
}

TEST_CASE("dirichlet sums to one and concentrates with large alpha") {
    Rng rng(19);
    const auto p = rng.dirichlet_symmetric(1e6, 8);
    double total = 0.0;
    for (double v : p) {
        total += v;
        CHECK(std::abs(v - 0.125) < 0.01);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("matmul and transpose on a known product") {
    Matrix a(2, 3);
    a(0, 0) = 1; a(0, 1) = 2; a(0, 2) = 3;
    a(1, 0) = 4; a(1, 1) = 5; a(1, 2) = 6;
    Matrix b(3, 2);
    b(0, 0) = 7; b(0, 1) = 8;
    b(1, 0) = 9; b(1, 1) = 10;
    b(2, 0) = 11; b(2, 1) = 12;

    const Matrix c = matmul(a, b);
    CHECK(c(0, 0) == doctest::Approx(58));
    CHECK(c(0, 1) == doctest::Approx(64));
    CHECK(c(1, 0) == doctest::Approx(139));
    CHECK(c(1, 1) == doctest::Approx(154));

    const Matrix at = transpose(a);
    CHECK(at.rows == 3);
    CHECK(at(2, 1) == doctest::Approx(6));
}

TEST_CASE("cholesky solves and rejects indefinite input") {
    Matrix spd(2, 2);
    spd(0, 0) = 4; spd(0, 1) = 1;
    spd(1, 0) = 1; spd(1, 1) = 3;
    const auto chol = cholesky(spd);
    REQUIRE(chol.has_value());
    // det = 11
    CHECK(chol->log_det() == doctest::Approx(std::log(11.0)).epsilon(1e-12));

    const std::vector<double> rhs = {1.0, 2.0};
    const auto x = chol->solve(rhs);
    const auto back = matvec(spd, x);
    CHECK(back[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(back[1] == doctest::Approx(2.0).epsilon(1e-12));

    Matrix indefinite(2, 2);
    indefinite(0, 0) = 1; indefinite(0, 1) = 5;
    indefinite(1, 0) = 5; indefinite(1, 1) = 1;
    CHECK_FALSE(cholesky(indefinite).has_value());
}

TEST_CASE("kronecker product layout") {
    Matrix a(2, 2);
    a(0, 0) = 1; a(0, 1) = 2;
    a(1, 0) = 3; a(1, 1) = 4;
    const Matrix eye = Matrix::identity(2);
    const Matrix k = kronecker_product(a, eye);
    CHECK(k.rows == 4);
    CHECK(k(0, 0) == 1);
    CHECK(k(1, 1) == 1);
    CHECK(k(0, 2) == 2);
    CHECK(k(2, 0) == 3);
    CHECK(k(3, 3) == 4);
    CHECK(k(0, 1) == 0);
}
