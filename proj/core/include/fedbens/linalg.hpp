#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace fedbens {

// Dense row-major matrix. Sized for the problems in this project: Kronecker
// factors, last-layer Hessian blocks and brute-force oracles (d <= a few
// hundred), so plain triple loops are fine.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    static Matrix identity(std::size_t n);
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
std::vector<double> matvec(const Matrix& a, std::span<const double> v);

// Kronecker product (used only by the dense oracles).
Matrix kronecker_product(const Matrix& a, const Matrix& b);

double frobenius_norm(const Matrix& a);

// Cholesky factorization of a symmetric positive definite matrix.
// Factorization failure is how the project detects non-PD matrices, so
// this returns nullopt instead of throwing.
struct CholeskyFactor {
    Matrix lower;  // L with A = L L^T

    double log_det() const;  // log det A = 2 sum log L_ii
    std::vector<double> solve(std::span<const double> rhs) const;
};

std::optional<CholeskyFactor> cholesky(const Matrix& a);

}  // namespace fedbens
