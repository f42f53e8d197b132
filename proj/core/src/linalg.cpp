#include "fedbens/linalg.hpp"

#include <cmath>
#include <stdexcept>

namespace fedbens {

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: shape mismatch");
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols; ++j) {
                out(i, j) += aik * b(k, j);
            }
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
    return out;
}

std::vector<double> matvec(const Matrix& a, std::span<const double> v) {
    if (a.cols != v.size()) throw std::invalid_argument("matvec: shape mismatch");
    std::vector<double> out(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) acc += a(i, j) * v[j];
        out[i] = acc;
    }
    return out;
}

Matrix kronecker_product(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows * b.rows, a.cols * b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) {
            const double aij = a(i, j);
            for (std::size_t k = 0; k < b.rows; ++k)
                for (std::size_t l = 0; l < b.cols; ++l)
                    out(i * b.rows + k, j * b.cols + l) = aij * b(k, l);
        }
    return out;
}

double frobenius_norm(const Matrix& a) {
    double acc = 0.0;
    for (double v : a.data) acc += v * v;
    return std::sqrt(acc);
}

double CholeskyFactor::log_det() const {
    double acc = 0.0;
    for (std::size_t i = 0; i < lower.rows; ++i) acc += std::log(lower(i, i));
    return 2.0 * acc;
}

std::vector<double> CholeskyFactor::solve(std::span<const double> rhs) const {
    const std::size_t n = lower.rows;
    if (rhs.size() != n) throw std::invalid_argument("CholeskyFactor::solve: size mismatch");
    // Forward substitution L y = rhs
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = rhs[i];
        for (std::size_t j = 0; j < i; ++j) acc -= lower(i, j) * y[j];
        y[i] = acc / lower(i, i);
    }
    // Back substitution L^T x = y
    std::vector<double> x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double acc = y[ii];
        for (std::size_t j = ii + 1; j < n; ++j) acc -= lower(j, ii) * x[j];
        x[ii] = acc / lower(ii, ii);
    }
    return x;
}

std::optional<CholeskyFactor> cholesky(const Matrix& a) {
    if (a.rows != a.cols) return std::nullopt;
    const std::size_t n = a.rows;
    Matrix l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double acc = a(i, j);
            for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
            if (i == j) {
                if (!(acc > 0.0) || !std::isfinite(acc)) return std::nullopt;
                l(i, i) = std::sqrt(acc);
            } else {
                l(i, j) = acc / l(j, j);
            }
        }
    }
    return CholeskyFactor{std::move(l)};
}

}  // namespace fedbens
