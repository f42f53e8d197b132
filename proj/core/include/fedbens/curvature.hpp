#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "fedbens/linalg.hpp"
#include "fedbens/model.hpp"

namespace fedbens {

struct curvature_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Zero-mean isotropic Gaussian prior N(0, variance * I).
struct PriorSpec {
    double variance = 0.1;
    double precision() const { return 1.0 / variance; }
    void validate() const {
        if (!(variance > 0.0)) throw std::invalid_argument("PriorSpec: variance must be > 0");
    }
};

enum class HessianKind { kDiagonal, kDiagLastFull, kKronecker };

struct DiagonalPrecision {
    std::vector<double> entries;  // length d, all >= prior precision
};

struct DiagLastFullPrecision {
    std::vector<double> front;  // diagonal for every parameter before the last layer
    Matrix last_block;          // dense SPD block for the last layer
};

struct KroneckerPrecision {
    struct LayerPair {
        Matrix input_factor;   // A_l, (in_l+1) x (in_l+1)
        Matrix output_factor;  // G_l, out_l x out_l
    };
    std::vector<LayerPair> layers;
};

// Curvature of one Laplace component. The layer layout rides along so the
// Kronecker and last-layer representations know how flat indices map to
// weight matrices. The per-layer Kronecker action is
//   mat_vec(v)|layer = vec(G_l * dW * A_l),  dW = reshape(v|layer)
// with the same row-major reshape used by ParamVector.
struct PrecisionStructure {
    std::variant<DiagonalPrecision, DiagLastFullPrecision, KroneckerPrecision> repr;
    std::vector<LayerBlock> layout;
    double log_det = 0.0;
    double temperature = 1.0;
    double prior_precision = 0.0;
    std::uint64_t sample_count = 0;

    HessianKind kind() const {
        return static_cast<HessianKind>(repr.index());
    }
    std::size_t dim() const;
};

// Exact GGN diagonal (K class-gradient passes per sample), scaled by 1/T,
// plus the prior precision on every entry.
PrecisionStructure ggn_diagonal(const ParamVector& params, const ModelSpec& spec,
                                const Dataset& data, double temperature,
                                const PriorSpec& prior);

// GGN diagonal everywhere except the last layer, which gets its dense block
// B[(k,j),(k',j')] = (1/T) sum_i H_i[k,k'] a_i[j] a_i[j'] + tau * I.
PrecisionStructure ggn_last_layer_full(const ParamVector& params, const ModelSpec& spec,
                                       const Dataset& data, double temperature,
                                       const PriorSpec& prior);

// How the label expectation inside the Fisher is taken.
struct KfacMode {
    bool exact = true;
    int samples = 0;
    std::uint64_t seed = 0;

    static KfacMode exact_classes() { return {true, 0, 0}; }
    static KfacMode sampled(int samples, std::uint64_t seed) { return {false, samples, seed}; }
};

// Per-layer second-moment factors before damping:
//   A_hat_l = (1/N) sum_i a_l a_l^T       (bias-augmented layer inputs)
//   G_hat_l = (1/N) sum_i E_y[g_l g_l^T]  (pre-activation grads, y ~ model)
struct RawKfacFactors {
    std::vector<KroneckerPrecision::LayerPair> layers;
    std::uint64_t sample_count = 0;
};

RawKfacFactors kfac_factors(const ParamVector& params, const ModelSpec& spec,
                            const Dataset& data, const KfacMode& mode);

// Factored damping: A_l = sqrt(N/T) A_hat + sqrt(tau) I and likewise G_l, so
// A_l (x) G_l approximates (N/T) Fisher + tau I while staying a Kronecker
// product. Caches log_det = sum_l out_l logdet A_l + (in_l+1) logdet G_l.
PrecisionStructure assemble_kronecker(const RawKfacFactors& raw, const ModelSpec& spec,
                                      double temperature, const PriorSpec& prior);

// Cached log-determinant.
double log_det(const PrecisionStructure& p);
// Recomputation from the representation (factorizes dense blocks / factors).
double recompute_log_det(const PrecisionStructure& p);

std::vector<double> mat_vec(const PrecisionStructure& p, std::span<const double> v);
double quadratic_form(const PrecisionStructure& p, std::span<const double> v);

// Wire encoding: little-endian, one length-prefixed section per layer
// (tag byte + dims + row-major f64 payload). See serialize.cpp for layout.
void serialize_precision(const PrecisionStructure& p, std::vector<std::uint8_t>& out);
PrecisionStructure deserialize_precision(std::span<const std::uint8_t> bytes,
                                         std::size_t& offset);
// Exact encoded size, used by the communication-cost accounting.
std::size_t serialized_precision_size(const PrecisionStructure& p);

}  // namespace fedbens
