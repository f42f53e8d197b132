#include "fedbens/curvature.hpp"

#include <cmath>

#include "fedbens/rng.hpp"
#include "wire.hpp"

namespace fedbens {

namespace {

constexpr std::uint8_t kSectionDiagonal = 0;
constexpr std::uint8_t kSectionDense = 1;
constexpr std::uint8_t kSectionKronecker = 2;

void check_trained_input(const ParamVector& params, const ModelSpec& spec,
                         const Dataset& data, double temperature, const PriorSpec& prior) {
    spec.validate();
    prior.validate();
    if (!(temperature > 0.0))
        throw std::invalid_argument("curvature: temperature must be > 0");
    if (data.count == 0) throw std::invalid_argument("curvature: empty dataset");
    if (params.dim() != param_count(spec))
        throw std::invalid_argument("curvature: params do not match spec");
}

// Accumulates the exact GGN diagonal of the summed (not averaged) negative
// log-likelihood: for every sample and class, the squared class gradient
// weighted by the predictive probability.
std::vector<double> ggn_diagonal_accumulate(const ParamVector& params, const ModelSpec& spec,
                                            const Dataset& data) {
    std::vector<double> acc(params.dim(), 0.0);
    const int num_classes = spec.num_classes();
    for (std::size_t i = 0; i < data.count; ++i) {
        const ForwardTrace trace = forward_trace(params, spec, data.row(i));
        for (int k = 0; k < num_classes; ++k) {
            const double weight = trace.probs[k];
            const auto pg = preact_grads_for_class(params, spec, trace, k);
            for (std::size_t l = 0; l < params.layout.size(); ++l) {
                const LayerBlock& block = params.layout[l];
                const auto& input = trace.inputs[l];
                for (int r = 0; r < block.rows; ++r) {
                    const double gr = pg[l][r];
                    double* dst = acc.data() + block.offset +
                                  static_cast<std::size_t>(r) * block.cols;
                    for (int c = 0; c < block.cols; ++c) {
                        const double g = gr * input[c];
                        dst[c] += weight * g * g;
                    }
                }
            }
        }
    }
    return acc;
}

}  // namespace

std::size_t PrecisionStructure::dim() const {
    std::size_t total = 0;
    for (const auto& block : layout) total += block.size();
    return total;
}

PrecisionStructure ggn_diagonal(const ParamVector& params, const ModelSpec& spec,
                                const Dataset& data, double temperature,
                                const PriorSpec& prior) {
    check_trained_input(params, spec, data, temperature, prior);
    const double inv_temp = 1.0 / temperature;
    const double tau = prior.precision();

    const auto acc = ggn_diagonal_accumulate(params, spec, data);
    DiagonalPrecision diag;
    diag.entries.resize(acc.size());
    for (std::size_t j = 0; j < acc.size(); ++j) diag.entries[j] = inv_temp * acc[j] + tau;

    PrecisionStructure p;
    p.layout = params.layout;
    p.temperature = temperature;
    p.prior_precision = tau;
    p.sample_count = data.count;
    double ld = 0.0;
    for (double v : diag.entries) ld += std::log(v);
    p.log_det = ld;
    p.repr = std::move(diag);
    return p;
}

PrecisionStructure ggn_last_layer_full(const ParamVector& params, const ModelSpec& spec,
                                       const Dataset& data, double temperature,
                                       const PriorSpec& prior) {
    check_trained_input(params, spec, data, temperature, prior);
    const double inv_temp = 1.0 / temperature;
    const double tau = prior.precision();
    const std::size_t last = params.layout.size() - 1;
    const LayerBlock& last_block = params.layout[last];
    const std::size_t d_last = last_block.size();
    const std::size_t d_front = last_block.offset;
    const int num_classes = spec.num_classes();
    const int in1 = last_block.cols;

    std::vector<double> front_acc(d_front, 0.0);
    Matrix block(d_last, d_last);

    for (std::size_t i = 0; i < data.count; ++i) {
        const ForwardTrace trace = forward_trace(params, spec, data.row(i));

        // Front layers: exact diagonal via per-class gradients.
        if (d_front > 0) {
            for (int k = 0; k < num_classes; ++k) {
                const double weight = trace.probs[k];
                const auto pg = preact_grads_for_class(params, spec, trace, k);
                for (std::size_t l = 0; l < last; ++l) {
                    const LayerBlock& lb = params.layout[l];
                    const auto& input = trace.inputs[l];
                    for (int r = 0; r < lb.rows; ++r) {
                        const double gr = pg[l][r];
                        double* dst = front_acc.data() + lb.offset +
                                      static_cast<std::size_t>(r) * lb.cols;
                        for (int c = 0; c < lb.cols; ++c) {
                            const double g = gr * input[c];
                            dst[c] += weight * g * g;
                        }
                    }
                }
            }
        }

        // Last layer: H (x) a a^T with H = diag(pi) - pi pi^T.
        const auto& probs = trace.probs;
        const auto& a = trace.inputs[last];
        for (int k = 0; k < num_classes; ++k) {
            for (int kp = 0; kp < num_classes; ++kp) {
                const double h = (k == kp ? probs[k] * (1.0 - probs[k])
                                          : -probs[k] * probs[kp]);
                if (h == 0.0) continue;
                for (int j = 0; j < in1; ++j) {
                    const double haj = h * a[j];
                    double* dst = &block(static_cast<std::size_t>(k) * in1 + j,
                                         static_cast<std::size_t>(kp) * in1);
                    for (int jp = 0; jp < in1; ++jp) dst[jp] += haj * a[jp];
                }
            }
        }
    }

    DiagLastFullPrecision repr;
    repr.front.resize(d_front);
    for (std::size_t j = 0; j < d_front; ++j) repr.front[j] = inv_temp * front_acc[j] + tau;
    for (std::size_t r = 0; r < d_last; ++r) {
        for (std::size_t c = 0; c < d_last; ++c) {
            block(r, c) = inv_temp * block(r, c) + (r == c ? tau : 0.0);
        }
    }

    const auto chol = cholesky(block);
    if (!chol) throw curvature_error("ggn_last_layer_full: dense block is not positive definite");

    PrecisionStructure p;
    p.layout = params.layout;
    p.temperature = temperature;
    p.prior_precision = tau;
    p.sample_count = data.count;
    double ld = chol->log_det();
    for (double v : repr.front) ld += std::log(v);
    p.log_det = ld;
    repr.last_block = std::move(block);
    p.repr = std::move(repr);
    return p;
}

RawKfacFactors kfac_factors(const ParamVector& params, const ModelSpec& spec,
                            const Dataset& data, const KfacMode& mode) {
    spec.validate();
    if (data.count == 0) throw std::invalid_argument("kfac_factors: empty dataset");
    if (!mode.exact && mode.samples < 1)
        throw std::invalid_argument("kfac_factors: sampled mode needs samples >= 1");

    const std::size_t layers = spec.num_layers();
    const int num_classes = spec.num_classes();
    RawKfacFactors raw;
    raw.sample_count = data.count;
    raw.layers.resize(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        const LayerBlock& block = params.layout[l];
        raw.layers[l].input_factor = Matrix(block.cols, block.cols);
        raw.layers[l].output_factor = Matrix(block.rows, block.rows);
    }

    const double inv_n = 1.0 / static_cast<double>(data.count);
    Rng label_rng(Rng::derive(mode.seed, stream::kKfacSample));

    for (std::size_t i = 0; i < data.count; ++i) {
        const ForwardTrace trace = forward_trace(params, spec, data.row(i));

        for (std::size_t l = 0; l < layers; ++l) {
            auto& a_hat = raw.layers[l].input_factor;
            const auto& input = trace.inputs[l];
            for (std::size_t r = 0; r < a_hat.rows; ++r) {
                const double air = inv_n * input[r];
                for (std::size_t c = 0; c < a_hat.cols; ++c) a_hat(r, c) += air * input[c];
            }
        }

        auto add_outer = [&](int cls, double weight) {
            const auto pg = preact_grads_for_class(params, spec, trace, cls);
            for (std::size_t l = 0; l < layers; ++l) {
                auto& g_hat = raw.layers[l].output_factor;
                const auto& g = pg[l];
                for (std::size_t r = 0; r < g_hat.rows; ++r) {
                    const double wr = weight * g[r];
                    for (std::size_t c = 0; c < g_hat.cols; ++c) g_hat(r, c) += wr * g[c];
                }
            }
        };

        if (mode.exact) {
            for (int k = 0; k < num_classes; ++k) add_outer(k, inv_n * trace.probs[k]);
        } else {
            const double w = inv_n / static_cast<double>(mode.samples);
            for (int s = 0; s < mode.samples; ++s) {
                // Inverse-CDF draw from the predictive distribution.
                const double u = label_rng.next_double();
                double cum = 0.0;
                int cls = num_classes - 1;
                for (int k = 0; k < num_classes; ++k) {
                    cum += trace.probs[k];
                    if (u < cum) {
                        cls = k;
                        break;
                    }
                }
                add_outer(cls, w);
            }
        }
    }
    return raw;
}

PrecisionStructure assemble_kronecker(const RawKfacFactors& raw, const ModelSpec& spec,
                                      double temperature, const PriorSpec& prior) {
    prior.validate();
    if (!(temperature > 0.0))
        throw std::invalid_argument("assemble_kronecker: temperature must be > 0");
    const double scale = std::sqrt(static_cast<double>(raw.sample_count) / temperature);
    const double damping = std::sqrt(prior.precision());

    KroneckerPrecision repr;
    repr.layers.resize(raw.layers.size());
    double ld = 0.0;
    for (std::size_t l = 0; l < raw.layers.size(); ++l) {
        Matrix a = raw.layers[l].input_factor;
        Matrix g = raw.layers[l].output_factor;
        for (std::size_t r = 0; r < a.rows; ++r)
            for (std::size_t c = 0; c < a.cols; ++c)
                a(r, c) = scale * a(r, c) + (r == c ? damping : 0.0);
        for (std::size_t r = 0; r < g.rows; ++r)
            for (std::size_t c = 0; c < g.cols; ++c)
                g(r, c) = scale * g(r, c) + (r == c ? damping : 0.0);

        const auto chol_a = cholesky(a);
        const auto chol_g = cholesky(g);
        if (!chol_a || !chol_g)
            throw curvature_error("assemble_kronecker: factor not positive definite at layer " +
                                  std::to_string(l));
        // logdet(A (x) G) = out * logdet A + (in+1) * logdet G
        ld += static_cast<double>(g.rows) * chol_a->log_det() +
              static_cast<double>(a.rows) * chol_g->log_det();
        repr.layers[l].input_factor = std::move(a);
        repr.layers[l].output_factor = std::move(g);
    }

    PrecisionStructure p;
    p.layout = make_layout(spec);
    if (p.layout.size() != repr.layers.size())
        throw std::invalid_argument("assemble_kronecker: factor count does not match spec");
    p.temperature = temperature;
    p.prior_precision = prior.precision();
    p.sample_count = raw.sample_count;
    p.log_det = ld;
    p.repr = std::move(repr);
    return p;
}

double log_det(const PrecisionStructure& p) { return p.log_det; }

double recompute_log_det(const PrecisionStructure& p) {
    return std::visit(
        [&](const auto& repr) -> double {
            using T = std::decay_t<decltype(repr)>;
            if constexpr (std::is_same_v<T, DiagonalPrecision>) {
                double ld = 0.0;
                for (double v : repr.entries) ld += std::log(v);
                return ld;
            } else if constexpr (std::is_same_v<T, DiagLastFullPrecision>) {
                const auto chol = cholesky(repr.last_block);
                if (!chol)
                    throw curvature_error("log_det: dense block is not positive definite");
                double ld = chol->log_det();
                for (double v : repr.front) ld += std::log(v);
                return ld;
            } else {
                double ld = 0.0;
                for (const auto& pair : repr.layers) {
                    const auto chol_a = cholesky(pair.input_factor);
                    const auto chol_g = cholesky(pair.output_factor);
                    if (!chol_a || !chol_g)
                        throw curvature_error("log_det: factor not positive definite");
                    ld += static_cast<double>(pair.output_factor.rows) * chol_a->log_det() +
                          static_cast<double>(pair.input_factor.rows) * chol_g->log_det();
                }
                return ld;
            }
        },
        p.repr);
}

std::vector<double> mat_vec(const PrecisionStructure& p, std::span<const double> v) {
    if (v.size() != p.dim()) throw std::invalid_argument("mat_vec: dimension mismatch");
    std::vector<double> out(v.size(), 0.0);

    std::visit(
        [&](const auto& repr) {
            using T = std::decay_t<decltype(repr)>;
            if constexpr (std::is_same_v<T, DiagonalPrecision>) {
                for (std::size_t j = 0; j < v.size(); ++j) out[j] = repr.entries[j] * v[j];
            } else if constexpr (std::is_same_v<T, DiagLastFullPrecision>) {
                const std::size_t d_front = repr.front.size();
                for (std::size_t j = 0; j < d_front; ++j) out[j] = repr.front[j] * v[j];
                const std::size_t d_last = repr.last_block.rows;
                for (std::size_t r = 0; r < d_last; ++r) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < d_last; ++c)
                        acc += repr.last_block(r, c) * v[d_front + c];
                    out[d_front + r] = acc;
                }
            } else {
                // Per layer: out = vec(G * dW * A), dW row-major out_l x (in_l+1).
                for (std::size_t l = 0; l < repr.layers.size(); ++l) {
                    const LayerBlock& block = p.layout[l];
                    const Matrix& a = repr.layers[l].input_factor;
                    const Matrix& g = repr.layers[l].output_factor;
                    const std::size_t rows = block.rows, cols = block.cols;
                    // tmp = G * dW
                    Matrix tmp(rows, cols);
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t k = 0; k < rows; ++k) {
                            const double grk = g(r, k);
                            if (grk == 0.0) continue;
                            const double* wrow = v.data() + block.offset + k * cols;
                            for (std::size_t c = 0; c < cols; ++c) tmp(r, c) += grk * wrow[c];
                        }
                    }
                    // out = tmp * A
                    for (std::size_t r = 0; r < rows; ++r) {
                        double* dst = out.data() + block.offset + r * cols;
                        for (std::size_t c = 0; c < cols; ++c) {
                            double acc = 0.0;
                            for (std::size_t k = 0; k < cols; ++k) acc += tmp(r, k) * a(k, c);
                            dst[c] = acc;
                        }
                    }
                }
            }
        },
        p.repr);
    return out;
}

double quadratic_form(const PrecisionStructure& p, std::span<const double> v) {
    const auto mv = mat_vec(p, v);
    double acc = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) acc += v[j] * mv[j];
    return acc;
}

namespace {

void put_section(std::vector<std::uint8_t>& out, std::uint8_t tag, std::uint32_t rows,
                 std::uint32_t cols, std::span<const double> payload) {
    const std::uint64_t body = 1 + 4 + 4 + payload.size() * 8;
    wire::put_u64(out, body);
    wire::put_u8(out, tag);
    wire::put_u32(out, rows);
    wire::put_u32(out, cols);
    for (double v : payload) wire::put_f64(out, v);
}

}  // namespace

void serialize_precision(const PrecisionStructure& p, std::vector<std::uint8_t>& out) {
    wire::put_u8(out, static_cast<std::uint8_t>(p.kind()));
    wire::put_f64(out, p.temperature);
    wire::put_f64(out, p.prior_precision);
    wire::put_u64(out, p.sample_count);
    wire::put_f64(out, p.log_det);
    wire::put_u32(out, static_cast<std::uint32_t>(p.layout.size()));

    std::visit(
        [&](const auto& repr) {
            using T = std::decay_t<decltype(repr)>;
            if constexpr (std::is_same_v<T, DiagonalPrecision>) {
                for (const auto& block : p.layout) {
                    put_section(out, kSectionDiagonal, block.rows, block.cols,
                                {repr.entries.data() + block.offset, block.size()});
                }
            } else if constexpr (std::is_same_v<T, DiagLastFullPrecision>) {
                for (std::size_t l = 0; l + 1 < p.layout.size(); ++l) {
                    const auto& block = p.layout[l];
                    put_section(out, kSectionDiagonal, block.rows, block.cols,
                                {repr.front.data() + block.offset, block.size()});
                }
                const auto& block = p.layout.back();
                put_section(out, kSectionDense, block.rows, block.cols,
                            repr.last_block.data);
            } else {
                for (std::size_t l = 0; l < p.layout.size(); ++l) {
                    const auto& block = p.layout[l];
                    const auto& pair = repr.layers[l];
                    std::vector<double> payload;
                    payload.reserve(pair.input_factor.data.size() +
                                    pair.output_factor.data.size());
                    payload.insert(payload.end(), pair.input_factor.data.begin(),
                                   pair.input_factor.data.end());
                    payload.insert(payload.end(), pair.output_factor.data.begin(),
                                   pair.output_factor.data.end());
                    put_section(out, kSectionKronecker, block.rows, block.cols, payload);
                }
            }
        },
        p.repr);
}

std::size_t serialized_precision_size(const PrecisionStructure& p) {
    // kind + (T, tau, N, log_det) + layer count
    std::size_t total = 1 + 8 + 8 + 8 + 8 + 4;
    for (const auto& block : p.layout) {
        total += 8 + 1 + 4 + 4;  // section length + tag + dims
        switch (p.kind()) {
            case HessianKind::kDiagonal:
                total += block.size() * 8;
                break;
            case HessianKind::kDiagLastFull:
                if (&block == &p.layout.back())
                    total += block.size() * block.size() * 8;
                else
                    total += block.size() * 8;
                break;
            case HessianKind::kKronecker:
                total += (static_cast<std::size_t>(block.cols) * block.cols +
                          static_cast<std::size_t>(block.rows) * block.rows) *
                         8;
                break;
        }
    }
    return total;
}

PrecisionStructure deserialize_precision(std::span<const std::uint8_t> bytes,
                                         std::size_t& offset) {
    wire::Reader r{bytes, offset};
    PrecisionStructure p;
    const std::uint8_t kind = r.u8();
    if (kind > 2) throw std::runtime_error("precision payload: unknown kind tag");
    p.temperature = r.f64();
    p.prior_precision = r.f64();
    p.sample_count = r.u64();
    p.log_det = r.f64();
    const std::uint32_t layers = r.u32();
    if (layers == 0) throw std::runtime_error("precision payload: zero layers");

    p.layout.resize(layers);
    std::size_t param_offset = 0;

    DiagonalPrecision diag;
    DiagLastFullPrecision last_full;
    KroneckerPrecision kron;

    for (std::uint32_t l = 0; l < layers; ++l) {
        const std::uint64_t body = r.u64();
        const std::size_t section_start = r.pos;
        const std::uint8_t tag = r.u8();
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        if (rows == 0 || cols == 0)
            throw std::runtime_error("precision payload: zero-sized layer");

        LayerBlock block;
        block.offset = param_offset;
        block.rows = static_cast<int>(rows);
        block.cols = static_cast<int>(cols);
        p.layout[l] = block;
        param_offset += block.size();

        const bool is_last = (l + 1 == layers);
        if (kind == 0) {
            if (tag != kSectionDiagonal)
                throw std::runtime_error("precision payload: diagonal structure with bad tag");
            for (std::size_t j = 0; j < block.size(); ++j) diag.entries.push_back(r.f64());
        } else if (kind == 1) {
            if (!is_last) {
                if (tag != kSectionDiagonal)
                    throw std::runtime_error("precision payload: expected diagonal section");
                for (std::size_t j = 0; j < block.size(); ++j)
                    last_full.front.push_back(r.f64());
            } else {
                if (tag != kSectionDense)
                    throw std::runtime_error("precision payload: expected dense section");
                const std::size_t d_last = block.size();
                last_full.last_block = Matrix(d_last, d_last);
                for (double& v : last_full.last_block.data) v = r.f64();
            }
        } else {
            if (tag != kSectionKronecker)
                throw std::runtime_error("precision payload: expected kronecker section");
            KroneckerPrecision::LayerPair pair;
            pair.input_factor = Matrix(cols, cols);
            pair.output_factor = Matrix(rows, rows);
            for (double& v : pair.input_factor.data) v = r.f64();
            for (double& v : pair.output_factor.data) v = r.f64();
            kron.layers.push_back(std::move(pair));
        }
        if (r.pos - section_start != body)
            throw std::runtime_error("precision payload: section length mismatch");
    }

    if (kind == 0) p.repr = std::move(diag);
    else if (kind == 1) p.repr = std::move(last_full);
    else p.repr = std::move(kron);

    offset = r.pos;
    return p;
}

}  // namespace fedbens
