#include "fedbens/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fedbens/rng.hpp"

namespace fedbens {

namespace {

double activate(double z, Activation act) {
    return act == Activation::kRelu ? std::max(0.0, z) : std::tanh(z);
}

// Derivative expressed in whatever is cheapest: relu from the pre-activation,
// tanh from the activated value.
double activate_derivative(double z, double a, Activation act) {
    return act == Activation::kRelu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - a * a;
}

void softmax_inplace(std::vector<double>& logits) {
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double& v : logits) {
        v = std::exp(v - max_logit);
        total += v;
    }
    for (double& v : logits) v /= total;
}

}  // namespace

void ModelSpec::validate() const {
    if (layer_dims.size() < 2)
        throw std::invalid_argument("ModelSpec: need at least input and output dims");
    for (int d : layer_dims) {
        if (d < 1) throw std::invalid_argument("ModelSpec: all dims must be >= 1");
    }
}

std::vector<LayerBlock> make_layout(const ModelSpec& spec) {
    spec.validate();
    std::vector<LayerBlock> layout;
    layout.reserve(spec.num_layers());
    std::size_t offset = 0;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        LayerBlock block;
        block.offset = offset;
        block.rows = spec.layer_dims[l + 1];
        block.cols = spec.layer_dims[l] + 1;
        offset += block.size();
        layout.push_back(block);
    }
    return layout;
}

std::size_t param_count(const ModelSpec& spec) {
    std::size_t total = 0;
    for (const auto& block : make_layout(spec)) total += block.size();
    return total;
}

ParamVector zeros_like(const ModelSpec& spec) {
    ParamVector p;
    p.layout = make_layout(spec);
    p.values.assign(param_count(spec), 0.0);
    return p;
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
    ParamVector p = zeros_like(spec);
    Rng rng(Rng::derive(seed, stream::kInit));
    for (std::size_t l = 0; l < p.layout.size(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.layer_dims[l]));
        double* w = p.layer(l);
        const std::size_t n = p.layout[l].size();
        for (std::size_t i = 0; i < n; ++i) w[i] = rng.uniform(-bound, bound);
    }
    return p;
}

ForwardTrace forward_trace(const ParamVector& params, const ModelSpec& spec,
                           std::span<const double> x) {
    if (x.size() != static_cast<std::size_t>(spec.input_dim()))
        throw std::invalid_argument("forward: input dimension mismatch");

    const std::size_t layers = spec.num_layers();
    ForwardTrace trace;
    trace.inputs.resize(layers);
    trace.preacts.resize(layers);

    std::vector<double> current(x.begin(), x.end());
    for (std::size_t l = 0; l < layers; ++l) {
        auto& input = trace.inputs[l];
        input.assign(current.begin(), current.end());
        input.push_back(1.0);  // bias input

        const LayerBlock& block = params.layout[l];
        auto& preact = trace.preacts[l];
        preact.assign(block.rows, 0.0);
        const double* w = params.layer(l);
        for (int r = 0; r < block.rows; ++r) {
            const double* wr = w + static_cast<std::size_t>(r) * block.cols;
            double acc = 0.0;
            for (int c = 0; c < block.cols; ++c) acc += wr[c] * input[c];
            preact[r] = acc;
        }

        if (l + 1 < layers) {
            current.assign(preact.size(), 0.0);
            for (std::size_t i = 0; i < preact.size(); ++i)
                current[i] = activate(preact[i], spec.activation);
        }
    }
    trace.probs = trace.preacts.back();
    softmax_inplace(trace.probs);
    return trace;
}

std::vector<double> forward(const ParamVector& params, const ModelSpec& spec,
                            std::span<const double> x) {
    return forward_trace(params, spec, x).probs;
}

std::vector<std::vector<double>> preact_grads_for_class(const ParamVector& params,
                                                        const ModelSpec& spec,
                                                        const ForwardTrace& trace, int cls) {
    const std::size_t layers = spec.num_layers();
    std::vector<std::vector<double>> grads(layers);

    // d(-log p(cls))/dlogits = probs - onehot(cls)
    grads[layers - 1] = trace.probs;
    grads[layers - 1][cls] -= 1.0;

    for (std::size_t l = layers - 1; l > 0; --l) {
        const LayerBlock& block = params.layout[l];
        const double* w = params.layer(l);
        const auto& upstream = grads[l];
        const auto& preact = trace.preacts[l - 1];

        auto& down = grads[l - 1];
        down.assign(preact.size(), 0.0);
        // Through W_l (bias column does not feed back) then the activation.
        for (std::size_t j = 0; j < preact.size(); ++j) {
            double acc = 0.0;
            for (int r = 0; r < block.rows; ++r) {
                acc += w[static_cast<std::size_t>(r) * block.cols + j] * upstream[r];
            }
            const double a = trace.inputs[l][j];  // activated value feeding layer l
            down[j] = acc * activate_derivative(preact[j], a, spec.activation);
        }
    }
    return grads;
}

void accumulate_param_grad(const ModelSpec& spec, const ForwardTrace& trace,
                           const std::vector<std::vector<double>>& preact_grads,
                           double scale, ParamVector& grad) {
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const LayerBlock& block = grad.layout[l];
        double* g = grad.layer(l);
        const auto& pg = preact_grads[l];
        const auto& input = trace.inputs[l];
        for (int r = 0; r < block.rows; ++r) {
            const double coef = scale * pg[r];
            double* gr = g + static_cast<std::size_t>(r) * block.cols;
            for (int c = 0; c < block.cols; ++c) gr[c] += coef * input[c];
        }
    }
}

ParamVector class_gradient(const ParamVector& params, const ModelSpec& spec,
                           const ForwardTrace& trace, int cls) {
    ParamVector grad = zeros_like(spec);
    const auto pg = preact_grads_for_class(params, spec, trace, cls);
    accumulate_param_grad(spec, trace, pg, 1.0, grad);
    return grad;
}

LossGrad loss_and_grad(const ParamVector& params, const ModelSpec& spec, const Dataset& data,
                       std::span<const std::size_t> rows) {
    if (rows.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
    const int num_classes = spec.num_classes();
    LossGrad out;
    out.grad = zeros_like(spec);
    const double inv_batch = 1.0 / static_cast<double>(rows.size());

    for (std::size_t r : rows) {
        const int label = data.labels[r];
        if (label < 0 || label >= num_classes)
            throw std::invalid_argument("loss_and_grad: label outside [0, num_classes)");
        const ForwardTrace trace = forward_trace(params, spec, data.row(r));
        out.loss += -std::log(trace.probs[label]) * inv_batch;
        const auto pg = preact_grads_for_class(params, spec, trace, label);
        accumulate_param_grad(spec, trace, pg, inv_batch, out.grad);
    }
    return out;
}

LossGrad loss_and_grad(const ParamVector& params, const ModelSpec& spec, const Dataset& data) {
    std::vector<std::size_t> rows(data.count);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return loss_and_grad(params, spec, data, rows);
}

double mean_loss(const ParamVector& params, const ModelSpec& spec, const Dataset& data) {
    double total = 0.0;
    for (std::size_t i = 0; i < data.count; ++i) {
        const auto probs = forward(params, spec, data.row(i));
        total += -std::log(probs[data.labels[i]]);
    }
    return total / static_cast<double>(data.count);
}

double accuracy(const ParamVector& params, const ModelSpec& spec, const Dataset& data) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.count; ++i) {
        const auto probs = forward(params, spec, data.row(i));
        const std::size_t pred =
            std::max_element(probs.begin(), probs.end()) - probs.begin();
        if (static_cast<int>(pred) == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.count);
}

ParamVector train_sgd(const ParamVector& start, const ModelSpec& spec, const Dataset& data,
                      int epochs, double lr, double momentum, int batch_size,
                      std::uint64_t seed) {
    if (data.count == 0) throw std::invalid_argument("train_sgd: empty dataset");
    if (batch_size < 1) throw std::invalid_argument("train_sgd: batch_size must be >= 1");

    ParamVector params = start;
    std::vector<double> velocity(params.dim(), 0.0);
    std::vector<std::size_t> order(data.count);
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng rng(Rng::derive(seed, stream::kClientTrain, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
        for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
            const std::size_t end = std::min(order.size(), begin + batch_size);
            const std::span<const std::size_t> batch(order.data() + begin, end - begin);
            const LossGrad lg = loss_and_grad(params, spec, data, batch);
            for (std::size_t j = 0; j < params.dim(); ++j) {
                velocity[j] = momentum * velocity[j] + lg.grad.values[j];
                params.values[j] -= lr * velocity[j];
            }
        }
    }
    return params;
}

OptimizerState OptimizerState::make_adam(std::size_t dim, AdamParams p) {
    OptimizerState s;
    s.kind = Kind::kAdam;
    s.adam = p;
    s.first_moment.assign(dim, 0.0);
    s.second_moment.assign(dim, 0.0);
    return s;
}

OptimizerState OptimizerState::make_sgd(std::size_t dim, double lr, double momentum) {
    OptimizerState s;
    s.kind = Kind::kSgdMomentum;
    s.sgd_lr = lr;
    s.sgd_momentum = momentum;
    s.first_moment.assign(dim, 0.0);
    return s;
}

void adam_step(OptimizerState& state, std::vector<double>& params,
               std::span<const double> grad) {
    if (state.kind != OptimizerState::Kind::kAdam)
        throw std::invalid_argument("adam_step: state is not an Adam state");
    if (params.size() != grad.size() || params.size() != state.first_moment.size())
        throw std::invalid_argument("adam_step: size mismatch");

    state.step += 1;
    const AdamParams& p = state.adam;
    const double bias1 = 1.0 - std::pow(p.beta1, static_cast<double>(state.step));
    const double bias2 = 1.0 - std::pow(p.beta2, static_cast<double>(state.step));
    for (std::size_t j = 0; j < params.size(); ++j) {
        state.first_moment[j] = p.beta1 * state.first_moment[j] + (1.0 - p.beta1) * grad[j];
        state.second_moment[j] =
            p.beta2 * state.second_moment[j] + (1.0 - p.beta2) * grad[j] * grad[j];
        const double m_hat = state.first_moment[j] / bias1;
        const double v_hat = state.second_moment[j] / bias2;
        params[j] -= p.lr * m_hat / (std::sqrt(v_hat) + p.epsilon);
    }
}

}  // namespace fedbens
