#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedbens/data.hpp"

namespace fedbens {

enum class Activation { kRelu, kTanh };

// Dense feedforward classifier: layer_dims = {input, hidden..., classes}.
// A two-entry vector is a single linear layer. Hidden layers share one
// activation; the output is always a softmax.
struct ModelSpec {
    std::vector<int> layer_dims;
    Activation activation = Activation::kRelu;

    int input_dim() const { return layer_dims.front(); }
    int num_classes() const { return layer_dims.back(); }
    std::size_t num_layers() const { return layer_dims.size() - 1; }
    void validate() const;
};

// Flat-index block of one layer inside a ParamVector. Weights are row-major
// out_dim x (in_dim + 1); the last column is the bias. This layout is the
// single convention every module (gradients, curvature, serialization)
// agrees on.
struct LayerBlock {
    std::size_t offset = 0;
    int rows = 0;  // out_dim
    int cols = 0;  // in_dim + 1
    std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

std::vector<LayerBlock> make_layout(const ModelSpec& spec);
std::size_t param_count(const ModelSpec& spec);

struct ParamVector {
    std::vector<double> values;
    std::vector<LayerBlock> layout;

    std::size_t dim() const { return values.size(); }
    double* layer(std::size_t l) { return values.data() + layout[l].offset; }
    const double* layer(std::size_t l) const { return values.data() + layout[l].offset; }
};

ParamVector zeros_like(const ModelSpec& spec);

// PyTorch-style fan-in init: every weight and bias of layer l drawn
// uniformly from [-1/sqrt(in_l), 1/sqrt(in_l)].
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

// Softmax class probabilities for one input.
std::vector<double> forward(const ParamVector& params, const ModelSpec& spec,
                            std::span<const double> x);

// Everything the backward passes need from one forward evaluation.
struct ForwardTrace {
    // inputs[l]: bias-augmented input to layer l, length in_l + 1 (last entry 1).
    std::vector<std::vector<double>> inputs;
    // preacts[l]: W_l * inputs[l], length out_l (before activation).
    std::vector<std::vector<double>> preacts;
    std::vector<double> probs;  // softmax of the final pre-activations
};

ForwardTrace forward_trace(const ParamVector& params, const ModelSpec& spec,
                           std::span<const double> x);

// Gradients of -log p(cls | x) with respect to every layer's pre-activations,
// outermost layer last. This is the building block for parameter gradients
// and for all curvature estimates.
std::vector<std::vector<double>> preact_grads_for_class(const ParamVector& params,
                                                        const ModelSpec& spec,
                                                        const ForwardTrace& trace, int cls);

// grad += scale * dLoss/dparams, given the per-layer pre-activation grads.
void accumulate_param_grad(const ModelSpec& spec, const ForwardTrace& trace,
                           const std::vector<std::vector<double>>& preact_grads,
                           double scale, ParamVector& grad);

// Full parameter gradient of -log p(cls | x).
ParamVector class_gradient(const ParamVector& params, const ModelSpec& spec,
                           const ForwardTrace& trace, int cls);

// Mean cross-entropy over the given rows plus its exact gradient.
struct LossGrad {
    double loss = 0.0;
    ParamVector grad;
};
LossGrad loss_and_grad(const ParamVector& params, const ModelSpec& spec, const Dataset& data,
                       std::span<const std::size_t> rows);
LossGrad loss_and_grad(const ParamVector& params, const ModelSpec& spec, const Dataset& data);

double mean_loss(const ParamVector& params, const ModelSpec& spec, const Dataset& data);
double accuracy(const ParamVector& params, const ModelSpec& spec, const Dataset& data);

// Minibatch SGD with momentum, reshuffling every epoch from `seed`.
// Returns the last iterate.
ParamVector train_sgd(const ParamVector& start, const ModelSpec& spec, const Dataset& data,
                      int epochs, double lr, double momentum, int batch_size,
                      std::uint64_t seed);

struct AdamParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    enum class Kind { kSgdMomentum, kAdam };
    Kind kind = Kind::kAdam;
    AdamParams adam;
    double sgd_lr = 0.0;
    double sgd_momentum = 0.0;
    std::vector<double> first_moment;   // momentum buffer / Adam m
    std::vector<double> second_moment;  // Adam v
    std::uint64_t step = 0;

    static OptimizerState make_adam(std::size_t dim, AdamParams p);
    static OptimizerState make_sgd(std::size_t dim, double lr, double momentum);
};

// One bias-corrected Adam update, in place.
void adam_step(OptimizerState& state, std::vector<double>& params,
               std::span<const double> grad);

}  // namespace fedbens
