#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedbens/curvature.hpp"
#include "fedbens/data.hpp"
#include "fedbens/model.hpp"
#include "fedbens/posterior.hpp"

namespace fedbens {

// Everything one federated run needs beyond the dataset and model.
struct FedConfig {
    int mixtures = 3;
    int clients = 5;
    double alpha = 0.1;  // Dirichlet heterogeneity
    int validation_samples = 500;
    NormalizeMode normalize_mode = NormalizeMode::kPerFeatureStandardize;

    int client_epochs = 20;
    double client_lr = 0.01;
    double client_momentum = 0.9;
    int batch_size = 64;

    int server_steps = 300;
    int eval_every = 30;
    AdamParams server_adam;  // lr defaults to 1e-3

    double temperature = 0.1;
    double prior_variance = 0.1;
    HessianKind hessian = HessianKind::kKronecker;
    int kfac_samples = 1000;  // label draws when num_classes > 16

    bool baseline_fedavg = true;
    bool baseline_fisher_merge = true;

    std::uint64_t seed = 0;
    int threads = 1;

    void validate() const;
};

// What one client sends to the server: M (mean, precision) pairs plus its
// sample count. This is the complete one-round payload.
struct ClientMessage {
    std::uint32_t client_id = 0;
    std::uint64_t sample_count = 0;
    std::vector<std::pair<ParamVector, PrecisionStructure>> components;
};

// Wire format: "FBEN" magic, u16 version, u32 client id, u16 M, u64 d,
// u64 N_c, then M records of (d f64 mean, precision payload); little-endian.
std::vector<std::uint8_t> serialize_message(const ClientMessage& msg);
ClientMessage deserialize_message(std::span<const std::uint8_t> bytes);
std::size_t serialized_message_size(const ClientMessage& msg);

// Server draws M starting points once; every client gets the same list.
std::vector<ParamVector> broadcast_inits(const ModelSpec& spec, int mixtures,
                                         std::uint64_t seed);

// Trains each mixture component from its broadcast init on this client's
// data, then fits the Laplace precision at the result.
ClientMessage client_training(const std::vector<ParamVector>& inits, const Dataset& data,
                              const ModelSpec& spec, const FedConfig& cfg,
                              std::uint32_t client_id);

// Coordinate-wise median across clients, separately per mixture index.
// Even client counts average the two middle values.
std::vector<ParamVector> median_init(const std::vector<ClientMessage>& messages);

GlobalObjective build_global_objective(const std::vector<ClientMessage>& messages,
                                       const PriorSpec& prior);

// Adam on the fused negative log posterior, independently per mixture start,
// with validation-accuracy checkpointing every eval_every steps (plus step 0
// and the final step). Ties keep the earliest checkpoint.
std::vector<ParamVector> server_training(const std::vector<ClientMessage>& messages,
                                         const ModelSpec& spec, const Dataset& val_set,
                                         const FedConfig& cfg);

// Mean of the member softmax outputs (probability averaging).
std::vector<double> ensemble_predict(const std::vector<ParamVector>& members,
                                     const ModelSpec& spec, std::span<const double> x);
double ensemble_accuracy(const std::vector<ParamVector>& members, const ModelSpec& spec,
                         const Dataset& data);

// Result of one full federated run.
struct RunReport {
    double ensemble_accuracy = 0.0;
    std::vector<double> component_accuracies;
    std::optional<double> fedavg_accuracy;
    std::optional<double> fisher_merge_accuracy;
    std::uint64_t bytes_sent = 0;         // full one-round message payloads
    std::uint64_t fedavg_bytes = 0;       // means only, C * d * 8
    std::uint64_t fisher_merge_bytes = 0; // means plus diagonal fishers, C * d * 16
    double seconds = 0.0;  // wall clock; everything else is deterministic

    double component_min() const;
    double component_max() const;
};

// Full pipeline: normalize, hold out server validation, partition, broadcast,
// client training (parallel), server training, evaluation, baselines.
RunReport run_fedbens(const Dataset& train, const Dataset& test, const ModelSpec& spec,
                      const FedConfig& cfg);

}  // namespace fedbens
