#include "fedbens/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "fedbens/baselines.hpp"
#include "fedbens/parallel.hpp"
#include "fedbens/rng.hpp"
#include "wire.hpp"

namespace fedbens {

namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'B', 'E', 'N'};
constexpr std::uint16_t kVersion = 1;

PrecisionStructure fit_precision(const ParamVector& params, const ModelSpec& spec,
                                 const Dataset& data, const FedConfig& cfg) {
    const PriorSpec prior{cfg.prior_variance};
    switch (cfg.hessian) {
        case HessianKind::kDiagonal:
            return ggn_diagonal(params, spec, data, cfg.temperature, prior);
        case HessianKind::kDiagLastFull:
            return ggn_last_layer_full(params, spec, data, cfg.temperature, prior);
        case HessianKind::kKronecker: {
            const KfacMode mode =
                spec.num_classes() <= 16
                    ? KfacMode::exact_classes()
                    : KfacMode::sampled(cfg.kfac_samples,
                                        Rng::derive(cfg.seed, stream::kKfacSample));
            return assemble_kronecker(kfac_factors(params, spec, data, mode), spec,
                                      cfg.temperature, prior);
        }
    }
    throw std::invalid_argument("fit_precision: unknown hessian kind");
}

}  // namespace

void FedConfig::validate() const {
    if (mixtures < 1) throw std::invalid_argument("FedConfig: mixtures must be >= 1");
    if (clients < 1) throw std::invalid_argument("FedConfig: clients must be >= 1");
    if (!(alpha > 0.0)) throw std::invalid_argument("FedConfig: alpha must be > 0");
    if (validation_samples < 1)
        throw std::invalid_argument("FedConfig: validation_samples must be >= 1");
    if (client_epochs < 0) throw std::invalid_argument("FedConfig: client_epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("FedConfig: batch_size must be >= 1");
    if (server_steps < 0) throw std::invalid_argument("FedConfig: server_steps must be >= 0");
    if (eval_every < 1 || (server_steps > 0 && eval_every > server_steps))
        throw std::invalid_argument("FedConfig: eval_every must be in [1, server_steps]");
    if (!(temperature > 0.0)) throw std::invalid_argument("FedConfig: temperature must be > 0");
    if (!(prior_variance > 0.0))
        throw std::invalid_argument("FedConfig: prior_variance must be > 0");
    if (kfac_samples < 1) throw std::invalid_argument("FedConfig: kfac_samples must be >= 1");
    if (threads < 1) throw std::invalid_argument("FedConfig: threads must be >= 1");
}

std::vector<std::uint8_t> serialize_message(const ClientMessage& msg) {
    if (msg.components.empty())
        throw std::invalid_argument("serialize_message: no components");
    const std::size_t d = msg.components.front().first.dim();

    std::vector<std::uint8_t> out;
    out.reserve(serialized_message_size(msg));
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    wire::put_u16(out, kVersion);
    wire::put_u32(out, msg.client_id);
    wire::put_u16(out, static_cast<std::uint16_t>(msg.components.size()));
    wire::put_u64(out, d);
    wire::put_u64(out, msg.sample_count);

    for (const auto& [mean, precision] : msg.components) {
        if (mean.dim() != d || precision.dim() != d)
            throw std::invalid_argument("serialize_message: component dimension mismatch");
        for (double v : mean.values) wire::put_f64(out, v);
        serialize_precision(precision, out);
    }
    return out;
}

std::size_t serialized_message_size(const ClientMessage& msg) {
    // magic + version + client id + M + d + N_c
    std::size_t total = 4 + 2 + 4 + 2 + 8 + 8;
    for (const auto& [mean, precision] : msg.components) {
        total += mean.dim() * 8;
        total += serialized_precision_size(precision);
    }
    return total;
}

ClientMessage deserialize_message(std::span<const std::uint8_t> bytes) {
    wire::Reader r{bytes, 0};
    r.require(4);
    for (std::uint8_t expected : kMagic) {
        if (r.u8() != expected)
            throw std::runtime_error("client message: bad magic, want \"FBEN\"");
    }
    const std::uint16_t version = r.u16();
    if (version != kVersion)
        throw std::runtime_error("client message: unsupported version " +
                                 std::to_string(version));

    ClientMessage msg;
    msg.client_id = r.u32();
    const std::uint16_t mixtures = r.u16();
    if (mixtures == 0) throw std::runtime_error("client message: zero components");
    const std::uint64_t d = r.u64();
    msg.sample_count = r.u64();

    msg.components.reserve(mixtures);
    for (std::uint16_t m = 0; m < mixtures; ++m) {
        ParamVector mean;
        mean.values.resize(d);
        for (double& v : mean.values) v = r.f64();
        std::size_t offset = r.pos;
        PrecisionStructure precision = deserialize_precision(bytes, offset);
        r.pos = offset;
        if (precision.dim() != d)
            throw std::runtime_error("client message: precision dim disagrees with header");
        mean.layout = precision.layout;
        msg.components.emplace_back(std::move(mean), std::move(precision));
    }
    if (r.pos != bytes.size())
        throw std::runtime_error("client message: trailing bytes after last component");
    return msg;
}

std::vector<ParamVector> broadcast_inits(const ModelSpec& spec, int mixtures,
                                         std::uint64_t seed) {
    if (mixtures < 1) throw std::invalid_argument("broadcast_inits: mixtures must be >= 1");
    std::vector<ParamVector> inits;
    inits.reserve(mixtures);
    for (int m = 0; m < mixtures; ++m) {
        inits.push_back(
            init_params(spec, Rng::derive(seed, stream::kInit, static_cast<std::uint64_t>(m))));
    }
    return inits;
}

ClientMessage client_training(const std::vector<ParamVector>& inits, const Dataset& data,
                              const ModelSpec& spec, const FedConfig& cfg,
                              std::uint32_t client_id) {
    if (data.count == 0) throw std::invalid_argument("client_training: empty client dataset");

    ClientMessage msg;
    msg.client_id = client_id;
    msg.sample_count = data.count;
    msg.components.resize(inits.size());

    for (std::size_t m = 0; m < inits.size(); ++m) {
        const std::uint64_t train_seed =
            Rng::derive(cfg.seed, stream::kClientTrain, client_id, m);
        ParamVector fitted = train_sgd(inits[m], spec, data, cfg.client_epochs, cfg.client_lr,
                                       cfg.client_momentum, cfg.batch_size, train_seed);
        PrecisionStructure precision = fit_precision(fitted, spec, data, cfg);
        msg.components[m] = {std::move(fitted), std::move(precision)};
    }
    return msg;
}

std::vector<ParamVector> median_init(const std::vector<ClientMessage>& messages) {
    if (messages.empty()) throw std::invalid_argument("median_init: no messages");
    const std::size_t mixtures = messages.front().components.size();
    const std::size_t d = messages.front().components.front().first.dim();
    for (const auto& msg : messages) {
        if (msg.components.size() != mixtures)
            throw std::invalid_argument("median_init: component counts differ");
    }

    std::vector<ParamVector> out;
    out.reserve(mixtures);
    std::vector<double> column(messages.size());
    for (std::size_t m = 0; m < mixtures; ++m) {
        ParamVector median = messages.front().components[m].first;
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t c = 0; c < messages.size(); ++c) {
                column[c] = messages[c].components[m].first.values[j];
            }
            std::sort(column.begin(), column.end());
            const std::size_t half = column.size() / 2;
            median.values[j] = (column.size() % 2 == 1)
                                   ? column[half]
                                   : 0.5 * (column[half - 1] + column[half]);
        }
        out.push_back(std::move(median));
    }
    return out;
}

GlobalObjective build_global_objective(const std::vector<ClientMessage>& messages,
                                       const PriorSpec& prior) {
    GlobalObjective g;
    g.prior = prior;
    g.clients.reserve(messages.size());
    for (const auto& msg : messages) {
        ClientPosterior cp;
        cp.components.reserve(msg.components.size());
        for (const auto& [mean, precision] : msg.components) {
            cp.components.push_back(LaplaceComponent::make(mean, precision));
        }
        g.clients.push_back(std::move(cp));
    }
    return g;
}

std::vector<ParamVector> server_training(const std::vector<ClientMessage>& messages,
                                         const ModelSpec& spec, const Dataset& val_set,
                                         const FedConfig& cfg) {
    if (val_set.count == 0) throw std::invalid_argument("server_training: empty validation set");
    const GlobalObjective objective =
        build_global_objective(messages, PriorSpec{cfg.prior_variance});
    std::vector<ParamVector> starts = median_init(messages);

    std::vector<ParamVector> result(starts.size());
    parallel_for(starts.size(), cfg.threads, [&](std::size_t m) {
        ParamVector current = starts[m];
        ParamVector best = current;
        double best_accuracy = accuracy(current, spec, val_set);

        OptimizerState adam = OptimizerState::make_adam(current.dim(), cfg.server_adam);
        for (int step = 1; step <= cfg.server_steps; ++step) {
            const auto grad = global_grad(objective, current.values);
            adam_step(adam, current.values, grad);
            if (step % cfg.eval_every == 0 || step == cfg.server_steps) {
                const double acc = accuracy(current, spec, val_set);
                if (acc > best_accuracy) {
                    best_accuracy = acc;
                    best = current;
                }
            }
        }
        result[m] = std::move(best);
    });
    return result;
}

std::vector<double> ensemble_predict(const std::vector<ParamVector>& members,
                                     const ModelSpec& spec, std::span<const double> x) {
    if (members.empty()) throw std::invalid_argument("ensemble_predict: no members");
    std::vector<double> mean(spec.num_classes(), 0.0);
    const double inv_m = 1.0 / static_cast<double>(members.size());
    for (const auto& member : members) {
        const auto probs = forward(member, spec, x);
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += inv_m * probs[k];
    }
    return mean;
}

double ensemble_accuracy(const std::vector<ParamVector>& members, const ModelSpec& spec,
                         const Dataset& data) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.count; ++i) {
        const auto probs = ensemble_predict(members, spec, data.row(i));
        const std::size_t pred =
            std::max_element(probs.begin(), probs.end()) - probs.begin();
        if (static_cast<int>(pred) == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.count);
}

double RunReport::component_min() const {
    return *std::min_element(component_accuracies.begin(), component_accuracies.end());
}

double RunReport::component_max() const {
    return *std::max_element(component_accuracies.begin(), component_accuracies.end());
}

RunReport run_fedbens(const Dataset& train, const Dataset& test, const ModelSpec& spec,
                      const FedConfig& cfg) {
    cfg.validate();
    spec.validate();
    const auto started = std::chrono::steady_clock::now();

    // Normalization statistics come from the full training set and are
    // reused verbatim for the test set.
    const auto [normalized_train, stats] = normalize(train, cfg.normalize_mode);
    const Dataset normalized_test = apply_normalization(test, stats);

    const auto [client_pool, val_set] = holdout_server_validation(
        normalized_train, cfg.validation_samples, cfg.seed);

    std::vector<Dataset> client_data;
    if (cfg.clients == 1) {
        client_data.push_back(client_pool);
    } else {
        const PartitionPlan plan =
            dirichlet_partition(client_pool, cfg.clients, cfg.alpha, cfg.seed);
        client_data = split_by_plan(client_pool, plan);
    }

    const auto inits = broadcast_inits(spec, cfg.mixtures, cfg.seed);

    std::vector<ClientMessage> messages(cfg.clients);
    parallel_for(client_data.size(), cfg.threads, [&](std::size_t c) {
        messages[c] = client_training(inits, client_data[c], spec, cfg,
                                      static_cast<std::uint32_t>(c));
    });

    RunReport report;
    for (const auto& msg : messages) report.bytes_sent += serialized_message_size(msg);

    const auto ensemble = server_training(messages, spec, val_set, cfg);
    report.ensemble_accuracy = ensemble_accuracy(ensemble, spec, normalized_test);
    report.component_accuracies.reserve(ensemble.size());
    for (const auto& member : ensemble) {
        report.component_accuracies.push_back(accuracy(member, spec, normalized_test));
    }

    // Baselines merge the first mixture component of every client, i.e. the
    // models all trained from broadcast init 0.
    const std::uint64_t d = param_count(spec);
    if (cfg.baseline_fedavg) {
        std::vector<ParamVector> models;
        std::vector<std::uint64_t> sizes;
        for (const auto& msg : messages) {
            models.push_back(msg.components.front().first);
            sizes.push_back(msg.sample_count);
        }
        const ParamVector merged = one_shot_fedavg(models, sizes);
        report.fedavg_accuracy = accuracy(merged, spec, normalized_test);
        report.fedavg_bytes = static_cast<std::uint64_t>(cfg.clients) * d * 8;
    }
    if (cfg.baseline_fisher_merge) {
        const PriorSpec prior{cfg.prior_variance};
        std::vector<ParamVector> means;
        std::vector<std::vector<double>> fishers(cfg.clients);
        for (const auto& msg : messages) means.push_back(msg.components.front().first);
        parallel_for(client_data.size(), cfg.threads, [&](std::size_t c) {
            // Untempered diagonal Fisher of the local posterior.
            const auto diag = ggn_diagonal(messages[c].components.front().first, spec,
                                           client_data[c], 1.0, prior);
            fishers[c] = std::get<DiagonalPrecision>(diag.repr).entries;
        });
        const ParamVector merged = fisher_merge_diag(means, fishers);
        report.fisher_merge_accuracy = accuracy(merged, spec, normalized_test);
        report.fisher_merge_bytes = static_cast<std::uint64_t>(cfg.clients) * d * 16;
    }

    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

}  // namespace fedbens
