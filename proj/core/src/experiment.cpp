#include "fedbens/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fedbens/parallel.hpp"
#include "fedbens/rng.hpp"

namespace fedbens {

namespace {

using nlohmann::json;

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

void reject_unknown_keys(const json& obj, const std::string& scope,
                         const std::set<std::string>& allowed) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!allowed.contains(key))
            throw config_error(scope + "." + key + ": unknown key");
    }
}

template <typename T>
T get_field(const json& obj, const std::string& scope, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw config_error(scope + "." + key + ": wrong type");
    }
}

template <typename T>
T require_field(const json& obj, const std::string& scope, const std::string& key) {
    if (!obj.contains(key)) throw config_error(scope + "." + key + ": missing required key");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw config_error(scope + "." + key + ": wrong type");
    }
}

DatasetConfig parse_dataset(const json& obj) {
    reject_unknown_keys(obj, "dataset",
                        {"kind", "classes", "input_dim", "train_per_class", "test_per_class",
                         "spread", "train_images", "train_labels", "test_images",
                         "test_labels", "subsample", "train_path", "test_path"});
    DatasetConfig cfg;
    const std::string kind = require_field<std::string>(obj, "dataset", "kind");
    if (kind == "blobs") {
        cfg.kind = DatasetConfig::Kind::kBlobs;
        cfg.classes = get_field<int>(obj, "dataset", "classes", cfg.classes);
        cfg.input_dim = get_field<int>(obj, "dataset", "input_dim", cfg.input_dim);
        cfg.train_per_class = get_field<int>(obj, "dataset", "train_per_class", cfg.train_per_class);
        cfg.test_per_class = get_field<int>(obj, "dataset", "test_per_class", cfg.test_per_class);
        cfg.spread = get_field<double>(obj, "dataset", "spread", cfg.spread);
        if (cfg.classes < 2) throw config_error("dataset.classes: must be >= 2");
        if (cfg.input_dim < 2) throw config_error("dataset.input_dim: must be >= 2");
        if (cfg.train_per_class < 1) throw config_error("dataset.train_per_class: must be >= 1");
        if (cfg.test_per_class < 1) throw config_error("dataset.test_per_class: must be >= 1");
        if (!(cfg.spread > 0.0)) throw config_error("dataset.spread: must be > 0");
    } else if (kind == "idx") {
        cfg.kind = DatasetConfig::Kind::kIdx;
        cfg.train_images = require_field<std::string>(obj, "dataset", "train_images");
        cfg.train_labels = require_field<std::string>(obj, "dataset", "train_labels");
        cfg.test_images = require_field<std::string>(obj, "dataset", "test_images");
        cfg.test_labels = require_field<std::string>(obj, "dataset", "test_labels");
        if (obj.contains("subsample")) {
            const auto n = require_field<std::int64_t>(obj, "dataset", "subsample");
            if (n < 1) throw config_error("dataset.subsample: must be >= 1");
            cfg.subsample = static_cast<std::size_t>(n);
        }
    } else if (kind == "csv") {
        cfg.kind = DatasetConfig::Kind::kCsv;
        cfg.train_path = require_field<std::string>(obj, "dataset", "train_path");
        cfg.test_path = require_field<std::string>(obj, "dataset", "test_path");
    } else {
        throw config_error("dataset.kind: must be one of blobs, idx, csv");
    }
    return cfg;
}

ModelSpec parse_model(const json& obj) {
    reject_unknown_keys(obj, "model", {"hidden_dims", "activation"});
    ModelSpec spec;
    spec.layer_dims.clear();  // input/output dims are appended once data is known
    if (obj.contains("hidden_dims")) {
        const auto dims = require_field<std::vector<int>>(obj, "model", "hidden_dims");
        for (int d : dims) {
            if (d < 1) throw config_error("model.hidden_dims: entries must be >= 1");
            spec.layer_dims.push_back(d);
        }
    }
    const std::string act = get_field<std::string>(obj, "model", "activation", "relu");
    if (act == "relu") spec.activation = Activation::kRelu;
    else if (act == "tanh") spec.activation = Activation::kTanh;
    else throw config_error("model.activation: must be relu or tanh");
    return spec;
}

HessianKind parse_hessian(const std::string& name) {
    if (name == "diagonal") return HessianKind::kDiagonal;
    if (name == "diag_last_full") return HessianKind::kDiagLastFull;
    if (name == "kronecker") return HessianKind::kKronecker;
    throw config_error("federation.hessian: must be diagonal, diag_last_full or kronecker");
}

std::string hessian_name(HessianKind kind) {
    switch (kind) {
        case HessianKind::kDiagonal: return "diagonal";
        case HessianKind::kDiagLastFull: return "diag_last_full";
        case HessianKind::kKronecker: return "kronecker";
    }
    return "?";
}

FedConfig parse_federation(const json& obj) {
    reject_unknown_keys(obj, "federation",
                        {"mixtures", "clients", "alpha", "validation_samples", "normalize",
                         "client_epochs", "client_lr", "momentum", "batch_size",
                         "server_steps", "eval_every", "server_lr", "temperature",
                         "prior_variance", "hessian", "kfac_samples"});
    FedConfig fed;
    fed.mixtures = get_field<int>(obj, "federation", "mixtures", fed.mixtures);
    fed.clients = get_field<int>(obj, "federation", "clients", fed.clients);
    fed.alpha = get_field<double>(obj, "federation", "alpha", fed.alpha);
    fed.validation_samples =
        get_field<int>(obj, "federation", "validation_samples", fed.validation_samples);
    const std::string norm = get_field<std::string>(obj, "federation", "normalize", "standardize");
    if (norm == "standardize") fed.normalize_mode = NormalizeMode::kPerFeatureStandardize;
    else if (norm == "none") fed.normalize_mode = NormalizeMode::kNone;
    else throw config_error("federation.normalize: must be standardize or none");
    fed.client_epochs = get_field<int>(obj, "federation", "client_epochs", fed.client_epochs);
    fed.client_lr = get_field<double>(obj, "federation", "client_lr", fed.client_lr);
    fed.client_momentum = get_field<double>(obj, "federation", "momentum", fed.client_momentum);
    fed.batch_size = get_field<int>(obj, "federation", "batch_size", fed.batch_size);
    fed.server_steps = get_field<int>(obj, "federation", "server_steps", fed.server_steps);
    fed.eval_every = get_field<int>(obj, "federation", "eval_every", fed.eval_every);
    fed.server_adam.lr = get_field<double>(obj, "federation", "server_lr", fed.server_adam.lr);
    fed.temperature = get_field<double>(obj, "federation", "temperature", fed.temperature);
    fed.prior_variance =
        get_field<double>(obj, "federation", "prior_variance", fed.prior_variance);
    fed.hessian = parse_hessian(
        get_field<std::string>(obj, "federation", "hessian", hessian_name(fed.hessian)));
    fed.kfac_samples = get_field<int>(obj, "federation", "kfac_samples", fed.kfac_samples);
    try {
        fed.validate();
    } catch (const std::invalid_argument& e) {
        throw config_error(std::string("federation: ") + e.what());
    }
    return fed;
}

json report_to_json(const SeedResult& sr) {
    json j;
    j["seed"] = sr.seed;
    j["ensemble_accuracy"] = sr.report.ensemble_accuracy;
    j["component_accuracies"] = sr.report.component_accuracies;
    j["component_min"] = sr.report.component_min();
    j["component_max"] = sr.report.component_max();
    if (sr.report.fedavg_accuracy) j["fedavg_accuracy"] = *sr.report.fedavg_accuracy;
    if (sr.report.fisher_merge_accuracy)
        j["fisher_merge_accuracy"] = *sr.report.fisher_merge_accuracy;
    j["bytes_sent"] = sr.report.bytes_sent;
    j["seconds"] = sr.report.seconds;
    return j;
}

struct MeanStd {
    double mean = 0.0;
    double std_dev = 0.0;
};

MeanStd mean_std(const std::vector<double>& values) {
    MeanStd out;
    if (values.empty()) return out;
    for (double v : values) out.mean += v;
    out.mean /= static_cast<double>(values.size());
    for (double v : values) out.std_dev += (v - out.mean) * (v - out.mean);
    out.std_dev = std::sqrt(out.std_dev / static_cast<double>(values.size()));
    return out;
}

json aggregate_json(const ExperimentResult& result) {
    auto collect = [&](auto&& get) {
        std::vector<double> v;
        for (const auto& sr : result.seeds) {
            auto value = get(sr);
            if (value) v.push_back(*value);
        }
        return v;
    };
    auto pack = [](const std::vector<double>& v) {
        const MeanStd ms = mean_std(v);
        return json{{"mean", ms.mean}, {"std", ms.std_dev}};
    };

    json j;
    j["ensemble_accuracy"] = pack(collect([](const SeedResult& sr) {
        return std::optional<double>(sr.report.ensemble_accuracy);
    }));
    j["component_min"] = pack(collect([](const SeedResult& sr) {
        return std::optional<double>(sr.report.component_min());
    }));
    j["component_max"] = pack(collect([](const SeedResult& sr) {
        return std::optional<double>(sr.report.component_max());
    }));
    const auto fedavg =
        collect([](const SeedResult& sr) { return sr.report.fedavg_accuracy; });
    if (!fedavg.empty()) j["fedavg_accuracy"] = pack(fedavg);
    const auto fisher =
        collect([](const SeedResult& sr) { return sr.report.fisher_merge_accuracy; });
    if (!fisher.empty()) j["fisher_merge_accuracy"] = pack(fisher);
    return j;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

ExperimentConfig load_config(const std::string& config_path, const CliOverrides& overrides) {
    ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
    if (overrides.output_dir) cfg.output_dir = *overrides.output_dir;
    if (overrides.threads) {
        if (*overrides.threads < 1) throw config_error("threads: must be >= 1");
        cfg.threads = *overrides.threads;
    }
    return cfg;
}

int guarded(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw config_error(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw config_error("config root must be a JSON object");
    reject_unknown_keys(root, "config",
                        {"dataset", "model", "federation", "baselines", "output_dir", "seeds",
                         "threads"});
    if (!root.contains("dataset")) throw config_error("config.dataset: missing required key");

    ExperimentConfig cfg;
    cfg.dataset = parse_dataset(root.at("dataset"));
    cfg.model = root.contains("model") ? parse_model(root.at("model")) : ModelSpec{{}, Activation::kRelu};
    if (root.contains("federation")) cfg.fed = parse_federation(root.at("federation"));
    if (root.contains("baselines")) {
        const json& b = root.at("baselines");
        reject_unknown_keys(b, "baselines", {"fedavg", "fisher_merge"});
        cfg.fed.baseline_fedavg = get_field<bool>(b, "baselines", "fedavg", true);
        cfg.fed.baseline_fisher_merge = get_field<bool>(b, "baselines", "fisher_merge", true);
    }
    cfg.output_dir = get_field<std::string>(root, "config", "output_dir", cfg.output_dir);
    if (root.contains("seeds")) {
        cfg.seeds = require_field<std::vector<std::uint64_t>>(root, "config", "seeds");
        if (cfg.seeds.empty()) throw config_error("config.seeds: must not be empty");
    }
    cfg.threads = get_field<int>(root, "config", "threads", cfg.threads);
    if (cfg.threads < 1) throw config_error("config.threads: must be >= 1");
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_json_text(buffer.str());
}

DataBundle build_datasets(const DatasetConfig& cfg, std::uint64_t seed) {
    switch (cfg.kind) {
        case DatasetConfig::Kind::kBlobs: {
            // One draw covers train and test so both share the class centers;
            // the class-major layout makes the split a per-class slice.
            const int per_class = cfg.train_per_class + cfg.test_per_class;
            const Dataset all = gen_synthetic_blobs(cfg.classes, cfg.input_dim, per_class,
                                                    cfg.spread, Rng::derive(seed, stream::kData));
            DataBundle bundle;
            bundle.train.input_dim = bundle.test.input_dim = cfg.input_dim;
            bundle.train.num_classes = bundle.test.num_classes = cfg.classes;
            bundle.train.provenance = "synthetic/train";
            bundle.test.provenance = "synthetic/test";
            for (int k = 0; k < cfg.classes; ++k) {
                const std::size_t base = static_cast<std::size_t>(k) * per_class;
                for (int i = 0; i < per_class; ++i) {
                    const std::size_t row = base + i;
                    Dataset& dst = (i < cfg.train_per_class) ? bundle.train : bundle.test;
                    const auto features = all.row(row);
                    dst.features.insert(dst.features.end(), features.begin(), features.end());
                    dst.labels.push_back(all.labels[row]);
                    dst.count += 1;
                }
            }
            return bundle;
        }
        case DatasetConfig::Kind::kIdx: {
            DataBundle bundle;
            bundle.train = load_idx(cfg.train_images, cfg.train_labels);
            bundle.test = load_idx(cfg.test_images, cfg.test_labels);
            if (cfg.subsample && *cfg.subsample < bundle.train.count)
                bundle.train = subsample(bundle.train, *cfg.subsample, seed);
            const int classes = std::max(bundle.train.num_classes, bundle.test.num_classes);
            bundle.train.num_classes = bundle.test.num_classes = classes;
            return bundle;
        }
        case DatasetConfig::Kind::kCsv: {
            DataBundle bundle;
            bundle.train = load_csv(cfg.train_path);
            bundle.test = load_csv(cfg.test_path);
            const int classes = std::max(bundle.train.num_classes, bundle.test.num_classes);
            bundle.train.num_classes = bundle.test.num_classes = classes;
            return bundle;
        }
    }
    throw config_error("dataset.kind: unknown kind");
}

double ExperimentResult::mean_ensemble_accuracy() const {
    double acc = 0.0;
    for (const auto& sr : seeds) acc += sr.report.ensemble_accuracy;
    return acc / static_cast<double>(seeds.size());
}

double ExperimentResult::mean_fedavg_accuracy() const {
    double acc = 0.0;
    for (const auto& sr : seeds) acc += sr.report.fedavg_accuracy.value_or(0.0);
    return acc / static_cast<double>(seeds.size());
}

double ExperimentResult::mean_fisher_merge_accuracy() const {
    double acc = 0.0;
    for (const auto& sr : seeds) acc += sr.report.fisher_merge_accuracy.value_or(0.0);
    return acc / static_cast<double>(seeds.size());
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    ExperimentResult result;
    result.seeds.resize(cfg.seeds.size());
    parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t i) {
        const std::uint64_t seed = cfg.seeds[i];
        const DataBundle data = build_datasets(cfg.dataset, seed);

        ModelSpec spec = cfg.model;
        // The config stores hidden dims only; bolt on the data dimensions.
        spec.layer_dims.insert(spec.layer_dims.begin(), data.train.input_dim);
        spec.layer_dims.push_back(data.train.num_classes);

        FedConfig fed = cfg.fed;
        fed.seed = seed;
        fed.threads = cfg.threads;
        result.seeds[i] = {seed, run_fedbens(data.train, data.test, spec, fed)};
    });
    return result;
}

std::string metrics_csv(const ExperimentResult& result) {
    struct Row {
        std::uint64_t seed;
        std::string method;
        double accuracy;
        std::string bytes;
    };
    std::vector<Row> rows;
    for (const auto& sr : result.seeds) {
        const std::string fed_bytes = std::to_string(sr.report.bytes_sent);
        rows.push_back({sr.seed, "fedbens", sr.report.ensemble_accuracy, fed_bytes});
        rows.push_back({sr.seed, "fedbens_component_min", sr.report.component_min(), fed_bytes});
        rows.push_back({sr.seed, "fedbens_component_max", sr.report.component_max(), fed_bytes});
        if (sr.report.fedavg_accuracy)
            rows.push_back({sr.seed, "fedavg", *sr.report.fedavg_accuracy,
                            std::to_string(sr.report.fedavg_bytes)});
        if (sr.report.fisher_merge_accuracy)
            rows.push_back({sr.seed, "fisher_merge", *sr.report.fisher_merge_accuracy,
                            std::to_string(sr.report.fisher_merge_bytes)});
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.seed != b.seed) return a.seed < b.seed;
        return a.method < b.method;
    });
    std::string out = "seed,method,accuracy,bytes_sent,seconds\n";
    for (const auto& row : rows) {
        out += std::to_string(row.seed);
        out += ',';
        out += row.method;
        out += ',';
        out += format_double(row.accuracy);
        out += ',';
        out += row.bytes;
        // metrics.csv must be byte-stable across reruns; wall-clock timing
        // is reported in report.json instead.
        out += ",0\n";
    }
    return out;
}

SweepAxis parse_sweep_axis(const std::string& name) {
    if (name == "mixtures") return SweepAxis::kMixtures;
    if (name == "temperature") return SweepAxis::kTemperature;
    if (name == "prior_var") return SweepAxis::kPriorVar;
    if (name == "hessian") return SweepAxis::kHessian;
    if (name == "alpha") return SweepAxis::kAlpha;
    throw config_error(
        "sweep axis must be one of mixtures, temperature, prior_var, hessian, alpha");
}

std::string sweep_axis_name(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::kMixtures: return "mixtures";
        case SweepAxis::kTemperature: return "temperature";
        case SweepAxis::kPriorVar: return "prior_var";
        case SweepAxis::kHessian: return "hessian";
        case SweepAxis::kAlpha: return "alpha";
    }
    return "?";
}

int cmd_run(const std::string& config_path, const CliOverrides& overrides) {
    return guarded([&] {
        const ExperimentConfig cfg = load_config(config_path, overrides);
        const ExperimentResult result = run_experiment(cfg);

        std::filesystem::create_directories(cfg.output_dir);
        json report;
        report["seeds"] = json::array();
        for (const auto& sr : result.seeds) report["seeds"].push_back(report_to_json(sr));
        report["aggregate"] = aggregate_json(result);
        write_text_file(std::filesystem::path(cfg.output_dir) / "report.json",
                        report.dump(2) + "\n");
        write_text_file(std::filesystem::path(cfg.output_dir) / "metrics.csv",
                        metrics_csv(result));
    });
}

int cmd_sweep(const std::string& config_path, const std::string& axis,
              const std::vector<std::string>& values, const CliOverrides& overrides) {
    return guarded([&] {
        const SweepAxis parsed_axis = parse_sweep_axis(axis);
        if (values.empty()) throw config_error("sweep: need at least one value");
        const ExperimentConfig base = load_config(config_path, overrides);

        struct SweepRow {
            std::string value;
            std::uint64_t seed;
            std::string method;
            double accuracy;
        };
        std::vector<SweepRow> rows;

        for (const std::string& value : values) {
            ExperimentConfig cfg = base;
            switch (parsed_axis) {
                case SweepAxis::kMixtures: {
                    int m = 0;
                    const auto [p, ec] =
                        std::from_chars(value.data(), value.data() + value.size(), m);
                    if (ec != std::errc{} || p != value.data() + value.size() || m < 1)
                        throw config_error("sweep mixtures value '" + value +
                                           "' is not a positive integer");
                    cfg.fed.mixtures = m;
                    break;
                }
                case SweepAxis::kTemperature:
                    cfg.fed.temperature = std::stod(value);
                    if (!(cfg.fed.temperature > 0))
                        throw config_error("sweep temperature must be > 0");
                    break;
                case SweepAxis::kPriorVar:
                    cfg.fed.prior_variance = std::stod(value);
                    if (!(cfg.fed.prior_variance > 0))
                        throw config_error("sweep prior_var must be > 0");
                    break;
                case SweepAxis::kHessian:
                    cfg.fed.hessian = parse_hessian(value);
                    break;
                case SweepAxis::kAlpha:
                    cfg.fed.alpha = std::stod(value);
                    if (!(cfg.fed.alpha > 0)) throw config_error("sweep alpha must be > 0");
                    break;
            }
            const ExperimentResult result = run_experiment(cfg);
            for (const auto& sr : result.seeds) {
                rows.push_back({value, sr.seed, "fedbens", sr.report.ensemble_accuracy});
                if (sr.report.fedavg_accuracy)
                    rows.push_back({value, sr.seed, "fedavg", *sr.report.fedavg_accuracy});
                if (sr.report.fisher_merge_accuracy)
                    rows.push_back(
                        {value, sr.seed, "fisher_merge", *sr.report.fisher_merge_accuracy});
            }
        }

        std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
            if (a.seed != b.seed) return a.seed < b.seed;
            return a.method < b.method;
        });

        const ExperimentConfig cfg = base;
        std::filesystem::create_directories(cfg.output_dir);
        std::string csv = "value,seed,method,accuracy\n";
        for (const auto& row : rows) {
            csv += row.value;
            csv += ',';
            csv += std::to_string(row.seed);
            csv += ',';
            csv += row.method;
            csv += ',';
            csv += format_double(row.accuracy);
            csv += '\n';
        }
        write_text_file(std::filesystem::path(cfg.output_dir) /
                            ("sweep_" + sweep_axis_name(parsed_axis) + ".csv"),
                        csv);
    });
}

int cmd_inspect_partition(const std::string& config_path, const CliOverrides& overrides) {
    return guarded([&] {
        const ExperimentConfig cfg = load_config(config_path, overrides);
        const std::uint64_t seed = cfg.seeds.front();
        const DataBundle data = build_datasets(cfg.dataset, seed);

        FedConfig fed = cfg.fed;
        fed.seed = seed;
        const auto [train, stats] = normalize(data.train, fed.normalize_mode);
        (void)stats;
        const auto [pool, val] = holdout_server_validation(train, fed.validation_samples, seed);
        (void)val;

        std::vector<std::vector<std::size_t>> hist;
        if (fed.clients == 1) {
            hist.assign(1, std::vector<std::size_t>(pool.num_classes, 0));
            for (std::size_t i = 0; i < pool.count; ++i) hist[0][pool.labels[i]] += 1;
        } else {
            const PartitionPlan plan = dirichlet_partition(pool, fed.clients, fed.alpha, seed);
            hist = partition_histogram(pool, plan);
        }

        std::filesystem::create_directories(cfg.output_dir);
        std::string csv = "client,class,count\n";
        for (std::size_t c = 0; c < hist.size(); ++c) {
            for (std::size_t k = 0; k < hist[c].size(); ++k) {
                csv += std::to_string(c);
                csv += ',';
                csv += std::to_string(k);
                csv += ',';
                csv += std::to_string(hist[c][k]);
                csv += '\n';
            }
        }
        write_text_file(std::filesystem::path(cfg.output_dir) / "partition.csv", csv);
    });
}

}  // namespace fedbens
