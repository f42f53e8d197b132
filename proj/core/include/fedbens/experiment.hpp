#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedbens/data.hpp"
#include "fedbens/federation.hpp"
#include "fedbens/model.hpp"

namespace fedbens {

// Raised for any schema problem in an experiment config; the message names
// the offending field. CLI maps this to exit code 2.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetConfig {
    enum class Kind { kBlobs, kIdx, kCsv };
    Kind kind = Kind::kBlobs;

    // blobs
    int classes = 5;
    int input_dim = 20;
    int train_per_class = 800;
    int test_per_class = 200;
    double spread = 0.7;

    // idx
    std::string train_images, train_labels, test_images, test_labels;
    std::optional<std::size_t> subsample;

    // csv
    std::string train_path, test_path;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    ModelSpec model;
    FedConfig fed;
    std::string output_dir = "out";
    std::vector<std::uint64_t> seeds = {0};
    int threads = 1;

    // Strict parse: unknown keys and out-of-range values raise config_error.
    static ExperimentConfig from_json_text(const std::string& text);
    static ExperimentConfig from_file(const std::string& path);
};

// Train/test pair for one seed (blobs are redrawn per seed; file-backed
// datasets are fixed and only downstream splits depend on the seed).
struct DataBundle {
    Dataset train;
    Dataset test;
};
DataBundle build_datasets(const DatasetConfig& cfg, std::uint64_t seed);

// Per-seed metrics in the shape the report files use.
struct SeedResult {
    std::uint64_t seed = 0;
    RunReport report;
};

struct ExperimentResult {
    std::vector<SeedResult> seeds;

    double mean_ensemble_accuracy() const;
    double mean_fedavg_accuracy() const;
    double mean_fisher_merge_accuracy() const;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Optional command-line overrides applied on top of the config file.
struct CliOverrides {
    std::optional<std::string> output_dir;
    std::optional<int> threads;
};

enum class SweepAxis { kMixtures, kTemperature, kPriorVar, kHessian, kAlpha };
SweepAxis parse_sweep_axis(const std::string& name);
std::string sweep_axis_name(SweepAxis axis);

// Sub-command bodies used by the CLI. They write the report files into the
// output directory and return a process exit code (0 ok, 1 runtime error,
// 2 config error).
int cmd_run(const std::string& config_path, const CliOverrides& overrides);
int cmd_sweep(const std::string& config_path, const std::string& axis,
              const std::vector<std::string>& values, const CliOverrides& overrides);
int cmd_inspect_partition(const std::string& config_path, const CliOverrides& overrides);

// metrics.csv content for one experiment (header plus rows sorted by
// (seed, method)); byte-stable across reruns and thread counts.
std::string metrics_csv(const ExperimentResult& result);

}  // namespace fedbens
