#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fedbens {

// Labeled classification dataset, features stored row-major.
struct Dataset {
    std::size_t count = 0;
    int input_dim = 0;
    int num_classes = 0;
    std::vector<double> features;  // count * input_dim
    std::vector<int> labels;       // in [0, num_classes)
    std::string provenance;

    std::span<const double> row(std::size_t i) const {
        return {features.data() + i * static_cast<std::size_t>(input_dim),
                static_cast<std::size_t>(input_dim)};
    }
    void validate() const;
};

struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct partition_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Class-k samples are isotropic Gaussians (stddev = spread) around a
// seed-determined unit direction scaled by 2. Labels come out class-major:
// the first n_per_class rows are class 0, and so on.
Dataset gen_synthetic_blobs(int num_classes, int input_dim, int n_per_class,
                            double spread, std::uint64_t seed);

// IDX container (big-endian magic + dims, as distributed with MNIST).
// Pixels are scaled to [0,1] by division by 255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Inverse of load_idx for byte-valued datasets: features are multiplied by
// 255 and rounded to u8. Round-trips exactly when every feature is k/255.
void write_idx(const Dataset& data, const std::string& images_path,
               const std::string& labels_path, int rows, int cols);

// CSV with header f0,...,f{d-1},label.
Dataset load_csv(const std::string& path);
void write_csv(const Dataset& data, const std::string& path);

enum class NormalizeMode { kPerFeatureStandardize, kNone };

struct NormalizationStats {
    std::vector<double> mean;
    std::vector<double> std_dev;  // raw per-feature stddev, before the zero-variance guard
};

// Standardizes each feature to mean 0 / std 1. Features with std < 1e-8 are
// centered only. Returns the statistics so test data can be transformed with
// the training-set numbers.
std::pair<Dataset, NormalizationStats> normalize(const Dataset& data, NormalizeMode mode);
Dataset apply_normalization(const Dataset& data, const NormalizationStats& stats);

struct PartitionPlan {
    std::vector<int> assignments;  // per sample, client index in [0, num_clients)
    int num_clients = 0;
    double alpha = 0.0;
    std::uint64_t seed = 0;
};

// Symmetric-Dirichlet label-skew partition: for each class, client
// proportions are drawn from Dirichlet(alpha * 1_C) and converted to counts
// by largest-remainder rounding. If some client ends up empty the whole draw
// is retried with seed+1, up to 100 times.
PartitionPlan dirichlet_partition(const Dataset& data, int num_clients, double alpha,
                                  std::uint64_t seed);

std::vector<Dataset> split_by_plan(const Dataset& data, const PartitionPlan& plan);

// Per-client class histogram, indexed [client][class].
std::vector<std::vector<std::size_t>> partition_histogram(const Dataset& data,
                                                          const PartitionPlan& plan);

// Uniform split without replacement; returns (train, validation).
std::pair<Dataset, Dataset> holdout_server_validation(const Dataset& data,
                                                      std::size_t n_val,
                                                      std::uint64_t seed);

// Uniform subsample of n rows without replacement.
Dataset subsample(const Dataset& data, std::size_t n, std::uint64_t seed);

}  // namespace fedbens
