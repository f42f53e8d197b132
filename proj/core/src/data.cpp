#include "fedbens/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fedbens/rng.hpp"

namespace fedbens {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_u32_be(std::istream& in, const char* field, const std::string& path) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) {
        throw format_error("truncated IDX file '" + path + "' while reading " + field);
    }
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                            static_cast<unsigned char>(v >> 16),
                            static_cast<unsigned char>(v >> 8),
                            static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

// Fisher-Yates over index array, driven by our own generator so shuffles
// are identical on every platform.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

Dataset gather_rows(const Dataset& data, const std::vector<std::size_t>& rows,
                    std::string provenance) {
    Dataset out;
    out.count = rows.size();
    out.input_dim = data.input_dim;
    out.num_classes = data.num_classes;
    out.provenance = std::move(provenance);
    out.features.reserve(rows.size() * static_cast<std::size_t>(data.input_dim));
    out.labels.reserve(rows.size());
    for (std::size_t r : rows) {
        const auto row = data.row(r);
        out.features.insert(out.features.end(), row.begin(), row.end());
        out.labels.push_back(data.labels[r]);
    }
    return out;
}

}  // namespace

void Dataset::validate() const {
    if (count == 0) throw std::invalid_argument("Dataset: empty");
    if (features.size() != count * static_cast<std::size_t>(input_dim))
        throw std::invalid_argument("Dataset: feature buffer size mismatch");
    if (labels.size() != count) throw std::invalid_argument("Dataset: label count mismatch");
    for (int y : labels) {
        if (y < 0 || y >= num_classes)
            throw std::invalid_argument("Dataset: label outside [0, num_classes)");
    }
    for (double v : features) {
        if (!std::isfinite(v)) throw std::invalid_argument("Dataset: non-finite feature");
    }
}

Dataset gen_synthetic_blobs(int num_classes, int input_dim, int n_per_class,
                            double spread, std::uint64_t seed) {
    if (num_classes < 2) throw std::invalid_argument("gen_synthetic_blobs: need K >= 2");
    if (input_dim < 2) throw std::invalid_argument("gen_synthetic_blobs: need input_dim >= 2");
    if (n_per_class < 1) throw std::invalid_argument("gen_synthetic_blobs: need n_per_class >= 1");

    // Class centers from their own stream so sample count does not move them.
    std::vector<std::vector<double>> centers(num_classes);
    Rng center_rng(Rng::derive(seed, 0xb10b5, 0));
    for (int k = 0; k < num_classes; ++k) {
        std::vector<double> dir(input_dim);
        double norm = 0.0;
        for (double& v : dir) {
            v = center_rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) norm = 1.0;
        for (double& v : dir) v = 2.0 * v / norm;
        centers[k] = std::move(dir);
    }

    Dataset out;
    out.count = static_cast<std::size_t>(num_classes) * n_per_class;
    out.input_dim = input_dim;
    out.num_classes = num_classes;
    out.provenance = "synthetic";
    out.features.resize(out.count * input_dim);
    out.labels.resize(out.count);

    Rng sample_rng(Rng::derive(seed, 0xb10b5, 1));
    std::size_t row = 0;
    for (int k = 0; k < num_classes; ++k) {
        for (int i = 0; i < n_per_class; ++i, ++row) {
            double* dst = out.features.data() + row * input_dim;
            for (int j = 0; j < input_dim; ++j) {
                dst[j] = centers[k][j] + spread * sample_rng.normal();
            }
            out.labels[row] = k;
        }
    }
    return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw format_error("cannot open IDX image file '" + images_path + "'");
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw format_error("cannot open IDX label file '" + labels_path + "'");

    const std::uint32_t img_magic = read_u32_be(img, "image magic", images_path);
    if (img_magic != kImageMagic) {
        std::ostringstream oss;
        oss << "bad image magic in '" << images_path << "': got 0x" << std::hex << img_magic
            << ", want 0x" << kImageMagic;
        throw format_error(oss.str());
    }
    const std::uint32_t n_images = read_u32_be(img, "image count", images_path);
    const std::uint32_t rows = read_u32_be(img, "image rows", images_path);
    const std::uint32_t cols = read_u32_be(img, "image cols", images_path);

    const std::uint32_t lab_magic = read_u32_be(lab, "label magic", labels_path);
    if (lab_magic != kLabelMagic) {
        std::ostringstream oss;
        oss << "bad label magic in '" << labels_path << "': got 0x" << std::hex << lab_magic
            << ", want 0x" << kLabelMagic;
        throw format_error(oss.str());
    }
    const std::uint32_t n_labels = read_u32_be(lab, "label count", labels_path);
    if (n_images != n_labels) {
        std::ostringstream oss;
        oss << "IDX count mismatch: " << n_images << " images vs " << n_labels << " labels";
        throw format_error(oss.str());
    }
    if (n_images == 0) throw format_error("IDX image count is zero in '" + images_path + "'");

    const std::size_t dim = std::size_t(rows) * cols;
    std::vector<unsigned char> pixels(n_images * dim);
    img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (static_cast<std::size_t>(img.gcount()) != pixels.size())
        throw format_error("truncated IDX file '" + images_path + "' while reading pixel data");

    std::vector<unsigned char> raw_labels(n_images);
    lab.read(reinterpret_cast<char*>(raw_labels.data()),
             static_cast<std::streamsize>(raw_labels.size()));
    if (static_cast<std::size_t>(lab.gcount()) != raw_labels.size())
        throw format_error("truncated IDX file '" + labels_path + "' while reading label data");

    Dataset out;
    out.count = n_images;
    out.input_dim = static_cast<int>(dim);
    out.provenance = images_path;
    out.features.resize(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) out.features[i] = pixels[i] / 255.0;
    out.labels.resize(n_images);
    int max_label = 0;
    for (std::size_t i = 0; i < raw_labels.size(); ++i) {
        out.labels[i] = raw_labels[i];
        max_label = std::max(max_label, out.labels[i]);
    }
    out.num_classes = max_label + 1;
    return out;
}

void write_idx(const Dataset& data, const std::string& images_path,
               const std::string& labels_path, int rows, int cols) {
    if (std::size_t(rows) * cols != static_cast<std::size_t>(data.input_dim))
        throw std::invalid_argument("write_idx: rows*cols must equal input_dim");
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw format_error("cannot create IDX image file '" + images_path + "'");
    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw format_error("cannot create IDX label file '" + labels_path + "'");

    write_u32_be(img, kImageMagic);
    write_u32_be(img, static_cast<std::uint32_t>(data.count));
    write_u32_be(img, static_cast<std::uint32_t>(rows));
    write_u32_be(img, static_cast<std::uint32_t>(cols));
    std::vector<unsigned char> pixels(data.features.size());
    for (std::size_t i = 0; i < data.features.size(); ++i) {
        const double v = std::clamp(data.features[i], 0.0, 1.0);
        pixels[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    img.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));

    write_u32_be(lab, kLabelMagic);
    write_u32_be(lab, static_cast<std::uint32_t>(data.count));
    for (int y : data.labels) lab.put(static_cast<char>(y));
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw format_error("cannot open CSV file '" + path + "'");
    std::string header;
    if (!std::getline(in, header)) throw format_error("empty CSV file '" + path + "'");

    int dim = 0;
    {
        std::stringstream hs(header);
        std::string col;
        std::vector<std::string> cols;
        while (std::getline(hs, col, ',')) cols.push_back(col);
        if (cols.empty() || cols.back() != "label")
            throw format_error("CSV header must end with 'label' in '" + path + "'");
        dim = static_cast<int>(cols.size()) - 1;
        for (int j = 0; j < dim; ++j) {
            if (cols[j] != "f" + std::to_string(j))
                throw format_error("CSV header column " + std::to_string(j) +
                                   " must be f" + std::to_string(j) + " in '" + path + "'");
        }
    }

    Dataset out;
    out.input_dim = dim;
    out.provenance = path;
    std::string line;
    int max_label = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string cell;
        for (int j = 0; j < dim; ++j) {
            if (!std::getline(ls, cell, ','))
                throw format_error("CSV row " + std::to_string(line_no) + " has too few fields");
            out.features.push_back(std::stod(cell));
        }
        if (!std::getline(ls, cell, ','))
            throw format_error("CSV row " + std::to_string(line_no) + " is missing the label");
        const int y = std::stoi(cell);
        if (y < 0) throw format_error("CSV row " + std::to_string(line_no) + " has negative label");
        out.labels.push_back(y);
        max_label = std::max(max_label, y);
        ++out.count;
    }
    if (out.count == 0) throw format_error("CSV file '" + path + "' has no data rows");
    out.num_classes = max_label + 1;
    return out;
}

void write_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw format_error("cannot create CSV file '" + path + "'");
    for (int j = 0; j < data.input_dim; ++j) out << 'f' << j << ',';
    out << "label\n";
    for (std::size_t i = 0; i < data.count; ++i) {
        const auto row = data.row(i);
        for (double v : row) out << format_double(v) << ',';
        out << data.labels[i] << '\n';
    }
}

std::pair<Dataset, NormalizationStats> normalize(const Dataset& data, NormalizeMode mode) {
    if (mode == NormalizeMode::kNone) {
        NormalizationStats stats;
        stats.mean.assign(data.input_dim, 0.0);
        stats.std_dev.assign(data.input_dim, 1.0);
        return {data, stats};
    }
    if (data.count < 2)
        throw std::invalid_argument("normalize: need at least 2 samples to standardize");

    const std::size_t d = static_cast<std::size_t>(data.input_dim);
    NormalizationStats stats;
    stats.mean.assign(d, 0.0);
    stats.std_dev.assign(d, 0.0);
    for (std::size_t i = 0; i < data.count; ++i) {
        const double* row = data.features.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) stats.mean[j] += row[j];
    }
    for (std::size_t j = 0; j < d; ++j) stats.mean[j] /= static_cast<double>(data.count);
    for (std::size_t i = 0; i < data.count; ++i) {
        const double* row = data.features.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            const double delta = row[j] - stats.mean[j];
            stats.std_dev[j] += delta * delta;
        }
    }
    for (std::size_t j = 0; j < d; ++j)
        stats.std_dev[j] = std::sqrt(stats.std_dev[j] / static_cast<double>(data.count));

    return {apply_normalization(data, stats), stats};
}

Dataset apply_normalization(const Dataset& data, const NormalizationStats& stats) {
    if (stats.mean.size() != static_cast<std::size_t>(data.input_dim))
        throw std::invalid_argument("apply_normalization: stats dim mismatch");
    Dataset out = data;
    const std::size_t d = static_cast<std::size_t>(data.input_dim);
    for (std::size_t i = 0; i < out.count; ++i) {
        double* row = out.features.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            const double scale = stats.std_dev[j] < 1e-8 ? 1.0 : stats.std_dev[j];
            row[j] = (row[j] - stats.mean[j]) / scale;
        }
    }
    return out;
}

PartitionPlan dirichlet_partition(const Dataset& data, int num_clients, double alpha,
                                  std::uint64_t seed) {
    if (num_clients < 2) throw std::invalid_argument("dirichlet_partition: need C >= 2");
    if (!(alpha > 0.0)) throw std::invalid_argument("dirichlet_partition: need alpha > 0");
    data.validate();

    // Per-class index lists, in dataset order.
    std::vector<std::vector<std::size_t>> by_class(data.num_classes);
    for (std::size_t i = 0; i < data.count; ++i) by_class[data.labels[i]].push_back(i);

    constexpr int kMaxRetries = 100;
    for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
        const std::uint64_t attempt_seed = seed + static_cast<std::uint64_t>(attempt);
        std::vector<int> assignments(data.count, -1);
        std::vector<std::size_t> client_totals(num_clients, 0);
        bool underflow = false;

        for (int k = 0; k < data.num_classes && !underflow; ++k) {
            const auto& members = by_class[k];
            if (members.empty()) continue;
            Rng rng(Rng::derive(attempt_seed, stream::kPartition, static_cast<std::uint64_t>(k)));
            const auto props = rng.dirichlet_symmetric(alpha, num_clients);
            double total = 0.0;
            for (double p : props) total += p;
            if (total <= 0.0) {
                underflow = true;  // all gammas underflowed; treat as failed attempt
                break;
            }

            // Largest-remainder rounding of props * N_k, ties to lower client index.
            const std::size_t n_k = members.size();
            std::vector<std::size_t> counts(num_clients);
            std::vector<std::pair<double, int>> remainders(num_clients);
            std::size_t assigned = 0;
            for (int c = 0; c < num_clients; ++c) {
                const double exact = props[c] * static_cast<double>(n_k);
                counts[c] = static_cast<std::size_t>(std::floor(exact));
                remainders[c] = {exact - std::floor(exact), c};
                assigned += counts[c];
            }
            std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
            for (std::size_t r = 0; assigned < n_k; ++r, ++assigned) {
                counts[remainders[r % remainders.size()].second] += 1;
            }

            // Hand out this class's samples in shuffled order.
            auto order = shuffled_indices(n_k, rng);
            std::size_t pos = 0;
            for (int c = 0; c < num_clients; ++c) {
                for (std::size_t t = 0; t < counts[c]; ++t, ++pos) {
                    assignments[members[order[pos]]] = c;
                }
                client_totals[c] += counts[c];
            }
        }

        if (underflow) continue;
        const bool any_empty =
            std::any_of(client_totals.begin(), client_totals.end(),
                        [](std::size_t n) { return n == 0; });
        if (any_empty) continue;

        PartitionPlan plan;
        plan.assignments = std::move(assignments);
        plan.num_clients = num_clients;
        plan.alpha = alpha;
        plan.seed = seed;
        return plan;
    }
    throw partition_error("dirichlet_partition: could not give every client data after 100 "
                          "retries (alpha too small for this dataset size)");
}

std::vector<Dataset> split_by_plan(const Dataset& data, const PartitionPlan& plan) {
    if (plan.assignments.size() != data.count)
        throw std::invalid_argument("split_by_plan: plan does not match dataset");
    std::vector<std::vector<std::size_t>> rows(plan.num_clients);
    for (std::size_t i = 0; i < data.count; ++i) rows[plan.assignments[i]].push_back(i);
    std::vector<Dataset> out;
    out.reserve(plan.num_clients);
    for (int c = 0; c < plan.num_clients; ++c) {
        out.push_back(gather_rows(data, rows[c],
                                  data.provenance + "/client" + std::to_string(c)));
    }
    return out;
}

std::vector<std::vector<std::size_t>> partition_histogram(const Dataset& data,
                                                          const PartitionPlan& plan) {
    std::vector<std::vector<std::size_t>> hist(
        plan.num_clients, std::vector<std::size_t>(data.num_classes, 0));
    for (std::size_t i = 0; i < data.count; ++i) {
        hist[plan.assignments[i]][data.labels[i]] += 1;
    }
    return hist;
}

std::pair<Dataset, Dataset> holdout_server_validation(const Dataset& data, std::size_t n_val,
                                                      std::uint64_t seed) {
    if (n_val >= data.count)
        throw std::invalid_argument("holdout_server_validation: n_val must be < dataset size");
    Rng rng(Rng::derive(seed, stream::kHoldout));
    const auto order = shuffled_indices(data.count, rng);
    std::vector<bool> is_val(data.count, false);
    for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;

    std::vector<std::size_t> train_rows, val_rows;
    train_rows.reserve(data.count - n_val);
    val_rows.reserve(n_val);
    for (std::size_t i = 0; i < data.count; ++i) {
        (is_val[i] ? val_rows : train_rows).push_back(i);
    }
    return {gather_rows(data, train_rows, data.provenance + "/train"),
            gather_rows(data, val_rows, data.provenance + "/val")};
}

Dataset subsample(const Dataset& data, std::size_t n, std::uint64_t seed) {
    if (n == 0 || n > data.count)
        throw std::invalid_argument("subsample: n must be in [1, dataset size]");
    if (n == data.count) return data;
    Rng rng(Rng::derive(seed, stream::kData, 0x5b));
    auto order = shuffled_indices(data.count, rng);
    order.resize(n);
    std::sort(order.begin(), order.end());
    return gather_rows(data, order, data.provenance + "/subsample");
}

}  // namespace fedbens
