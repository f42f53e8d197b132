#include "fedbens/baselines.hpp"

#include <stdexcept>

namespace fedbens {

ParamVector one_shot_fedavg(const std::vector<ParamVector>& models,
                            const std::vector<std::uint64_t>& sizes) {
    if (models.empty()) throw std::invalid_argument("one_shot_fedavg: no models");
    if (models.size() != sizes.size())
        throw std::invalid_argument("one_shot_fedavg: model/size count mismatch");

    double total = 0.0;
    for (std::uint64_t n : sizes) total += static_cast<double>(n);
    if (total <= 0.0) throw std::invalid_argument("one_shot_fedavg: total size is zero");

    ParamVector out = models.front();
    for (double& v : out.values) v = 0.0;
    for (std::size_t c = 0; c < models.size(); ++c) {
        if (models[c].dim() != out.dim())
            throw std::invalid_argument("one_shot_fedavg: model dimension mismatch");
        const double weight = static_cast<double>(sizes[c]) / total;
        for (std::size_t j = 0; j < out.dim(); ++j)
            out.values[j] += weight * models[c].values[j];
    }
    return out;
}

ParamVector fisher_merge_diag(const std::vector<ParamVector>& means,
                              const std::vector<std::vector<double>>& fishers) {
    if (means.empty()) throw std::invalid_argument("fisher_merge_diag: no models");
    if (means.size() != fishers.size())
        throw std::invalid_argument("fisher_merge_diag: mean/fisher count mismatch");

    const std::size_t d = means.front().dim();
    std::vector<double> numerator(d, 0.0);
    std::vector<double> denominator(d, 0.0);
    for (std::size_t c = 0; c < means.size(); ++c) {
        if (means[c].dim() != d || fishers[c].size() != d)
            throw std::invalid_argument("fisher_merge_diag: dimension mismatch");
        for (std::size_t j = 0; j < d; ++j) {
            if (!(fishers[c][j] > 0.0))
                throw std::invalid_argument("fisher_merge_diag: fisher entries must be > 0");
            numerator[j] += fishers[c][j] * means[c].values[j];
            denominator[j] += fishers[c][j];
        }
    }

    ParamVector out = means.front();
    for (std::size_t j = 0; j < d; ++j) out.values[j] = numerator[j] / denominator[j];
    return out;
}

}  // namespace fedbens
