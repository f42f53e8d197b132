#pragma once

#include <cstdint>
#include <vector>

#include "fedbens/model.hpp"

namespace fedbens {

// One-shot aggregation baselines. Both merge already-trained client models;
// neither needs another communication round.

// Sample-size weighted parameter mean (no neuron alignment).
ParamVector one_shot_fedavg(const std::vector<ParamVector>& models,
                            const std::vector<std::uint64_t>& sizes);

// Elementwise (sum_c F_c * w_c) / (sum_c F_c) with diagonal Fisher weights.
ParamVector fisher_merge_diag(const std::vector<ParamVector>& means,
                              const std::vector<std::vector<double>>& fishers);

}  // namespace fedbens
