#pragma once

#include <cstdint>
#include <vector>

namespace fedbens {

// Deterministic generator (splitmix64 core). Every random draw in the
// project goes through this class so that results are bit-reproducible
// across platforms and thread schedules. Independent streams are derived
// by hashing (seed, tag...) instead of advancing a shared generator.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();

    // Uniform in [0, 1).
    double next_double();

    double uniform(double lo, double hi);

    // Unbiased integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);

    // Standard normal via Box-Muller; consumes two uniforms per call.
    double normal();

    // Gamma(shape, 1), Marsaglia-Tsang; shape < 1 handled by boosting.
    double gamma(double shape);

    // One draw from Dirichlet(alpha * 1_k). Entries sum to 1 unless the
    // whole vector underflows (possible for very small alpha), in which
    // case all entries are 0 and the caller decides how to retry.
    std::vector<double> dirichlet_symmetric(double alpha, std::size_t k);

    // Derive an independent stream seed from a base seed plus tags.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t a,
                                std::uint64_t b = 0, std::uint64_t c = 0);

private:
    std::uint64_t state_;
};

// Stream tags used to split the global experiment seed. Values are
// arbitrary but fixed: changing them changes every result downstream.
namespace stream {
inline constexpr std::uint64_t kData = 0x01;
inline constexpr std::uint64_t kHoldout = 0x02;
inline constexpr std::uint64_t kPartition = 0x03;
inline constexpr std::uint64_t kInit = 0x04;
inline constexpr std::uint64_t kClientTrain = 0x05;
inline constexpr std::uint64_t kKfacSample = 0x06;
}  // namespace stream

}  // namespace fedbens
