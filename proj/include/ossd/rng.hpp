#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace ossd {

// All randomness in the library flows through mt19937_64 engines. Every
// consumer gets its own engine, keyed by (seed, stream), so that adding draws
// to one consumer never perturbs another.
using Rng = std::mt19937_64;

// Named stream ids. Values are part of the reproducibility contract.
namespace stream {
inline constexpr std::uint64_t kClusterMeans = 1;
inline constexpr std::uint64_t kLabeled = 2;
inline constexpr std::uint64_t kUnlabeled = 3;
inline constexpr std::uint64_t kTest = 4;
inline constexpr std::uint64_t kProbe = 5;
inline constexpr std::uint64_t kBackground = 6;
inline constexpr std::uint64_t kInitDetector = 10;
inline constexpr std::uint64_t kInitOod = 11;
inline constexpr std::uint64_t kBurnInBatches = 12;
inline constexpr std::uint64_t kOodBatches = 13;
inline constexpr std::uint64_t kSsodLabeled = 14;
inline constexpr std::uint64_t kSsodUnlabeled = 15;
inline constexpr std::uint64_t kJitter = 16;
inline constexpr std::uint64_t kSsodBackground = 17;
inline constexpr std::uint64_t kBackgroundPool = 18;
}  // namespace stream

Rng make_rng(std::uint64_t seed, std::uint64_t stream_id);

double uniform_real(Rng& rng, double lo, double hi);
double standard_normal(Rng& rng);
// Uniform integer in [lo, hi].
std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi);
// Uniform index in [0, n). n must be > 0.
std::size_t uniform_index(Rng& rng, std::size_t n);

Eigen::VectorXd normal_vector(Rng& rng, Eigen::Index dim, double stddev);

}  // namespace ossd
