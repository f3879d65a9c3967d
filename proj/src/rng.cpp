#include "ossd/rng.hpp"

namespace ossd {

Rng make_rng(std::uint64_t seed, std::uint64_t stream_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream_id),
                    static_cast<std::uint32_t>(stream_id >> 32)};
  return Rng(seq);
}

double uniform_real(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(rng);
}

double standard_normal(Rng& rng) {
  // Fresh distribution per draw: no cached second variate, so the stream
  // position depends only on the number of calls.
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  std::uniform_int_distribution<std::int64_t> dist(lo, hi);
  return dist(rng);
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(rng);
}

Eigen::VectorXd normal_vector(Rng& rng, Eigen::Index dim, double stddev) {
  Eigen::VectorXd v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v[i] = stddev * standard_normal(rng);
  return v;
}

}  // namespace ossd
