#include "ossd/oodscore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ossd/errors.hpp"

namespace ossd {
namespace {

constexpr double kNormTolerance = 1e-6;

void require_normalized(std::span<const double> probs, const char* who) {
  if (probs.empty()) throw std::invalid_argument(std::string(who) + ": empty probability vector");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw std::invalid_argument(std::string(who) + ": negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kNormTolerance) {
    throw std::invalid_argument(std::string(who) + ": probabilities sum to " + std::to_string(sum));
  }
}

void require_dim(const Eigen::VectorXd& f, const ClassStats& stats, const char* who) {
  if (stats.means.empty()) throw std::invalid_argument(std::string(who) + ": stats have no classes");
  if (f.size() != stats.dim()) {
    throw std::invalid_argument(std::string(who) + ": feature dimension " + std::to_string(f.size()) +
                                " != stats dimension " + std::to_string(stats.dim()));
  }
}

std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

ClassStats fit_class_stats(std::span<const Eigen::VectorXd> features, std::span<const int> labels,
                           int num_classes, double epsilon) {
  if (features.size() != labels.size()) throw std::invalid_argument("fit_class_stats: features/labels length mismatch");
  if (num_classes < 1) throw std::invalid_argument("fit_class_stats: need at least one class");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("fit_class_stats: epsilon outside [0, 1]");
  if (features.empty()) throw std::invalid_argument("fit_class_stats: no samples");
  const Eigen::Index p = features.front().size();
  const auto n = features.size();
  const auto K = static_cast<std::size_t>(num_classes);

  std::vector<Eigen::VectorXd> sums(K, Eigen::VectorXd::Zero(p));
  std::vector<std::size_t> counts(K, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (features[i].size() != p) throw std::invalid_argument("fit_class_stats: inconsistent feature dimensions");
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw std::invalid_argument("fit_class_stats: label " + std::to_string(labels[i]) + " out of range");
    }
    sums[labels[i]] += features[i];
    ++counts[labels[i]];
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (counts[k] == 0) throw std::invalid_argument("fit_class_stats: class " + std::to_string(k) + " has no samples");
  }
  if (n <= K) throw std::invalid_argument("fit_class_stats: need more samples than classes (N - K > 0)");

  ClassStats stats;
  stats.shrinkage = epsilon;
  for (std::size_t k = 0; k < K; ++k) stats.means.push_back(sums[k] / static_cast<double>(counts[k]));

  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd c = features[i] - stats.means[labels[i]];
    scatter.noalias() += c * c.transpose();
  }
  scatter /= static_cast<double>(n - K);

  const double avg_var = scatter.trace() / static_cast<double>(p);
  stats.pooled_cov = (1.0 - epsilon) * scatter;
  stats.pooled_cov.diagonal().array() += epsilon * avg_var;
  stats.pooled_cov = 0.5 * (stats.pooled_cov + stats.pooled_cov.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(stats.pooled_cov);
  const Eigen::VectorXd ev = eig.eigenvalues();
  const double largest = std::max(std::abs(ev.maxCoeff()), std::numeric_limits<double>::min());
  if (!(ev.minCoeff() > largest * 1e-12) || ev.maxCoeff() <= 0.0) {
    throw NumericalError("fit_class_stats: pooled covariance is singular (smallest eigenvalue " +
                         std::to_string(ev.minCoeff()) + ")");
  }
  stats.precision = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  stats.precision = 0.5 * (stats.precision + stats.precision.transpose());
  return stats;
}

ScoreKind parse_score_kind(const std::string& name, double temperature) {
  if (name == "msp") return ScoreKind::msp();
  if (name == "iac") return ScoreKind::iac();
  if (name == "energy") {
    if (!(temperature > 0.0)) throw ConfigError("energy temperature must be > 0");
    return ScoreKind::energy(temperature);
  }
  if (name == "entropy") return ScoreKind::entropy();
  if (name == "mahalanobis") return ScoreKind::mahalanobis();
  if (name == "euclidean") return ScoreKind::euclidean();
  throw ConfigError("unknown score kind '" + name + "'");
}

std::string to_string(ScoreKindId id) {
  switch (id) {
    case ScoreKindId::Msp: return "msp";
    case ScoreKindId::Iac: return "iac";
    case ScoreKindId::Energy: return "energy";
    case ScoreKindId::Entropy: return "entropy";
    case ScoreKindId::Mahalanobis: return "mahalanobis";
    case ScoreKindId::Euclidean: return "euclidean";
  }
  return "unknown";
}

double msp_score(std::span<const double> probs, std::size_t num_foreground) {
  require_normalized(probs, "msp_score");
  const std::size_t k = num_foreground == 0 ? probs.size() : num_foreground;
  if (k > probs.size()) throw std::invalid_argument("msp_score: more foreground classes than outputs");
  return *std::max_element(probs.begin(), probs.begin() + static_cast<std::ptrdiff_t>(k));
}

double iac_score(std::span<const double> probs, std::size_t K) {
  if (probs.size() != K + 1) {
    throw std::invalid_argument("iac_score: expected " + std::to_string(K + 1) + " probabilities, got " +
                                std::to_string(probs.size()));
  }
  require_normalized(probs, "iac_score");
  return 1.0 - probs[K];
}

double energy_score(std::span<const double> foreground_logits, double temperature) {
  if (foreground_logits.empty()) throw std::invalid_argument("energy_score: empty logits");
  if (!(temperature > 0.0)) throw std::invalid_argument("energy_score: temperature must be > 0");
  Eigen::Map<const Eigen::VectorXd> v(foreground_logits.data(), static_cast<Eigen::Index>(foreground_logits.size()));
  return log_sum_exp(v, temperature);
}

double entropy_score(std::span<const double> probs) {
  require_normalized(probs, "entropy_score");
  double s = 0.0;
  for (double p : probs) {
    if (p > 0.0) s += p * std::log(p);
  }
  return std::min(s, 0.0);
}

double mahalanobis_score(const Eigen::VectorXd& f, const ClassStats& stats) {
  require_dim(f, stats, "mahalanobis_score");
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& mu : stats.means) {
    const Eigen::VectorXd c = f - mu;
    const double q = c.dot(stats.precision * c);
    best = std::max(best, -std::max(q, 0.0));
  }
  return best;
}

double euclidean_score(const Eigen::VectorXd& f, const ClassStats& stats) {
  require_dim(f, stats, "euclidean_score");
  double nearest = std::numeric_limits<double>::infinity();
  for (const auto& mu : stats.means) nearest = std::min(nearest, (f - mu).norm());
  return -nearest;
}

double score_one(const ScoreKind& kind, const Eigen::VectorXd& input, const ClassifierParams& net, int K,
                 const ClassStats* stats, const ScoreOptions& options) {
  if (K < 1 || K > net.num_outputs()) throw std::invalid_argument("score: K exceeds network outputs");
  if (kind.needs_stats() && stats == nullptr) {
    throw std::invalid_argument("score: " + to_string(kind.id) + " needs class statistics");
  }
  const ForwardResult fr = forward(net, input);
  switch (kind.id) {
    case ScoreKindId::Msp: {
      const Eigen::VectorXd p = softmax(fr.logits);
      return msp_score(as_span(p), static_cast<std::size_t>(K));
    }
    case ScoreKindId::Iac: {
      if (net.num_outputs() != K + 1) throw std::invalid_argument("score: iac needs a network with K+1 outputs");
      const Eigen::VectorXd p = softmax(fr.logits);
      return iac_score(as_span(p), static_cast<std::size_t>(K));
    }
    case ScoreKindId::Energy: {
      const Eigen::VectorXd fg = fr.logits.head(K);
      return energy_score(as_span(fg), kind.temperature);
    }
    case ScoreKindId::Entropy: {
      const Eigen::VectorXd p =
          options.entropy_foreground_only ? softmax(Eigen::VectorXd(fr.logits.head(K))) : softmax(fr.logits);
      return entropy_score(as_span(p));
    }
    case ScoreKindId::Mahalanobis:
      return mahalanobis_score(options.feature_source == FeatureSource::Hidden ? fr.hidden : input, *stats);
    case ScoreKindId::Euclidean:
      return euclidean_score(options.feature_source == FeatureSource::Hidden ? fr.hidden : input, *stats);
  }
  throw std::logic_error("score: unhandled kind");
}

std::vector<double> score_batch(const ScoreKind& kind, std::span<const Eigen::VectorXd> inputs,
                                const ClassifierParams& net, int K, const ClassStats* stats,
                                const ScoreOptions& options) {
  std::vector<double> out;
  out.reserve(inputs.size());
  for (const auto& x : inputs) out.push_back(score_one(kind, x, net, K, stats, options));
  return out;
}

double score_row(const ScoreKind& kind, const Eigen::VectorXd& row, int K, const ClassStats* stats) {
  const auto span = as_span(row);
  switch (kind.id) {
    case ScoreKindId::Msp:
      return msp_score(span, static_cast<std::size_t>(K));
    case ScoreKindId::Iac:
      return iac_score(span, static_cast<std::size_t>(K));
    case ScoreKindId::Energy:
      if (K > row.size()) throw std::invalid_argument("score: K exceeds row width");
      return energy_score(span.first(static_cast<std::size_t>(K)), kind.temperature);
    case ScoreKindId::Entropy:
      return entropy_score(span);
    case ScoreKindId::Mahalanobis:
    case ScoreKindId::Euclidean:
      if (stats == nullptr) throw std::invalid_argument("score: " + to_string(kind.id) + " needs class statistics");
      return kind.id == ScoreKindId::Mahalanobis ? mahalanobis_score(row, *stats) : euclidean_score(row, *stats);
  }
  throw std::logic_error("score: unhandled kind");
}

double calibrate_threshold(std::span<const double> id_scores, double target_tnr) {
  if (id_scores.empty()) throw std::invalid_argument("calibrate_threshold: empty score list");
  if (!(target_tnr > 0.0 && target_tnr <= 1.0)) throw std::invalid_argument("calibrate_threshold: target_tnr outside (0, 1]");
  std::vector<double> sorted(id_scores.begin(), id_scores.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  // Smallest count of retained ID scores that meets the target. The slack
  // absorbs representation error in products such as 0.95 * 100.
  const double needed = target_tnr * static_cast<double>(n) - 1e-9;
  auto k = static_cast<std::size_t>(std::ceil(needed));
  k = std::clamp<std::size_t>(k, 1, n);
  return sorted[n - k];
}

std::vector<PseudoLabel> ood_filter(std::span<const PseudoLabel> pseudo, std::span<const double> scores,
                                    double delta_ood) {
  if (pseudo.size() != scores.size()) throw std::invalid_argument("ood_filter: pseudo-labels and scores differ in length");
  std::vector<PseudoLabel> kept;
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    if (scores[i] >= delta_ood) {
      PseudoLabel p = pseudo[i];
      p.idness = scores[i];
      kept.push_back(p);
    }
  }
  return kept;
}

}  // namespace ossd
