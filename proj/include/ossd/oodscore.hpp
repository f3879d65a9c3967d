#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ossd/linclf.hpp"

namespace ossd {

// Per-class means and a shrinkage-regularized pooled covariance.
struct ClassStats {
  std::vector<Eigen::VectorXd> means;
  Eigen::MatrixXd pooled_cov;
  double shrinkage = 0.0;
  Eigen::MatrixXd precision;

  Eigen::Index dim() const { return pooled_cov.rows(); }
  int num_classes() const { return static_cast<int>(means.size()); }
};

// S = within-class scatter / (N - K); cov = (1 - eps) * S + eps * trace(S) / p * I.
// Throws std::invalid_argument for an empty class or N <= K, NumericalError
// when the regularized covariance is singular.
ClassStats fit_class_stats(std::span<const Eigen::VectorXd> features, std::span<const int> labels,
                           int num_classes, double epsilon);

// Every score is oriented as ID-ness: higher means more in-distribution.
enum class ScoreKindId { Msp, Iac, Energy, Entropy, Mahalanobis, Euclidean };

struct ScoreKind {
  ScoreKindId id = ScoreKindId::Iac;
  double temperature = 1.0;  // Energy only

  static ScoreKind msp() { return {ScoreKindId::Msp}; }
  static ScoreKind iac() { return {ScoreKindId::Iac}; }
  static ScoreKind energy(double t = 1.0) { return {ScoreKindId::Energy, t}; }
  static ScoreKind entropy() { return {ScoreKindId::Entropy}; }
  static ScoreKind mahalanobis() { return {ScoreKindId::Mahalanobis}; }
  static ScoreKind euclidean() { return {ScoreKindId::Euclidean}; }

  bool needs_stats() const { return id == ScoreKindId::Mahalanobis || id == ScoreKindId::Euclidean; }
  // Msp and Iac live in [0, 1]; the rest are unbounded below.
  bool bounded() const { return id == ScoreKindId::Msp || id == ScoreKindId::Iac; }

  friend bool operator==(const ScoreKind&, const ScoreKind&) = default;
};

// Names: msp, iac, energy, entropy, mahalanobis, euclidean.
ScoreKind parse_score_kind(const std::string& name, double temperature = 1.0);
std::string to_string(ScoreKindId id);

// max over the first num_foreground entries of a normalized probability
// vector. num_foreground = 0 means all entries.
double msp_score(std::span<const double> probs, std::size_t num_foreground = 0);
// 1 - p[K] for a K+1 probability vector.
double iac_score(std::span<const double> probs, std::size_t K);
// T * log sum_i exp(f_i / T) over the foreground logits passed in.
double energy_score(std::span<const double> foreground_logits, double temperature);
// sum_i p_i log p_i (negative Shannon entropy), 0 log 0 = 0.
double entropy_score(std::span<const double> probs);
double mahalanobis_score(const Eigen::VectorXd& f, const ClassStats& stats);
double euclidean_score(const Eigen::VectorXd& f, const ClassStats& stats);

enum class FeatureSource { Hidden, Raw };

struct ScoreOptions {
  FeatureSource feature_source = FeatureSource::Hidden;
  // Entropy over all C outputs (default) or over the K foreground softmax.
  bool entropy_foreground_only = false;
};

// Scores each feature vector with `net`. K is the number of foreground
// classes; net must have K + 1 outputs for Iac. Distance kinds need stats
// fitted in the same feature space selected by options.feature_source.
std::vector<double> score_batch(const ScoreKind& kind, std::span<const Eigen::VectorXd> inputs,
                                const ClassifierParams& net, int K, const ClassStats* stats,
                                const ScoreOptions& options = {});

// Single-instance version of score_batch.
double score_one(const ScoreKind& kind, const Eigen::VectorXd& input, const ClassifierParams& net,
                 int K, const ClassStats* stats, const ScoreOptions& options = {});

// Scores rows that already are model outputs: probabilities for Msp / Iac /
// Entropy, logits for Energy, features for distance kinds. K follows the same
// meaning as above (Msp uses the first K entries, Iac expects K + 1 entries,
// Energy uses the first K logits).
double score_row(const ScoreKind& kind, const Eigen::VectorXd& row, int K, const ClassStats* stats);

// Largest observed score t with |{s >= t}| >= target_tnr * n.
double calibrate_threshold(std::span<const double> id_scores, double target_tnr);

struct PseudoLabel {
  std::size_t instance_ref = 0;
  int klass = 0;
  double confidence = 0.0;
  std::optional<double> idness;

  friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;
};

// Keeps pseudo-labels whose score >= delta_ood, in order, attaching idness.
std::vector<PseudoLabel> ood_filter(std::span<const PseudoLabel> pseudo, std::span<const double> scores,
                                    double delta_ood);

}  // namespace ossd
