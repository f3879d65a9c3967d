#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ossd/linclf.hpp"
#include "ossd/metrics.hpp"
#include "ossd/oodscore.hpp"
#include "ossd/rng.hpp"
#include "ossd/synthdata.hpp"

namespace ossd {

enum class Mode { Baseline, Offline, Online };

Mode parse_mode(const std::string& name);  // baseline | offline | online
std::string to_string(Mode mode);

// OOD filtering threshold. Auto uses 0.5 for bounded scores (msp, iac) and the
// TNR-95 calibrated threshold on labeled ID scores otherwise.
struct DeltaOod {
  enum class Rule { Fixed, Auto, CalibratedTnr95 };
  Rule rule = Rule::Auto;
  double value = 0.5;

  static DeltaOod fixed(double v) { return {Rule::Fixed, v}; }
  static DeltaOod accept_all() { return fixed(-std::numeric_limits<double>::infinity()); }

  friend bool operator==(const DeltaOod&, const DeltaOod&) = default;
};

struct SelfTrainConfig {
  double lambda_unsup = 1.0;
  double tau_conf = 0.5;
  DeltaOod delta_ood;
  double alpha = 0.999;
  double lambda_ood = 1.0;
  double eta = 0.01;
  double momentum = 0.0;
  int iters_supervised = 500;
  int iters_ood = 500;
  int iters_ssod = 2000;
  int batch_labeled = 32;
  int batch_unlabeled = 32;
  int checkpoint_every = 100;
  double sigma_aug = 0.3;
  ScoreKind score_kind = ScoreKind::iac();
  int hidden_width = 32;
  double init_scale = 0.5;
  double shrinkage = 0.05;
  FeatureSource feature_source = FeatureSource::Hidden;
  bool entropy_foreground_only = false;
  int n_background = 2000;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the offending field.
  void validate() const;
  ScoreOptions score_options() const { return {feature_source, entropy_foreground_only}; }

  friend bool operator==(const SelfTrainConfig&, const SelfTrainConfig&) = default;
};

struct Checkpoint {
  std::size_t iteration = 0;
  std::size_t n_pseudo_id = 0;
  std::size_t n_pseudo_ood = 0;
  double fp_rate = 0.0;
  double test_acc = 0.0;
  double ood_auroc = 0.0;  // NaN when the probe set lacks an origin

  friend bool operator==(const Checkpoint& a, const Checkpoint& b);
};

struct Telemetry {
  std::vector<Checkpoint> rows;

  friend bool operator==(const Telemetry&, const Telemetry&) = default;
};

// Supervised burn-in of a K-output detector. iters_supervised = 0 returns the
// initialization.
ClassifierParams train_supervised(const SelfTrainConfig& cfg, const std::vector<Bag>& labeled, int K);

// Trains a fresh K+1 network: labeled foreground keeps its class, background
// goes to class K, each batch holds batch_labeled of each.
ClassifierParams train_offline_ood(const SelfTrainConfig& cfg, const std::vector<Bag>& labeled,
                                   std::span<const Instance> background, int K);

// Teacher prediction on clean features; keeps instances with confidence >= tau.
// instance_ref indexes `batch`.
std::vector<PseudoLabel> pseudo_label(const ClassifierParams& teacher, std::span<const Instance> batch, int K,
                                      double tau_conf);

struct SsodState {
  TeacherStudent ts;
  int K = 0;
  std::optional<ClassifierParams> ood_net;  // Offline mode; never modified
  std::optional<ClassStats> ood_stats;      // for distance score kinds
  double delta_ood = -std::numeric_limits<double>::infinity();
  MomentumSgd optimizer;
  Rng jitter_rng;
};

struct StepTrace {
  std::vector<PseudoLabel> thresholded;
  std::vector<PseudoLabel> kept;
  double loss = 0.0;
};

// One self-training iteration: pseudo-label, filter (Offline), student SGD
// step on L_sup + lambda * L_unsup (+ lambda_ood * L_ood in Online), EMA.
StepTrace ssod_step(SsodState& state, std::span<const Instance> labeled_batch,
                    std::span<const Instance> unlabeled_batch, std::span<const Instance> background_batch,
                    const SelfTrainConfig& cfg, Mode mode);

// SGD + EMA on the labeled batch alone (what ssod_step reduces to at lambda = 0).
void supervised_step(SsodState& state, std::span<const Instance> labeled_batch, const SelfTrainConfig& cfg);

// AUROC of `kind` scores of ID vs OOD probe instances. Throws when the probe
// set lacks either origin.
double probe_ood_auroc(const ClassifierParams& net, int K, std::span<const Instance> probe, const ScoreKind& kind,
                       const ClassStats* stats, const ScoreOptions& options = {});

// Same scoring as probe_ood_auroc, summarized as AUROC and FPR@TNR{50,75,95}.
MetricReport probe_report(const ClassifierParams& net, int K, std::span<const Instance> probe, const ScoreKind& kind,
                          const ClassStats* stats, const ScoreOptions& options = {});

// Fraction of instances whose overall argmax is the abstention output K.
double abstention_rate(const ClassifierParams& net, int K, std::span<const Instance> instances);

// Class statistics of `net` features (hidden or raw) over labeled instances.
ClassStats fit_stats_for(const ClassifierParams& net, std::span<const Instance> labeled, int K,
                         const SelfTrainConfig& cfg);

struct PipelineHooks {
  // Called after every ssod_step with the 1-based iteration number.
  std::function<void(std::size_t, const StepTrace&, const SsodState&)> on_step;
};

struct PipelineResult {
  TeacherStudent ts;
  Telemetry telemetry;
  ClassifierParams burn_in;
  std::optional<ClassifierParams> offline_net;
  std::optional<ClassStats> offline_stats;
  double delta_ood = -std::numeric_limits<double>::infinity();
};

// Burn-in, teacher <- student, (Offline) offline OOD training, then
// iters_ssod self-training steps with telemetry at iteration 0, every
// checkpoint_every iterations, and the final iteration.
PipelineResult run_pipeline(Mode mode, const SelfTrainConfig& cfg, const Scenario& scenario,
                            const PipelineHooks& hooks = {});

}  // namespace ossd
