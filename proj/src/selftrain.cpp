#include "ossd/selftrain.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

#include "ossd/errors.hpp"

namespace ossd {
namespace {

void require(bool ok, const std::string& field, const std::string& rule) {
  if (!ok) throw ConfigError("invalid self-training config: " + field + " " + rule);
}

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

std::vector<Instance> sample_batch(Rng& rng, std::span<const Instance> pool, int n) {
  std::vector<Instance> batch;
  if (pool.empty()) return batch;
  batch.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) batch.push_back(pool[uniform_index(rng, pool.size())]);
  return batch;
}

std::vector<Sample> as_samples(std::span<const Instance> instances, int background_target, double weight) {
  std::vector<Sample> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) {
    const int target = inst.origin.is_id() ? inst.origin.index : background_target;
    out.push_back({inst.features, target, weight});
  }
  return out;
}

void accumulate(ClassifierParams& acc, const ClassifierParams& g) {
  acc.w1 += g.w1;
  acc.b1 += g.b1;
  acc.w2 += g.w2;
  acc.b2 += g.b2;
}

std::vector<Instance> labeled_instances(const std::vector<Bag>& labeled) {
  std::vector<Instance> flat = flatten(labeled);
  for (const auto& inst : flat) {
    if (!inst.origin.is_id()) throw std::invalid_argument("labeled set contains a non-ID instance");
  }
  return flat;
}

// Burn-in for a detector with `outputs` classes. When background is given the
// abstention class K is trained alongside (Online mode's OOD head).
ClassifierParams burn_in(const SelfTrainConfig& cfg, const std::vector<Bag>& labeled, int K, int outputs,
                         std::span<const Instance> background) {
  const auto pool = labeled_instances(labeled);
  if (pool.empty()) throw std::invalid_argument("train_supervised: empty labeled set");
  const auto d = pool.front().features.size();
  ClassifierParams params = init_params(d, cfg.hidden_width, outputs, cfg.seed, cfg.init_scale, stream::kInitDetector);
  Rng rng = make_rng(cfg.seed, stream::kBurnInBatches);
  Rng bg_rng = make_rng(cfg.seed, stream::kSsodBackground + 100);
  MomentumSgd opt{cfg.momentum, {}};
  for (int it = 0; it < cfg.iters_supervised; ++it) {
    const auto batch = sample_batch(rng, pool, cfg.batch_labeled);
    const auto samples = as_samples(batch, K, 1.0);
    ClassifierParams grads = ce_loss_and_grad(params, samples).grad;
    if (!background.empty() && cfg.lambda_ood > 0.0) {
      auto ood = as_samples(batch, K, cfg.lambda_ood);
      const auto bg = as_samples(sample_batch(bg_rng, background, cfg.batch_labeled), K, cfg.lambda_ood);
      ood.insert(ood.end(), bg.begin(), bg.end());
      accumulate(grads, ce_loss_and_grad(params, ood).grad);
    }
    params = opt.step(params, grads, cfg.eta);
  }
  return params;
}

}  // namespace

bool operator==(const Checkpoint& a, const Checkpoint& b) {
  return a.iteration == b.iteration && a.n_pseudo_id == b.n_pseudo_id && a.n_pseudo_ood == b.n_pseudo_ood &&
         same_bits(a.fp_rate, b.fp_rate) && same_bits(a.test_acc, b.test_acc) && same_bits(a.ood_auroc, b.ood_auroc);
}

Mode parse_mode(const std::string& name) {
  if (name == "baseline") return Mode::Baseline;
  if (name == "offline") return Mode::Offline;
  if (name == "online") return Mode::Online;
  throw ConfigError("unknown mode '" + name + "' (expected baseline, offline or online)");
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::Baseline: return "baseline";
    case Mode::Offline: return "offline";
    case Mode::Online: return "online";
  }
  return "unknown";
}

void SelfTrainConfig::validate() const {
  require(std::isfinite(lambda_unsup) && lambda_unsup >= 0.0, "lambda_unsup", "must be finite and >= 0");
  require(tau_conf > 0.0 && tau_conf < 1.0, "tau_conf", "must lie in (0, 1)");
  require(delta_ood.rule != DeltaOod::Rule::Fixed || !std::isnan(delta_ood.value), "delta_ood", "must not be NaN");
  require(alpha >= 0.0 && alpha <= 1.0, "alpha", "must lie in [0, 1]");
  require(std::isfinite(lambda_ood) && lambda_ood >= 0.0, "lambda_ood", "must be finite and >= 0");
  require(std::isfinite(eta) && eta > 0.0, "eta", "must be finite and > 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum", "must lie in [0, 1)");
  require(iters_supervised >= 0, "iters_supervised", "must be >= 0");
  require(iters_ood >= 0, "iters_ood", "must be >= 0");
  require(iters_ssod >= 0, "iters_ssod", "must be >= 0");
  require(batch_labeled >= 1, "batch_labeled", "must be >= 1");
  require(batch_unlabeled >= 0, "batch_unlabeled", "must be >= 0");
  require(checkpoint_every >= 1, "checkpoint_every", "must be >= 1");
  require(std::isfinite(sigma_aug) && sigma_aug >= 0.0, "sigma_aug", "must be finite and >= 0");
  require(score_kind.temperature > 0.0, "energy_temperature", "must be > 0");
  require(hidden_width >= 1, "hidden_width", "must be >= 1");
  require(std::isfinite(init_scale) && init_scale > 0.0, "init_scale", "must be finite and > 0");
  require(shrinkage >= 0.0 && shrinkage <= 1.0, "shrinkage", "must lie in [0, 1]");
  require(n_background >= 1, "n_background", "must be >= 1");
}

ClassifierParams train_supervised(const SelfTrainConfig& cfg, const std::vector<Bag>& labeled, int K) {
  return burn_in(cfg, labeled, K, K, {});
}

ClassifierParams train_offline_ood(const SelfTrainConfig& cfg, const std::vector<Bag>& labeled,
                                   std::span<const Instance> background, int K) {
  if (background.empty()) throw std::invalid_argument("train_offline_ood: empty background set");
  const auto pool = labeled_instances(labeled);
  if (pool.empty()) throw std::invalid_argument("train_offline_ood: empty labeled set");
  const auto d = pool.front().features.size();
  ClassifierParams params = init_params(d, cfg.hidden_width, K + 1, cfg.seed, cfg.init_scale, stream::kInitOod);
  Rng rng = make_rng(cfg.seed, stream::kOodBatches);
  MomentumSgd opt{cfg.momentum, {}};
  for (int it = 0; it < cfg.iters_ood; ++it) {
    auto samples = as_samples(sample_batch(rng, pool, cfg.batch_labeled), K, 1.0);
    const auto bg = as_samples(sample_batch(rng, background, cfg.batch_labeled), K, 1.0);
    samples.insert(samples.end(), bg.begin(), bg.end());
    params = opt.step(params, ce_loss_and_grad(params, samples).grad, cfg.eta);
  }
  return params;
}

std::vector<PseudoLabel> pseudo_label(const ClassifierParams& teacher, std::span<const Instance> batch, int K,
                                      double tau_conf) {
  std::vector<PseudoLabel> out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Prediction p = predict(teacher, batch[i].features, K);
    if (p.confidence >= tau_conf) out.push_back({i, p.klass, p.confidence, std::nullopt});
  }
  return out;
}

void supervised_step(SsodState& state, std::span<const Instance> labeled_batch, const SelfTrainConfig& cfg) {
  const auto samples = as_samples(labeled_batch, state.K, 1.0);
  const ClassifierParams grads = ce_loss_and_grad(state.ts.student, samples).grad;
  state.ts.student = state.optimizer.step(state.ts.student, grads, cfg.eta);
  ema_update_in_place(state.ts);
}

StepTrace ssod_step(SsodState& state, std::span<const Instance> labeled_batch,
                    std::span<const Instance> unlabeled_batch, std::span<const Instance> background_batch,
                    const SelfTrainConfig& cfg, Mode mode) {
  const int K = state.K;
  const auto outputs = state.ts.student.num_outputs();
  if (mode == Mode::Offline && !state.ood_net) throw std::invalid_argument("ssod_step: offline mode without an OOD network");
  if (mode == Mode::Online && outputs != K + 1) throw std::invalid_argument("ssod_step: online mode needs a K+1 detector");
  if (mode != Mode::Online && outputs != K) throw std::invalid_argument("ssod_step: detector must have K outputs");
  if (labeled_batch.empty()) throw std::invalid_argument("ssod_step: empty labeled batch");

  StepTrace trace;
  trace.thresholded = pseudo_label(state.ts.teacher, unlabeled_batch, K, cfg.tau_conf);
  if (mode == Mode::Offline) {
    std::vector<double> scores;
    scores.reserve(trace.thresholded.size());
    const ClassStats* stats = state.ood_stats ? &*state.ood_stats : nullptr;
    for (const auto& p : trace.thresholded) {
      scores.push_back(score_one(cfg.score_kind, unlabeled_batch[p.instance_ref].features, *state.ood_net, K, stats,
                                 cfg.score_options()));
    }
    trace.kept = ood_filter(trace.thresholded, scores, state.delta_ood);
  } else {
    trace.kept = trace.thresholded;
  }

  const auto sup = as_samples(labeled_batch, K, 1.0);
  LossAndGrad total = ce_loss_and_grad(state.ts.student, sup);

  const bool use_unsup = cfg.lambda_unsup > 0.0 && !trace.kept.empty();
  const bool use_ood = mode == Mode::Online && cfg.lambda_ood > 0.0;
  std::vector<Sample> pseudo;
  if (!trace.kept.empty() && (use_unsup || use_ood)) {
    pseudo.reserve(trace.kept.size());
    for (const auto& p : trace.kept) {
      const auto& x = unlabeled_batch[p.instance_ref].features;
      Eigen::VectorXd view = x;
      if (cfg.sigma_aug > 0.0) view += normal_vector(state.jitter_rng, x.size(), cfg.sigma_aug);
      pseudo.push_back({std::move(view), p.klass, 1.0});
    }
  }
  if (use_unsup) {
    for (auto& s : pseudo) s.weight = cfg.lambda_unsup;
    const LossAndGrad u = ce_loss_and_grad(state.ts.student, pseudo);
    total.loss += u.loss;
    accumulate(total.grad, u.grad);
  }
  if (use_ood) {
    // Labeled foreground, background as class K, and pseudo-labeled instances
    // as their pseudo class all supervise the shared trunk.
    auto ood = as_samples(labeled_batch, K, cfg.lambda_ood);
    const auto bg = as_samples(background_batch, K, cfg.lambda_ood);
    ood.insert(ood.end(), bg.begin(), bg.end());
    for (auto s : pseudo) {
      s.weight = cfg.lambda_ood;
      ood.push_back(std::move(s));
    }
    const LossAndGrad o = ce_loss_and_grad(state.ts.student, ood);
    total.loss += o.loss;
    accumulate(total.grad, o.grad);
  }

  state.ts.student = state.optimizer.step(state.ts.student, total.grad, cfg.eta);
  ema_update_in_place(state.ts);
  trace.loss = total.loss;
  return trace;
}

namespace {

std::pair<std::vector<double>, std::vector<double>> probe_scores(const ClassifierParams& net, int K,
                                                                 std::span<const Instance> probe,
                                                                 const ScoreKind& kind, const ClassStats* stats,
                                                                 const ScoreOptions& options) {
  std::vector<double> id_scores;
  std::vector<double> ood_scores;
  for (const auto& inst : probe) {
    const double s = score_one(kind, inst.features, net, K, stats, options);
    (inst.origin.is_id() ? id_scores : ood_scores).push_back(s);
  }
  if (id_scores.empty() || ood_scores.empty()) {
    throw std::invalid_argument("probe_ood_auroc: probe set needs both ID and non-ID instances");
  }
  return {std::move(id_scores), std::move(ood_scores)};
}

}  // namespace

MetricReport probe_report(const ClassifierParams& net, int K, std::span<const Instance> probe, const ScoreKind& kind,
                          const ClassStats* stats, const ScoreOptions& options) {
  const auto [id_scores, ood_scores] = probe_scores(net, K, probe, kind, stats, options);
  return evaluate_scores(id_scores, ood_scores);
}

double probe_ood_auroc(const ClassifierParams& net, int K, std::span<const Instance> probe, const ScoreKind& kind,
                       const ClassStats* stats, const ScoreOptions& options) {
  const auto [id_scores, ood_scores] = probe_scores(net, K, probe, kind, stats, options);
  return auroc(id_scores, ood_scores);
}

double abstention_rate(const ClassifierParams& net, int K, std::span<const Instance> instances) {
  if (net.num_outputs() != K + 1) throw std::invalid_argument("abstention_rate: network needs K+1 outputs");
  if (instances.empty()) return 0.0;
  std::size_t abstained = 0;
  for (const auto& inst : instances) {
    const Eigen::VectorXd logits = forward(net, inst.features).logits;
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    if (best == K) ++abstained;
  }
  return static_cast<double>(abstained) / static_cast<double>(instances.size());
}

ClassStats fit_stats_for(const ClassifierParams& net, std::span<const Instance> labeled, int K,
                         const SelfTrainConfig& cfg) {
  std::vector<Eigen::VectorXd> feats;
  std::vector<int> labels;
  for (const auto& inst : labeled) {
    feats.push_back(cfg.feature_source == FeatureSource::Hidden ? forward(net, inst.features).hidden
                                                                : inst.features);
    labels.push_back(inst.origin.index);
  }
  return fit_class_stats(feats, labels, K, cfg.shrinkage);
}

namespace {

struct CheckpointContext {
  const Scenario& scenario;
  const SelfTrainConfig& cfg;
  Mode mode;
  int K;
  std::span<const Instance> labeled;
  std::span<const Instance> unlabeled;
  std::vector<Origin> truth;
  std::size_t n_id_available = 0;
  std::vector<double> pool_ood_scores;  // Offline: frozen-net score per unlabeled instance
  double delta_ood = 0.0;
};

ScoreKind telemetry_kind(const ScoreKind& configured, const ClassifierParams& net, int K) {
  if (configured.id == ScoreKindId::Iac && net.num_outputs() == K) return ScoreKind::msp();
  return configured;
}

Checkpoint record(const CheckpointContext& ctx, std::size_t iteration, const ClassifierParams& teacher) {
  Checkpoint cp;
  cp.iteration = iteration;
  auto pseudo = pseudo_label(teacher, ctx.unlabeled, ctx.K, ctx.cfg.tau_conf);
  if (ctx.mode == Mode::Offline) {
    std::vector<double> scores;
    scores.reserve(pseudo.size());
    for (const auto& p : pseudo) scores.push_back(ctx.pool_ood_scores[p.instance_ref]);
    pseudo = ood_filter(pseudo, scores, ctx.delta_ood);
  }
  const PseudoStats st = pseudo_stats(pseudo, ctx.truth, ctx.n_id_available);
  cp.n_pseudo_id = st.n_pseudo_id;
  cp.n_pseudo_ood = st.n_pseudo_ood;
  cp.fp_rate = st.fp_rate;
  cp.test_acc = test_accuracy(teacher, ctx.scenario.test, ctx.K);

  bool has_id = false;
  bool has_ood = false;
  for (const auto& inst : ctx.scenario.probe) {
    has_id = has_id || inst.origin.is_id();
    has_ood = has_ood || !inst.origin.is_id();
  }
  if (!has_id || !has_ood) {
    cp.ood_auroc = std::numeric_limits<double>::quiet_NaN();
    return cp;
  }
  const ScoreKind kind = telemetry_kind(ctx.cfg.score_kind, teacher, ctx.K);
  std::optional<ClassStats> stats;
  if (kind.needs_stats()) stats = fit_stats_for(teacher, ctx.labeled, ctx.K, ctx.cfg);
  cp.ood_auroc = probe_ood_auroc(teacher, ctx.K, ctx.scenario.probe, kind, stats ? &*stats : nullptr,
                                 ctx.cfg.score_options());
  return cp;
}

}  // namespace

PipelineResult run_pipeline(Mode mode, const SelfTrainConfig& cfg, const Scenario& scenario,
                            const PipelineHooks& hooks) {
  cfg.validate();
  const int K = scenario.config.K;
  const auto labeled = labeled_instances(scenario.labeled);
  if (labeled.empty()) throw std::invalid_argument("run_pipeline: empty labeled set");
  const auto unlabeled = flatten(scenario.unlabeled);

  std::vector<Instance> background;
  if (mode != Mode::Baseline) {
    background = sample_background(scenario.config, static_cast<std::size_t>(cfg.n_background), cfg.seed);
  }

  PipelineResult result;
  const int outputs = mode == Mode::Online ? K + 1 : K;
  result.burn_in = burn_in(cfg, scenario.labeled, K, outputs,
                           mode == Mode::Online ? std::span<const Instance>(background) : std::span<const Instance>());

  SsodState state;
  state.K = K;
  state.ts = {result.burn_in, result.burn_in, cfg.alpha};
  state.optimizer = {cfg.momentum, {}};
  state.jitter_rng = make_rng(cfg.seed, stream::kJitter);

  CheckpointContext ctx{scenario, cfg, mode, K, labeled, unlabeled, {}, 0, {}, 0.0};
  for (const auto& inst : unlabeled) {
    ctx.truth.push_back(inst.origin);
    if (inst.origin.is_id()) ++ctx.n_id_available;
  }

  if (mode == Mode::Offline) {
    state.ood_net = train_offline_ood(cfg, scenario.labeled, background, K);
    if (cfg.score_kind.needs_stats()) state.ood_stats = fit_stats_for(*state.ood_net, labeled, K, cfg);
    const ClassStats* stats = state.ood_stats ? &*state.ood_stats : nullptr;
    switch (cfg.delta_ood.rule) {
      case DeltaOod::Rule::Fixed:
        state.delta_ood = cfg.delta_ood.value;
        break;
      case DeltaOod::Rule::Auto:
      case DeltaOod::Rule::CalibratedTnr95:
        if (cfg.delta_ood.rule == DeltaOod::Rule::Auto && cfg.score_kind.bounded()) {
          state.delta_ood = 0.5;
        } else {
          std::vector<Eigen::VectorXd> xs;
          for (const auto& inst : labeled) xs.push_back(inst.features);
          const auto id_scores = score_batch(cfg.score_kind, xs, *state.ood_net, K, stats, cfg.score_options());
          state.delta_ood = calibrate_threshold(id_scores, 0.95);
        }
        break;
    }
    std::vector<Eigen::VectorXd> xs;
    xs.reserve(unlabeled.size());
    for (const auto& inst : unlabeled) xs.push_back(inst.features);
    ctx.pool_ood_scores = score_batch(cfg.score_kind, xs, *state.ood_net, K, stats, cfg.score_options());
    ctx.delta_ood = state.delta_ood;
  }

  result.telemetry.rows.push_back(record(ctx, 0, state.ts.teacher));

  Rng labeled_rng = make_rng(cfg.seed, stream::kSsodLabeled);
  Rng unlabeled_rng = make_rng(cfg.seed, stream::kSsodUnlabeled);
  Rng background_rng = make_rng(cfg.seed, stream::kSsodBackground);
  for (int it = 1; it <= cfg.iters_ssod; ++it) {
    const auto lb = sample_batch(labeled_rng, labeled, cfg.batch_labeled);
    const auto ub = sample_batch(unlabeled_rng, unlabeled, cfg.batch_unlabeled);
    std::vector<Instance> bb;
    if (mode == Mode::Online) bb = sample_batch(background_rng, background, cfg.batch_labeled);
    const StepTrace trace = ssod_step(state, lb, ub, bb, cfg, mode);
    if (hooks.on_step) hooks.on_step(static_cast<std::size_t>(it), trace, state);
    if (it % cfg.checkpoint_every == 0 || it == cfg.iters_ssod) {
      result.telemetry.rows.push_back(record(ctx, static_cast<std::size_t>(it), state.ts.teacher));
    }
  }

  result.ts = std::move(state.ts);
  result.offline_net = std::move(state.ood_net);
  result.offline_stats = std::move(state.ood_stats);
  result.delta_ood = state.delta_ood;
  return result;
}

}  // namespace ossd
