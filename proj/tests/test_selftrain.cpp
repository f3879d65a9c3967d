#include <doctest.h>

#include <cmath>

#include "ossd/errors.hpp"
#include "ossd/rng.hpp"
#include "ossd/selftrain.hpp"

using namespace ossd;

namespace {

// A smaller budget keeps the suite quick; the laws hold at any size.
SelfTrainConfig short_config(std::uint64_t seed) {
  SelfTrainConfig cfg;
  cfg.iters_supervised = 100;
  cfg.iters_ood = 100;
  cfg.iters_ssod = 200;
  cfg.checkpoint_every = 50;
  cfg.seed = seed;
  return cfg;
}

const Scenario& default_scenario() {
  static const Scenario s = generate_scenario(ScenarioConfig{}, 1);
  return s;
}

std::vector<Instance> labeled_flat() { return flatten(default_scenario().labeled); }

}  // namespace

TEST_CASE("config validation names the field") {
  SelfTrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.tau_conf = 1.0;
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("tau_conf") != std::string::npos);
  }
  SelfTrainConfig neg;
  neg.lambda_unsup = -1.0;
  CHECK_THROWS_AS(neg.validate(), ConfigError);
  SelfTrainConfig nan;
  nan.eta = std::nan("");
  CHECK_THROWS_AS(nan.validate(), ConfigError);
  CHECK(parse_mode("offline") == Mode::Offline);
  CHECK_THROWS_AS(parse_mode("hybrid"), ConfigError);
}

TEST_CASE("train_supervised") {
  SelfTrainConfig cfg = short_config(2);
  cfg.iters_supervised = 0;
  const int K = default_scenario().config.K;
  const ClassifierParams init = train_supervised(cfg, default_scenario().labeled, K);
  CHECK(init == init_params(ScenarioConfig{}.d, cfg.hidden_width, K, cfg.seed, cfg.init_scale, stream::kInitDetector));

  cfg.iters_supervised = 500;
  const ClassifierParams trained = train_supervised(cfg, default_scenario().labeled, K);
  CHECK(trained == train_supervised(cfg, default_scenario().labeled, K));
  CHECK(trained.num_outputs() == K);

  std::vector<Sample> all;
  for (const auto& inst : labeled_flat()) all.push_back({inst.features, inst.origin.index, 1.0});
  CHECK(ce_loss_and_grad(trained, all).loss < ce_loss_and_grad(init, all).loss);

  CHECK_THROWS_AS(train_supervised(cfg, std::vector<Bag>{}, K), std::invalid_argument);
}

TEST_CASE("train_offline_ood") {
  const Scenario& s = default_scenario();
  SelfTrainConfig cfg = short_config(4);
  cfg.iters_ood = 500;
  const auto background = sample_background(s.config, 2000, 4);
  const auto held_out = sample_background(s.config, 500, 404);

  const ClassifierParams net = train_offline_ood(cfg, s.labeled, background, s.config.K);
  CHECK(net.num_outputs() == s.config.K + 1);

  cfg.iters_ood = 0;
  const ClassifierParams untrained = train_offline_ood(cfg, s.labeled, background, s.config.K);
  CHECK(untrained == init_params(s.config.d, cfg.hidden_width, s.config.K + 1, cfg.seed, cfg.init_scale, stream::kInitOod));
  CHECK(abstention_rate(net, s.config.K, held_out) > abstention_rate(untrained, s.config.K, held_out));

  CHECK_THROWS_AS(train_offline_ood(cfg, s.labeled, std::vector<Instance>{}, s.config.K), std::invalid_argument);
}

TEST_CASE("pseudo_label") {
  // Zero trunk: logits equal b2 for every input.
  ClassifierParams fixed = ClassifierParams::zeros(2, 2, 3);
  fixed.b2 << std::log(0.7), std::log(0.2), std::log(0.1);
  const std::vector<Instance> one{{Eigen::Vector2d(1, 1), Origin::background()}};
  const auto kept = pseudo_label(fixed, one, 3, 0.5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].klass == 0);
  CHECK(std::abs(kept[0].confidence - 0.7) < 1e-12);
  CHECK(pseudo_label(fixed, one, 3, 0.8).empty());

  const ClassifierParams net = init_params(2, 6, 3, 5, 2.0);
  Rng rng = make_rng(5, 5);
  std::vector<Instance> batch;
  for (int i = 0; i < 10; ++i) batch.push_back({normal_vector(rng, 2, 2.0), Origin::background()});
  const double tau = 0.6;
  const auto out = pseudo_label(net, batch, 3, tau);
  std::size_t j = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Eigen::VectorXd p = softmax(forward(net, batch[i].features).logits);
    Eigen::Index arg = 0;
    const double conf = p.maxCoeff(&arg);
    if (conf >= tau) {
      REQUIRE(j < out.size());
      CHECK(out[j].instance_ref == i);
      CHECK(out[j].klass == arg);
      CHECK(std::abs(out[j].confidence - conf) < 1e-12);
      ++j;
    }
  }
  CHECK(j == out.size());
}

TEST_CASE("ssod_step degenerate cases") {
  const Scenario& s = default_scenario();
  const int K = s.config.K;
  SelfTrainConfig cfg = short_config(6);
  const ClassifierParams start = train_supervised(cfg, s.labeled, K);
  const auto labeled = labeled_flat();
  const auto unlabeled = flatten(s.unlabeled);
  const std::vector<Instance> lb(labeled.begin(), labeled.begin() + 32);
  const std::vector<Instance> ub(unlabeled.begin(), unlabeled.begin() + 32);

  auto fresh = [&] {
    SsodState st;
    st.K = K;
    st.ts = {start, start, cfg.alpha};
    st.jitter_rng = make_rng(cfg.seed, stream::kJitter);
    return st;
  };

  SUBCASE("lambda = 0 is a supervised step") {
    cfg.lambda_unsup = 0.0;
    SsodState a = fresh();
    SsodState b = fresh();
    ssod_step(a, lb, ub, {}, cfg, Mode::Baseline);
    supervised_step(b, lb, cfg);
    CHECK(a.ts.student == b.ts.student);
    CHECK(a.ts.teacher == b.ts.teacher);
  }
  SUBCASE("no surviving pseudo-labels contributes nothing") {
    cfg.tau_conf = 0.999999;
    SsodState a = fresh();
    SsodState b = fresh();
    const StepTrace t = ssod_step(a, lb, ub, {}, cfg, Mode::Baseline);
    supervised_step(b, lb, cfg);
    CHECK(t.kept.empty());
    CHECK(a.ts.student == b.ts.student);
  }
  SUBCASE("mode/state mismatch") {
    SsodState a = fresh();
    CHECK_THROWS_AS(ssod_step(a, lb, ub, {}, cfg, Mode::Offline), std::invalid_argument);
    CHECK_THROWS_AS(ssod_step(a, lb, ub, {}, cfg, Mode::Online), std::invalid_argument);
  }
}

TEST_CASE("pipeline degeneracy laws") {
  const Scenario& s = default_scenario();

  SUBCASE("iters_ssod = 0 returns the burn-in") {
    SelfTrainConfig cfg = short_config(7);
    cfg.iters_ssod = 0;
    const PipelineResult r = run_pipeline(Mode::Baseline, cfg, s);
    CHECK(r.ts.teacher == train_supervised(cfg, s.labeled, s.config.K));
    CHECK(r.ts.student == r.ts.teacher);
    REQUIRE(r.telemetry.rows.size() == 1);
    CHECK(r.telemetry.rows[0].iteration == 0);
  }

  SUBCASE("lambda = 0 equals supervised training on the labeled batches") {
    SelfTrainConfig cfg = short_config(8);
    cfg.lambda_unsup = 0.0;
    const PipelineResult r = run_pipeline(Mode::Baseline, cfg, s);

    const auto labeled = labeled_flat();
    SsodState st;
    st.K = s.config.K;
    st.ts = {r.burn_in, r.burn_in, cfg.alpha};
    Rng rng = make_rng(cfg.seed, stream::kSsodLabeled);
    for (int it = 0; it < cfg.iters_ssod; ++it) {
      std::vector<Instance> lb;
      for (int i = 0; i < cfg.batch_labeled; ++i) lb.push_back(labeled[uniform_index(rng, labeled.size())]);
      supervised_step(st, lb, cfg);
    }
    CHECK(st.ts.student == r.ts.student);
    CHECK(st.ts.teacher == r.ts.teacher);
  }

  SUBCASE("offline with delta = -inf equals baseline") {
    SelfTrainConfig cfg = short_config(9);
    const PipelineResult base = run_pipeline(Mode::Baseline, cfg, s);
    cfg.delta_ood = DeltaOod::accept_all();
    const PipelineResult off = run_pipeline(Mode::Offline, cfg, s);
    CHECK(base.ts.teacher == off.ts.teacher);
    CHECK(base.ts.student == off.ts.student);
    CHECK(base.telemetry == off.telemetry);
  }

  SUBCASE("no unlabeled bags matches the supervised baseline accuracy") {
    ScenarioConfig sc;
    sc.n_unlabeled_pure_id = 0;
    sc.n_unlabeled_mixed = 0;
    sc.n_unlabeled_pure_ood = 0;
    const Scenario empty = generate_scenario(sc, 1);
    SelfTrainConfig cfg = short_config(10);
    const PipelineResult r = run_pipeline(Mode::Baseline, cfg, empty);
    SelfTrainConfig sup = cfg;
    sup.lambda_unsup = 0.0;
    const PipelineResult ref = run_pipeline(Mode::Baseline, sup, empty);
    CHECK(r.telemetry.rows.back().test_acc == ref.telemetry.rows.back().test_acc);
    CHECK(r.telemetry.rows.back().n_pseudo_id == 0);
  }
}

TEST_CASE("pipeline invariants") {
  const Scenario& s = default_scenario();

  SUBCASE("EMA consistency over 10 steps") {
    SelfTrainConfig cfg = short_config(11);
    cfg.iters_ssod = 10;
    cfg.alpha = 0.9;
    std::vector<ClassifierParams> students;
    std::vector<ClassifierParams> teachers;
    PipelineHooks hooks;
    hooks.on_step = [&](std::size_t, const StepTrace&, const SsodState& st) {
      students.push_back(st.ts.student);
      teachers.push_back(st.ts.teacher);
    };
    const PipelineResult r = run_pipeline(Mode::Baseline, cfg, s, hooks);
    REQUIRE(students.size() == 10);
    for (std::size_t n = 1; n <= 10; ++n) {
      double worst = 0.0;
      for (std::size_t i = 0; i < r.burn_in.num_coefficients(); ++i) {
        double closed = std::pow(cfg.alpha, static_cast<double>(n)) * r.burn_in.coeff(i);
        for (std::size_t k = 1; k <= n; ++k) {
          closed += (1.0 - cfg.alpha) * std::pow(cfg.alpha, static_cast<double>(n - k)) * students[k - 1].coeff(i);
        }
        worst = std::max(worst, std::abs(closed - teachers[n - 1].coeff(i)));
      }
      CHECK(worst <= 1e-9);
    }
  }

  SUBCASE("offline network frozen and filtered set within thresholded set") {
    SelfTrainConfig cfg = short_config(12);
    const auto background = sample_background(s.config, static_cast<std::size_t>(cfg.n_background), cfg.seed);
    const ClassifierParams expected = train_offline_ood(cfg, s.labeled, background, s.config.K);
    bool frozen = true;
    bool subset = true;
    std::size_t filtered_out = 0;
    PipelineHooks hooks;
    hooks.on_step = [&](std::size_t, const StepTrace& t, const SsodState& st) {
      frozen = frozen && st.ood_net && *st.ood_net == expected;
      std::size_t j = 0;
      for (const auto& k : t.kept) {
        while (j < t.thresholded.size() && t.thresholded[j].instance_ref != k.instance_ref) ++j;
        subset = subset && j < t.thresholded.size() && t.thresholded[j].klass == k.klass;
      }
      filtered_out += t.thresholded.size() - t.kept.size();
    };
    const PipelineResult r = run_pipeline(Mode::Offline, cfg, s, hooks);
    CHECK(frozen);
    CHECK(subset);
    CHECK(filtered_out > 0);
    REQUIRE(r.offline_net);
    CHECK(*r.offline_net == expected);
    CHECK(r.delta_ood == 0.5);
  }

  SUBCASE("determinism and telemetry shape") {
    SelfTrainConfig cfg = short_config(13);
    cfg.checkpoint_every = 60;
    for (Mode m : {Mode::Baseline, Mode::Offline, Mode::Online}) {
      const PipelineResult a = run_pipeline(m, cfg, s);
      const PipelineResult b = run_pipeline(m, cfg, s);
      CHECK(a.telemetry == b.telemetry);
      CHECK(a.ts.teacher == b.ts.teacher);
      std::vector<std::size_t> iters;
      for (const auto& row : a.telemetry.rows) {
        iters.push_back(row.iteration);
        CHECK(row.fp_rate >= 0.0);
        CHECK(row.fp_rate <= 1.0);
        CHECK(row.test_acc >= 0.0);
        CHECK(row.test_acc <= 1.0);
        CHECK(row.ood_auroc >= 0.0);
        CHECK(row.ood_auroc <= 1.0);
      }
      CHECK(iters == std::vector<std::size_t>{0, 60, 120, 180, 200});
    }
  }

  SUBCASE("distance scores and calibrated thresholds run end to end") {
    SelfTrainConfig cfg = short_config(14);
    cfg.score_kind = ScoreKind::mahalanobis();
    const PipelineResult r = run_pipeline(Mode::Offline, cfg, s);
    REQUIRE(r.offline_stats);
    std::vector<Eigen::VectorXd> xs;
    for (const auto& inst : labeled_flat()) xs.push_back(inst.features);
    const auto id = score_batch(cfg.score_kind, xs, *r.offline_net, s.config.K, &*r.offline_stats);
    CHECK(r.delta_ood == calibrate_threshold(id, 0.95));
  }
}

TEST_CASE("probe_ood_auroc") {
  const Scenario& s = default_scenario();
  const int K = s.config.K;

  // A single random network ranks the two probe populations arbitrarily
  // (AUROC anywhere in roughly [0.15, 0.85]); the band applies to the mean.
  double total = 0.0;
  const int draws = 20;
  for (int seed = 0; seed < draws; ++seed) {
    const ClassifierParams untrained =
        init_params(s.config.d, 32, K + 1, static_cast<std::uint64_t>(seed), 0.5, stream::kInitOod);
    total += probe_ood_auroc(untrained, K, s.probe, ScoreKind::iac(), nullptr);
  }
  CHECK(total / draws >= 0.3);
  CHECK(total / draws <= 0.7);

  // Raw-feature Euclidean distance to the true ID means separates the probe.
  ClassStats oracle_stats;
  oracle_stats.means = s.id_means;
  oracle_stats.pooled_cov = Eigen::MatrixXd::Identity(s.config.d, s.config.d);
  oracle_stats.precision = oracle_stats.pooled_cov;
  const ClassifierParams any = init_params(s.config.d, 4, K, 0, 0.5);
  const double a = probe_ood_auroc(any, K, s.probe, ScoreKind::euclidean(), &oracle_stats, {FeatureSource::Raw, false});
  CHECK(a > 0.95);

  const ClassifierParams net = init_params(s.config.d, 8, K + 1, 3, 0.5);
  std::vector<double> id, ood;
  for (const auto& inst : s.probe) {
    (inst.origin.is_id() ? id : ood).push_back(score_one(ScoreKind::energy(), inst.features, net, K, nullptr));
  }
  CHECK(probe_ood_auroc(net, K, s.probe, ScoreKind::energy(), nullptr) == auroc(id, ood));

  const std::vector<Instance> only_id(s.probe.begin(), s.probe.begin() + 10);
  CHECK_THROWS_AS(probe_ood_auroc(net, K, only_id, ScoreKind::iac(), nullptr), std::invalid_argument);
}
