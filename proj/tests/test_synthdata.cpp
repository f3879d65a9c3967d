#include <doctest.h>

#include <cmath>

#include "ossd/errors.hpp"
#include "ossd/synthdata.hpp"

using namespace ossd;

namespace {

ScenarioConfig small_config() {
  ScenarioConfig c;
  c.n_labeled_bags = 10;
  c.n_unlabeled_pure_id = 10;
  c.n_unlabeled_mixed = 10;
  c.n_unlabeled_pure_ood = 10;
  c.n_test_per_class = 5;
  c.n_probe = 7;
  return c;
}

Instance at(Origin o) { return {Eigen::VectorXd::Zero(2), o}; }

}  // namespace

TEST_CASE("bag_kind follows the ID/OOD table and ignores background") {
  CHECK(bag_kind({{at(Origin::id_class(0)), at(Origin::id_class(1))}}) == BagKind::PureId);
  CHECK(bag_kind({{at(Origin::id_class(0)), at(Origin::ood_class(1))}}) == BagKind::Mixed);
  CHECK(bag_kind({{at(Origin::ood_class(0)), at(Origin::background())}}) == BagKind::PureOod);
  CHECK(bag_kind({{at(Origin::id_class(2)), at(Origin::background())}}) == BagKind::PureId);
  CHECK_THROWS_AS(bag_kind(Bag{}), std::invalid_argument);
}

TEST_CASE("generate_scenario honours configured counts") {
  ScenarioConfig c = small_config();
  c.K = 3;
  const Scenario s = generate_scenario(c, 11);
  CHECK(s.labeled.size() == 10);
  CHECK(s.unlabeled.size() == 30);
  CHECK(s.test.size() == 15);
  CHECK(s.probe.size() == 14);
  CHECK(s.id_means.size() == 3);
  CHECK(s.ood_means.size() == 3);

  // Enumerate bags and tally kinds directly.
  std::size_t pure_id = 0, mixed = 0, pure_ood = 0;
  for (const auto& bag : s.unlabeled) {
    bool id = false, ood = false;
    for (const auto& inst : bag.instances) {
      id = id || inst.origin.kind == OriginKind::IdClass;
      ood = ood || inst.origin.kind == OriginKind::OodClass;
    }
    pure_id += id && !ood;
    mixed += id && ood;
    pure_ood += !id && ood;
  }
  CHECK(pure_id == 10);
  CHECK(mixed == 10);
  CHECK(pure_ood == 10);
  const auto hist = kind_histogram(s.unlabeled);
  CHECK(hist[0] + hist[1] + hist[2] == s.unlabeled.size());
}

TEST_CASE("scenario without mixed bags has no Mixed kind") {
  ScenarioConfig c = small_config();
  c.n_unlabeled_mixed = 0;
  const Scenario s = generate_scenario(c, 7);
  for (const auto& bag : s.unlabeled) CHECK(bag_kind(bag) != BagKind::Mixed);
}

TEST_CASE("labeled bags are pure ID and bag sizes stay in range") {
  const ScenarioConfig c = small_config();
  const Scenario s = generate_scenario(c, 3);
  for (const auto& bag : s.labeled) {
    CHECK(bag_kind(bag) == BagKind::PureId);
    CHECK(bag.instances.size() >= static_cast<std::size_t>(c.bag_size_min));
    CHECK(bag.instances.size() <= static_cast<std::size_t>(c.bag_size_max));
    for (const auto& inst : bag.instances) {
      CHECK(inst.origin.is_id());
      CHECK(inst.features.size() == c.d);
      CHECK(inst.features.allFinite());
    }
  }
  for (const auto& inst : s.test) CHECK(inst.origin.is_id());
}

TEST_CASE("generation is a pure function of (config, seed)") {
  const ScenarioConfig c = small_config();
  CHECK(generate_scenario(c, 42) == generate_scenario(c, 42));
  CHECK_FALSE(generate_scenario(c, 42) == generate_scenario(c, 43));
}

TEST_CASE("cluster means are distinct and OOD means avoid ID means") {
  ScenarioConfig c = small_config();
  c.M = 5;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scenario s = generate_scenario(c, seed);
    std::vector<Eigen::VectorXd> all = s.id_means;
    all.insert(all.end(), s.ood_means.begin(), s.ood_means.end());
    for (std::size_t i = 0; i < all.size(); ++i) {
      CHECK(std::abs(all[i].norm() - c.mean_radius) < 1e-9);
      for (std::size_t j = i + 1; j < all.size(); ++j) CHECK((all[i] - all[j]).norm() > 0.0);
    }
    for (const auto& o : s.ood_means)
      for (const auto& m : s.id_means) CHECK((o - m).norm() >= c.class_spread);
  }
}

TEST_CASE("sample_background") {
  const ScenarioConfig c;
  CHECK(sample_background(c, 0, 1).empty());

  const auto bg = sample_background(c, 10000, 5);
  REQUIRE(bg.size() == 10000);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(c.d);
  for (const auto& inst : bg) {
    CHECK(inst.origin.kind == OriginKind::Background);
    CHECK(inst.features.minCoeff() >= -c.background_box);
    CHECK(inst.features.maxCoeff() <= c.background_box);
    mean += inst.features;
  }
  mean /= 10000.0;
  // Uniform on [-b, b]: sd = b / sqrt(3); standard error of the mean = sd / sqrt(n).
  const double se = c.background_box / std::sqrt(3.0) / std::sqrt(10000.0);
  for (int j = 0; j < c.d; ++j) CHECK(std::abs(mean[j]) < 3.0 * se);

  CHECK(sample_background(c, 50, 9) == sample_background(c, 50, 9));
}

TEST_CASE("invalid configs name the offending field") {
  ScenarioConfig c;
  c.K = 1;
  CHECK_THROWS_WITH_AS(generate_scenario(c, 0), doctest::Contains("K"), ConfigError);
  c = ScenarioConfig{};
  c.d = 1;
  CHECK_THROWS_WITH_AS(generate_scenario(c, 0), doctest::Contains("d"), ConfigError);
  c = ScenarioConfig{};
  c.bag_size_min = 0;
  CHECK_THROWS_WITH_AS(generate_scenario(c, 0), doctest::Contains("bag_size_min"), ConfigError);
  c = ScenarioConfig{};
  c.n_unlabeled_mixed = -1;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("n_unlabeled_mixed"), ConfigError);
  c = ScenarioConfig{};
  c.M = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.n_unlabeled_mixed = 0;
  c.n_unlabeled_pure_ood = 0;
  CHECK_NOTHROW(c.validate());
}
