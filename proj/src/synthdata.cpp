#include "ossd/synthdata.hpp"

#include <stdexcept>

#include "ossd/errors.hpp"
#include "ossd/rng.hpp"

namespace ossd {
namespace {

constexpr int kMaxPlacementAttempts = 100000;

void require(bool ok, const std::string& field, const std::string& rule) {
  if (!ok) throw ConfigError("invalid scenario config: " + field + " " + rule);
}

Eigen::VectorXd point_on_sphere(Rng& rng, int d, double radius) {
  Eigen::VectorXd v = normal_vector(rng, d, 1.0);
  while (v.norm() == 0.0) v = normal_vector(rng, d, 1.0);
  return radius * v / v.norm();
}

Instance draw_instance(Rng& rng, const Scenario& s, Origin origin) {
  const auto& means = origin.is_id() ? s.id_means : s.ood_means;
  Eigen::VectorXd x = means[origin.index] + normal_vector(rng, s.config.d, s.config.class_spread);
  return {std::move(x), origin};
}

Origin random_id(Rng& rng, const ScenarioConfig& c) {
  return Origin::id_class(static_cast<int>(uniform_index(rng, c.K)));
}

Origin random_ood(Rng& rng, const ScenarioConfig& c) {
  return Origin::ood_class(static_cast<int>(uniform_index(rng, c.M)));
}

Bag draw_bag(Rng& rng, const Scenario& s, BagKind kind) {
  const auto& c = s.config;
  int size = static_cast<int>(uniform_int(rng, c.bag_size_min, c.bag_size_max));
  Bag bag;
  switch (kind) {
    case BagKind::PureId:
      for (int i = 0; i < size; ++i) bag.instances.push_back(draw_instance(rng, s, random_id(rng, c)));
      break;
    case BagKind::PureOod:
      for (int i = 0; i < size; ++i) bag.instances.push_back(draw_instance(rng, s, random_ood(rng, c)));
      break;
    case BagKind::Mixed: {
      size = std::max(size, 2);
      bag.instances.push_back(draw_instance(rng, s, random_id(rng, c)));
      bag.instances.push_back(draw_instance(rng, s, random_ood(rng, c)));
      for (int i = 2; i < size; ++i) {
        Origin o = uniform_index(rng, 2) == 0 ? random_id(rng, c) : random_ood(rng, c);
        bag.instances.push_back(draw_instance(rng, s, o));
      }
      break;
    }
  }
  return bag;
}

}  // namespace

std::string to_string(BagKind kind) {
  switch (kind) {
    case BagKind::PureId: return "pure_id";
    case BagKind::Mixed: return "mixed";
    case BagKind::PureOod: return "pure_ood";
  }
  return "unknown";
}

BagKind bag_kind(const Bag& bag) {
  if (bag.instances.empty()) throw std::invalid_argument("bag_kind: empty bag");
  bool has_id = false;
  bool has_ood = false;
  for (const auto& inst : bag.instances) {
    has_id = has_id || inst.origin.is_id();
    has_ood = has_ood || inst.origin.is_ood();
  }
  if (has_id && has_ood) return BagKind::Mixed;
  if (has_id) return BagKind::PureId;
  if (has_ood) return BagKind::PureOod;
  throw std::invalid_argument("bag_kind: bag holds only background instances");
}

void ScenarioConfig::validate() const {
  require(d >= 2, "d", "must be >= 2");
  require(K >= 2, "K", "must be >= 2");
  require(M >= 0, "M", "must be >= 0");
  require(mean_radius > 0.0, "mean_radius", "must be > 0");
  require(class_spread >= 0.0, "class_spread", "must be >= 0");
  require(background_box > 0.0, "background_box", "must be > 0");
  require(n_labeled_bags >= 0, "n_labeled_bags", "must be >= 0");
  require(n_unlabeled_pure_id >= 0, "n_unlabeled_pure_id", "must be >= 0");
  require(n_unlabeled_mixed >= 0, "n_unlabeled_mixed", "must be >= 0");
  require(n_unlabeled_pure_ood >= 0, "n_unlabeled_pure_ood", "must be >= 0");
  require(bag_size_min >= 1, "bag_size_min", "must be >= 1");
  require(bag_size_max >= bag_size_min, "bag_size_max", "must be >= bag_size_min");
  require(n_test_per_class >= 0, "n_test_per_class", "must be >= 0");
  require(n_probe >= 0, "n_probe", "must be >= 0");
  require(M > 0 || (n_unlabeled_mixed == 0 && n_unlabeled_pure_ood == 0), "M",
          "must be >= 1 when mixed or pure-OOD bags are requested");
}

Scenario generate_scenario(const ScenarioConfig& config, std::uint64_t seed) {
  config.validate();
  Scenario s;
  s.config = config;
  s.seed = seed;

  Rng means_rng = make_rng(seed, stream::kClusterMeans);
  auto distinct_from = [](const Eigen::VectorXd& p, const std::vector<Eigen::VectorXd>& others,
                          double min_dist) {
    for (const auto& q : others) {
      double dist = (p - q).norm();
      if (dist <= 0.0 || dist < min_dist) return false;
    }
    return true;
  };
  for (int k = 0; k < config.K; ++k) {
    for (int attempt = 0;; ++attempt) {
      if (attempt >= kMaxPlacementAttempts) throw ConfigError("could not place distinct ID means");
      Eigen::VectorXd mu = point_on_sphere(means_rng, config.d, config.mean_radius);
      if (distinct_from(mu, s.id_means, 0.0)) {
        s.id_means.push_back(std::move(mu));
        break;
      }
    }
  }
  for (int m = 0; m < config.M; ++m) {
    for (int attempt = 0;; ++attempt) {
      if (attempt >= kMaxPlacementAttempts) {
        throw ConfigError("could not place OOD mean farther than class_spread from every ID mean");
      }
      Eigen::VectorXd mu = point_on_sphere(means_rng, config.d, config.mean_radius);
      if (distinct_from(mu, s.id_means, config.class_spread) && distinct_from(mu, s.ood_means, 0.0)) {
        s.ood_means.push_back(std::move(mu));
        break;
      }
    }
  }

  Rng labeled_rng = make_rng(seed, stream::kLabeled);
  for (int i = 0; i < config.n_labeled_bags; ++i) {
    s.labeled.push_back(draw_bag(labeled_rng, s, BagKind::PureId));
  }

  Rng unlabeled_rng = make_rng(seed, stream::kUnlabeled);
  for (int i = 0; i < config.n_unlabeled_pure_id; ++i) {
    s.unlabeled.push_back(draw_bag(unlabeled_rng, s, BagKind::PureId));
  }
  for (int i = 0; i < config.n_unlabeled_mixed; ++i) {
    s.unlabeled.push_back(draw_bag(unlabeled_rng, s, BagKind::Mixed));
  }
  for (int i = 0; i < config.n_unlabeled_pure_ood; ++i) {
    s.unlabeled.push_back(draw_bag(unlabeled_rng, s, BagKind::PureOod));
  }

  Rng test_rng = make_rng(seed, stream::kTest);
  for (int k = 0; k < config.K; ++k) {
    for (int i = 0; i < config.n_test_per_class; ++i) {
      s.test.push_back(draw_instance(test_rng, s, Origin::id_class(k)));
    }
  }

  Rng probe_rng = make_rng(seed, stream::kProbe);
  for (int i = 0; i < config.n_probe; ++i) {
    s.probe.push_back(draw_instance(probe_rng, s, random_id(probe_rng, config)));
  }
  if (config.M > 0) {
    for (int i = 0; i < config.n_probe; ++i) {
      s.probe.push_back(draw_instance(probe_rng, s, random_ood(probe_rng, config)));
    }
  }
  return s;
}

std::vector<Instance> sample_background(const ScenarioConfig& config, std::size_t n,
                                        std::uint64_t seed) {
  config.validate();
  Rng rng = make_rng(seed, stream::kBackground);
  std::vector<Instance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd x(config.d);
    for (int j = 0; j < config.d; ++j) {
      x[j] = uniform_real(rng, -config.background_box, config.background_box);
    }
    out.push_back({std::move(x), Origin::background()});
  }
  return out;
}

std::vector<Instance> flatten(const std::vector<Bag>& bags) {
  std::vector<Instance> out;
  for (const auto& bag : bags) out.insert(out.end(), bag.instances.begin(), bag.instances.end());
  return out;
}

std::array<std::size_t, 3> kind_histogram(const std::vector<Bag>& bags) {
  std::array<std::size_t, 3> counts{0, 0, 0};
  for (const auto& bag : bags) ++counts[static_cast<std::size_t>(bag_kind(bag))];
  return counts;
}

}  // namespace ossd
