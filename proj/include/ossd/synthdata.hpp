#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ossd {

enum class OriginKind { IdClass, OodClass, Background };

// Ground-truth provenance of an instance. Only metrics and labeled-set
// construction may look at it.
struct Origin {
  OriginKind kind = OriginKind::Background;
  int index = -1;  // class k for IdClass, cluster m for OodClass, -1 otherwise

  static Origin id_class(int k) { return {OriginKind::IdClass, k}; }
  static Origin ood_class(int m) { return {OriginKind::OodClass, m}; }
  static Origin background() { return {OriginKind::Background, -1}; }

  bool is_id() const { return kind == OriginKind::IdClass; }
  bool is_ood() const { return kind == OriginKind::OodClass; }

  friend bool operator==(const Origin&, const Origin&) = default;
};

struct Instance {
  Eigen::VectorXd features;
  Origin origin;

  friend bool operator==(const Instance& a, const Instance& b) {
    return a.origin == b.origin && a.features.size() == b.features.size() &&
           a.features == b.features;
  }
};

enum class BagKind { PureId, Mixed, PureOod };

std::string to_string(BagKind kind);

// A bag stands in for one image: the set of object instances it contains.
struct Bag {
  std::vector<Instance> instances;

  friend bool operator==(const Bag&, const Bag&) = default;
};

// Throws std::invalid_argument on an empty bag or a bag with no ID and no OOD
// instance (background-only).
BagKind bag_kind(const Bag& bag);

struct ScenarioConfig {
  int d = 8;
  int K = 3;
  int M = 3;
  double mean_radius = 4.0;
  double class_spread = 1.0;
  double background_box = 10.0;
  int n_labeled_bags = 60;
  int n_unlabeled_pure_id = 300;
  int n_unlabeled_mixed = 300;
  int n_unlabeled_pure_ood = 300;
  int bag_size_min = 1;
  int bag_size_max = 5;
  int n_test_per_class = 200;
  // Held-out ID and OOD probe instances (each) for checkpoint AUROC.
  int n_probe = 200;

  // Throws ConfigError naming the offending field.
  void validate() const;

  friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

struct Scenario {
  ScenarioConfig config;
  std::uint64_t seed = 0;
  std::vector<Eigen::VectorXd> id_means;
  std::vector<Eigen::VectorXd> ood_means;
  std::vector<Bag> labeled;    // all PureId
  std::vector<Bag> unlabeled;  // origins hidden from training code by convention
  std::vector<Instance> test;  // ID instances only
  std::vector<Instance> probe;  // n_probe ID followed by n_probe OOD

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

Scenario generate_scenario(const ScenarioConfig& config, std::uint64_t seed);

// n instances uniform on [-background_box, background_box]^d, origin Background.
std::vector<Instance> sample_background(const ScenarioConfig& config, std::size_t n,
                                        std::uint64_t seed);

std::vector<Instance> flatten(const std::vector<Bag>& bags);

// Counts indexed by BagKind.
std::array<std::size_t, 3> kind_histogram(const std::vector<Bag>& bags);

}  // namespace ossd
