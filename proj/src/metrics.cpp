#include "ossd/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ossd {

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  if (id_scores.empty() || ood_scores.empty()) throw std::invalid_argument("auroc: empty score list");
  struct Entry {
    double score;
    bool is_id;
  };
  std::vector<Entry> all;
  all.reserve(id_scores.size() + ood_scores.size());
  for (double s : id_scores) all.push_back({s, true});
  for (double s : ood_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

  // Twice the ID rank sum, kept integral: a tie group spanning 1-based ranks
  // [i+1, j] contributes midrank (i + 1 + j) / 2 per ID member.
  long double twice_rank_sum = 0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    std::size_t ids = 0;
    while (j < all.size() && all[j].score == all[i].score) {
      ids += all[j].is_id ? 1 : 0;
      ++j;
    }
    twice_rank_sum += static_cast<long double>(ids) * static_cast<long double>(i + 1 + j);
    i = j;
  }
  const auto n_id = static_cast<long double>(id_scores.size());
  const auto n_ood = static_cast<long double>(ood_scores.size());
  const long double twice_u = twice_rank_sum - n_id * (n_id + 1);
  return static_cast<double>(twice_u / (2 * n_id * n_ood));
}

double fpr_at_tnr(std::span<const double> id_scores, std::span<const double> ood_scores, double tnr) {
  if (id_scores.empty() || ood_scores.empty()) throw std::invalid_argument("fpr_at_tnr: empty score list");
  const double t = calibrate_threshold(id_scores, tnr);
  const auto retained = std::count_if(ood_scores.begin(), ood_scores.end(), [t](double s) { return s >= t; });
  return static_cast<double>(retained) / static_cast<double>(ood_scores.size());
}

MetricReport evaluate_scores(std::span<const double> id_scores, std::span<const double> ood_scores) {
  return {auroc(id_scores, ood_scores), fpr_at_tnr(id_scores, ood_scores, 0.50),
          fpr_at_tnr(id_scores, ood_scores, 0.75), fpr_at_tnr(id_scores, ood_scores, 0.95)};
}

PseudoStats pseudo_stats(std::span<const PseudoLabel> pseudo, std::span<const Origin> truth,
                         std::size_t n_id_available) {
  PseudoStats st;
  for (const auto& p : pseudo) {
    if (p.instance_ref >= truth.size()) {
      throw std::invalid_argument("pseudo_stats: dangling instance_ref " + std::to_string(p.instance_ref));
    }
    if (truth[p.instance_ref].is_id()) {
      ++st.n_pseudo_id;
    } else {
      ++st.n_pseudo_ood;
    }
  }
  if (st.n_pseudo_id > n_id_available) {
    throw std::invalid_argument("pseudo_stats: more ID pseudo-labels than available ID instances");
  }
  const std::size_t total = st.n_pseudo_id + st.n_pseudo_ood;
  st.fp_rate = total == 0 ? 0.0 : static_cast<double>(st.n_pseudo_ood) / static_cast<double>(total);
  st.id_recall = n_id_available == 0 ? 0.0 : static_cast<double>(st.n_pseudo_id) / static_cast<double>(n_id_available);
  return st;
}

double test_accuracy(const ClassifierParams& params, std::span<const Instance> test, int K) {
  if (test.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& inst : test) {
    if (!inst.origin.is_id()) throw std::invalid_argument("test_accuracy: test set holds a non-ID instance");
    if (predict(params, inst.features, K).klass == inst.origin.index) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace ossd
