#pragma once

#include <cstddef>
#include <span>

#include "ossd/linclf.hpp"
#include "ossd/oodscore.hpp"
#include "ossd/synthdata.hpp"

namespace ossd {

// P(id > ood) + 0.5 * P(id == ood), via midranks. Scores are ID-ness.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

// Fraction of OOD scores >= calibrate_threshold(id_scores, tnr). The threshold
// is always an observed ID score; there is no interpolation.
double fpr_at_tnr(std::span<const double> id_scores, std::span<const double> ood_scores, double tnr);

struct MetricReport {
  double auroc = 0.0;
  double fpr50 = 0.0;
  double fpr75 = 0.0;
  double fpr95 = 0.0;
};

MetricReport evaluate_scores(std::span<const double> id_scores, std::span<const double> ood_scores);

struct PseudoStats {
  std::size_t n_pseudo_id = 0;
  std::size_t n_pseudo_ood = 0;  // OodClass or Background origin
  double fp_rate = 0.0;          // n_pseudo_ood / (n_pseudo_id + n_pseudo_ood), 0/0 = 0
  double id_recall = 0.0;        // n_pseudo_id / n_id_available, 0/0 = 0
};

// truth[i] is the origin of unlabeled instance i; pseudo-labels refer to it
// through instance_ref.
PseudoStats pseudo_stats(std::span<const PseudoLabel> pseudo, std::span<const Origin> truth,
                         std::size_t n_id_available);

// Fraction of test instances whose predicted class equals their ID class.
double test_accuracy(const ClassifierParams& params, std::span<const Instance> test, int K);

}  // namespace ossd
