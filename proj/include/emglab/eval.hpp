#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "emglab/tensor.hpp"

namespace emglab::eval {

using tensor::Tensor;

enum class DomainTag { in_domain, domain_divergent, out_of_domain };

std::string domain_tag_name(DomainTag tag);

// One prediction with its confidence; the unit of all evaluation.
struct PredictionRecord {
  int predicted = -1;
  int true_label = -1;              // actual class id; not a training class for OOD
  double confidence = 0.0;          // top score
  std::vector<double> full_scores;  // per training class
  DomainTag domain_tag = DomainTag::in_domain;
  double timestamp_ms = -1.0;
};

enum class RelabelMode {
  correctness,        // true iff predicted == true_label
  domain_membership,  // true iff domain_tag == in_domain
};

std::vector<int> relabel(const std::vector<PredictionRecord>& records, RelabelMode mode);

// Histogram both score lists on the union min-max range, smooth by eps, and
// return D_KL(P_incorrect || P_correct), natural log.
double kl_divergence(const std::vector<double>& correct_scores,
                     const std::vector<double>& incorrect_scores, int bins, double eps);

enum class CurveKind { roc, prc, arc, calibration };

struct CurvePoints {
  CurveKind kind = CurveKind::roc;
  std::vector<std::pair<double, double>> points;
  double auc = 0.0;
};

// TPR/FPR sweep (positive class = label 1); trapezoid AUROC, ties averaged.
CurvePoints roc_curve(const std::vector<int>& labels, const std::vector<double>& scores);

// Precision/recall sweep; AUPRC = sum of precision * delta-recall.
CurvePoints pr_curve(const std::vector<int>& labels, const std::vector<double>& scores);

// Accuracy-rejection curve: reject scores strictly below a threshold; points
// (rejection rate, active accuracy) from rejection 0; AUARC extends the last
// active accuracy out to rejection 1.
CurvePoints arc_curve(const std::vector<int>& labels, const std::vector<double>& scores);

// Equal-width bins over [0,1]; y = fraction correct per populated bin,
// x = bin center.
CurvePoints calibration_curve(const std::vector<int>& labels,
                              const std::vector<double>& scores, int bins);

enum class FprDenominator { all_incorrect, accepted };

struct ZeroFprResult {
  bool reachable = false;
  double rejection_rate = 0.0;  // scanned rate, fraction in [0,1]
  double threshold = 0.0;
  bool trivial_no_incorrect = false;
};

// Scan rejection rates 0%,1%,...,100% (all-rejected excluded); at each rate
// the threshold is the matching order statistic of the scores. Returns the
// first rate with zero false positives among accepted records.
ZeroFprResult zero_fpr_threshold(const std::vector<int>& labels,
                                 const std::vector<double>& scores,
                                 FprDenominator denom = FprDenominator::all_incorrect);

struct PcaResult {
  Tensor components;                      // [k, D], orthonormal rows
  std::vector<double> explained_variance; // eigenvalues, nonincreasing
  std::vector<double> mean;               // training mean, length D
  std::vector<Tensor> projections;        // [train, test_sets...], each [n_i, k]
};

// Power iteration with deflation on the training covariance (tolerance 1e-10);
// every set is projected with the training-fit basis.
PcaResult pca_project(const Tensor& train_vectors, const std::vector<Tensor>& test_sets,
                      int k = 2);

}  // namespace emglab::eval
