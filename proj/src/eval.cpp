#include "emglab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace emglab::eval {

std::string domain_tag_name(DomainTag tag) {
  switch (tag) {
    case DomainTag::in_domain: return "in_domain";
    case DomainTag::domain_divergent: return "domain_divergent";
    case DomainTag::out_of_domain: return "out_of_domain";
  }
  return "unknown";
}

std::vector<int> relabel(const std::vector<PredictionRecord>& records, RelabelMode mode) {
  if (records.empty()) throw DataError("relabel: empty record list");
  std::vector<int> labels;
  labels.reserve(records.size());
  for (const auto& r : records) {
    if (mode == RelabelMode::correctness) {
      if (r.domain_tag == DomainTag::out_of_domain) {
        throw DataError("relabel: out-of-domain record in correctness mode; "
                        "use domain_membership for that experiment");
      }
      labels.push_back(r.predicted == r.true_label ? 1 : 0);
    } else {
      labels.push_back(r.domain_tag == DomainTag::in_domain ? 1 : 0);
    }
  }
  return labels;
}

double kl_divergence(const std::vector<double>& correct_scores,
                     const std::vector<double>& incorrect_scores, int bins, double eps) {
  if (correct_scores.empty() || incorrect_scores.empty()) {
    throw DataError("kl_divergence: both score lists must be nonempty");
  }
  if (bins < 2) throw ConfigError("kl_divergence: need at least 2 bins");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : correct_scores) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : incorrect_scores) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) {
    throw DataError("kl_divergence: degenerate score range (all values equal)");
  }
  const double width = (hi - lo) / bins;
  const auto histogram = [&](const std::vector<double>& scores) {
    std::vector<double> h(static_cast<std::size_t>(bins), eps);
    for (double v : scores) {
      int b = static_cast<int>((v - lo) / width);
      b = std::clamp(b, 0, bins - 1);
      h[static_cast<std::size_t>(b)] += 1.0;
    }
    double total = 0.0;
    for (double c : h) total += c;
    for (double& c : h) c /= total;
    return h;
  };
  const auto p_cor = histogram(correct_scores);
  const auto p_inc = histogram(incorrect_scores);
  double kl = 0.0;
  for (int b = 0; b < bins; ++b) {
    kl += p_inc[static_cast<std::size_t>(b)] *
          std::log(p_inc[static_cast<std::size_t>(b)] / p_cor[static_cast<std::size_t>(b)]);
  }
  return kl;
}

namespace {

// Indices sorted by descending score; equal scores form a tie group.
std::vector<std::size_t> descending_order(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

void check_sizes(const std::vector<int>& labels, const std::vector<double>& scores) {
  if (labels.size() != scores.size()) {
    throw DataError("labels and scores must have the same length");
  }
  if (labels.empty()) throw DataError("empty evaluation input");
}

}  // namespace

CurvePoints roc_curve(const std::vector<int>& labels, const std::vector<double>& scores) {
  check_sizes(labels, scores);
  std::size_t pos = 0;
  for (int l : labels) pos += static_cast<std::size_t>(l != 0);
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) {
    throw DataError("roc_curve requires both classes present");
  }

  CurvePoints curve;
  curve.kind = CurveKind::roc;
  curve.points.emplace_back(0.0, 0.0);
  const auto idx = descending_order(scores);
  std::size_t tp = 0, fp = 0;
  double auc = 0.0;
  double prev_fpr = 0.0, prev_tpr = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    const double s = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == s) {
      if (labels[idx[i]] != 0) {
        tp += 1;
      } else {
        fp += 1;
      }
      ++i;
    }
    const double fpr = static_cast<double>(fp) / static_cast<double>(neg);
    const double tpr = static_cast<double>(tp) / static_cast<double>(pos);
    curve.points.emplace_back(fpr, tpr);
    auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;  // trapezoid: ties averaged
    prev_fpr = fpr;
    prev_tpr = tpr;
  }
  curve.auc = auc;
  return curve;
}

CurvePoints pr_curve(const std::vector<int>& labels, const std::vector<double>& scores) {
  check_sizes(labels, scores);
  std::size_t pos = 0;
  for (int l : labels) pos += static_cast<std::size_t>(l != 0);
  if (pos == 0) throw DataError("pr_curve requires at least one positive");

  CurvePoints curve;
  curve.kind = CurveKind::prc;
  const auto idx = descending_order(scores);
  std::size_t tp = 0, taken = 0;
  double auc = 0.0;
  double prev_recall = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    const double s = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == s) {
      if (labels[idx[i]] != 0) tp += 1;
      taken += 1;
      ++i;
    }
    const double precision = static_cast<double>(tp) / static_cast<double>(taken);
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    curve.points.emplace_back(recall, precision);
    auc += precision * (recall - prev_recall);  // step-wise interpolation
    prev_recall = recall;
  }
  curve.auc = auc;
  return curve;
}

CurvePoints arc_curve(const std::vector<int>& labels, const std::vector<double>& scores) {
  check_sizes(labels, scores);
  const std::size_t n = labels.size();

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Suffix sums of correct labels over the ascending order.
  std::vector<double> suffix_correct(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    suffix_correct[i] = suffix_correct[i + 1] + (labels[idx[i]] != 0 ? 1.0 : 0.0);
  }

  CurvePoints curve;
  curve.kind = CurveKind::arc;
  curve.points.emplace_back(0.0, suffix_correct[0] / static_cast<double>(n));

  std::size_t i = 0;
  while (i < n) {
    const double s = scores[idx[i]];
    std::size_t j = i;
    while (j < n && scores[idx[j]] == s) ++j;
    // threshold = s rejects everything strictly below s, i.e. the first i items
    if (i > 0) {
      const double rejection = static_cast<double>(i) / static_cast<double>(n);
      const double active_acc = suffix_correct[i] / static_cast<double>(n - i);
      curve.points.emplace_back(rejection, active_acc);
    }
    i = j;
  }

  double auc = 0.0;
  for (std::size_t k = 1; k < curve.points.size(); ++k) {
    const auto& [x0, y0] = curve.points[k - 1];
    const auto& [x1, y1] = curve.points[k];
    auc += (x1 - x0) * (y0 + y1) / 2.0;
  }
  // constant extension at the last defined active accuracy to rejection = 1
  const auto& last = curve.points.back();
  auc += (1.0 - last.first) * last.second;
  curve.auc = auc;
  return curve;
}

CurvePoints calibration_curve(const std::vector<int>& labels,
                              const std::vector<double>& scores, int bins) {
  check_sizes(labels, scores);
  if (bins < 2) throw ConfigError("calibration_curve: bins must be >= 2");
  std::vector<double> correct(static_cast<std::size_t>(bins), 0.0);
  std::vector<double> count(static_cast<std::size_t>(bins), 0.0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    int b = static_cast<int>(scores[i] * bins);
    b = std::clamp(b, 0, bins - 1);
    count[static_cast<std::size_t>(b)] += 1.0;
    if (labels[i] != 0) correct[static_cast<std::size_t>(b)] += 1.0;
  }
  CurvePoints curve;
  curve.kind = CurveKind::calibration;
  for (int b = 0; b < bins; ++b) {
    if (count[static_cast<std::size_t>(b)] == 0.0) continue;  // empty bins omitted
    const double center = (b + 0.5) / bins;
    curve.points.emplace_back(center,
                              correct[static_cast<std::size_t>(b)] /
                                  count[static_cast<std::size_t>(b)]);
  }
  curve.auc = 0.0;
  return curve;
}

ZeroFprResult zero_fpr_threshold(const std::vector<int>& labels,
                                 const std::vector<double>& scores, FprDenominator denom) {
  check_sizes(labels, scores);
  const std::size_t n = labels.size();
  std::size_t incorrect_total = 0;
  for (int l : labels) incorrect_total += static_cast<std::size_t>(l == 0);

  ZeroFprResult res;
  if (incorrect_total == 0) {
    res.reachable = true;
    res.rejection_rate = 0.0;
    res.threshold = -std::numeric_limits<double>::infinity();
    res.trivial_no_incorrect = true;
    return res;
  }

  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());

  for (int pct = 0; pct <= 100; ++pct) {
    const std::size_t k = static_cast<std::size_t>(pct) * n / 100;  // floor quantile
    if (k >= n) break;  // all-rejected excluded
    const double threshold =
        k == 0 ? -std::numeric_limits<double>::infinity() : sorted[k];
    std::size_t accepted = 0, accepted_incorrect = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (scores[i] >= threshold) {  // accept ties
        accepted += 1;
        if (labels[i] == 0) accepted_incorrect += 1;
      }
    }
    if (accepted == 0) continue;
    const double fpr =
        denom == FprDenominator::all_incorrect
            ? static_cast<double>(accepted_incorrect) / static_cast<double>(incorrect_total)
            : static_cast<double>(accepted_incorrect) / static_cast<double>(accepted);
    if (fpr == 0.0) {
      res.reachable = true;
      res.rejection_rate = static_cast<double>(pct) / 100.0;
      res.threshold = threshold;
      return res;
    }
  }
  res.reachable = false;
  return res;
}

PcaResult pca_project(const Tensor& train_vectors, const std::vector<Tensor>& test_sets,
                      int k) {
  if (train_vectors.rank() != 2) throw ShapeError("pca_project expects [M,D]");
  const int m = train_vectors.dim(0), d = train_vectors.dim(1);
  if (k < 1 || k > d) throw ConfigError("pca_project: k must lie in [1, D]");
  if (m < k + 1) {
    throw DataError("pca_project: need at least k+1 training vectors");
  }

  PcaResult res;
  res.mean.assign(static_cast<std::size_t>(d), 0.0);
  for (int r = 0; r < m; ++r) {
    const double* x = train_vectors.data() + static_cast<std::size_t>(r) * d;
    for (int j = 0; j < d; ++j) res.mean[static_cast<std::size_t>(j)] += x[j];
  }
  for (double& v : res.mean) v /= static_cast<double>(m);

  // Training covariance (biased by m-1) as a dense matrix; D stays small here.
  std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
  for (int r = 0; r < m; ++r) {
    const double* x = train_vectors.data() + static_cast<std::size_t>(r) * d;
    for (int i = 0; i < d; ++i) {
      const double xi = x[i] - res.mean[static_cast<std::size_t>(i)];
      double* row = cov.data() + static_cast<std::size_t>(i) * d;
      for (int j = i; j < d; ++j) {
        row[j] += xi * (x[j] - res.mean[static_cast<std::size_t>(j)]);
      }
    }
  }
  for (int i = 0; i < d; ++i) {
    for (int j = i; j < d; ++j) {
      const double v = cov[static_cast<std::size_t>(i) * d + j] / static_cast<double>(m - 1);
      cov[static_cast<std::size_t>(i) * d + j] = v;
      cov[static_cast<std::size_t>(j) * d + i] = v;
    }
  }
  double trace = 0.0;
  for (int i = 0; i < d; ++i) trace += cov[static_cast<std::size_t>(i) * d + i];

  res.components = Tensor({k, d});
  const double tol = 1e-10;
  const int max_iters = 100000;
  Rng rng(0x50434131ULL);  // fixed: projection must not depend on external state

  for (int comp = 0; comp < k; ++comp) {
    std::vector<double> v(static_cast<std::size_t>(d));
    for (double& x : v) x = rng.normal();
    // orthogonalize against found components
    const auto orthogonalize = [&](std::vector<double>& vec) {
      for (int p = 0; p < comp; ++p) {
        const double* u = res.components.data() + static_cast<std::size_t>(p) * d;
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += vec[static_cast<std::size_t>(j)] * u[j];
        for (int j = 0; j < d; ++j) vec[static_cast<std::size_t>(j)] -= dot * u[j];
      }
    };
    const auto normalize = [&](std::vector<double>& vec) {
      double norm = 0.0;
      for (double x : vec) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 0.0) {
        for (double& x : vec) x /= norm;
      }
      return norm;
    };
    orthogonalize(v);
    normalize(v);

    double lambda = 0.0;
    std::vector<double> next(static_cast<std::size_t>(d));
    for (int it = 0; it < max_iters; ++it) {
      for (int i = 0; i < d; ++i) {
        const double* row = cov.data() + static_cast<std::size_t>(i) * d;
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += row[j] * v[static_cast<std::size_t>(j)];
        next[static_cast<std::size_t>(i)] = s;
      }
      orthogonalize(next);
      const double norm = normalize(next);
      double delta = 0.0;
      for (int j = 0; j < d; ++j) {
        // eigenvectors are sign-ambiguous; compare against both orientations
        delta = std::max(delta, std::fabs(std::fabs(next[static_cast<std::size_t>(j)]) -
                                          std::fabs(v[static_cast<std::size_t>(j)])));
      }
      v = next;
      lambda = norm;
      if (delta < tol) break;
    }
    if (!(lambda > tol * std::max(1.0, trace))) {
      throw NumericError("pca_project: training data has rank " + std::to_string(comp) +
                         ", requested " + std::to_string(k) + " components");
    }
    // canonical sign: largest-magnitude entry positive
    int arg = 0;
    for (int j = 1; j < d; ++j) {
      if (std::fabs(v[static_cast<std::size_t>(j)]) > std::fabs(v[static_cast<std::size_t>(arg)])) {
        arg = j;
      }
    }
    if (v[static_cast<std::size_t>(arg)] < 0.0) {
      for (double& x : v) x = -x;
    }
    for (int j = 0; j < d; ++j) res.components.at(comp, j) = v[static_cast<std::size_t>(j)];
    res.explained_variance.push_back(lambda);
  }

  const auto project = [&](const Tensor& set) {
    if (set.rank() != 2 || set.dim(1) != d) {
      throw ShapeError("pca_project: set dimension mismatch");
    }
    Tensor out({set.dim(0), k});
    for (int r = 0; r < set.dim(0); ++r) {
      const double* x = set.data() + static_cast<std::size_t>(r) * d;
      for (int p = 0; p < k; ++p) {
        const double* u = res.components.data() + static_cast<std::size_t>(p) * d;
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += (x[j] - res.mean[static_cast<std::size_t>(j)]) * u[j];
        out.at(r, p) = s;
      }
    }
    return out;
  };
  res.projections.push_back(project(train_vectors));
  for (const auto& set : test_sets) res.projections.push_back(project(set));
  return res;
}

}  // namespace emglab::eval
