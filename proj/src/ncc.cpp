#include "emglab/ncc.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace emglab::ncc {

CentroidSet compute_centroids(const Tensor& embeddings, const std::vector<int>& labels) {
  if (embeddings.rank() != 2) {
    throw ShapeError("compute_centroids expects [M,D] embeddings");
  }
  const int m = embeddings.dim(0), d = embeddings.dim(1);
  if (static_cast<std::size_t>(m) != labels.size()) {
    throw ShapeError("compute_centroids: labels do not match embedding rows");
  }
  if (m == 0) throw DataError("compute_centroids: empty embedding set");

  std::map<int, int> counts;
  for (int l : labels) counts[l] += 1;

  CentroidSet cs;
  cs.dim = d;
  for (const auto& [cid, cnt] : counts) {
    cs.class_ids.push_back(cid);
    cs.counts.push_back(cnt);
  }
  cs.centroids.assign(static_cast<std::size_t>(cs.num_classes()) * d, 0.0);

  std::map<int, int> index;
  for (int i = 0; i < cs.num_classes(); ++i) index[cs.class_ids[i]] = i;
  for (int r = 0; r < m; ++r) {
    double* c = cs.centroids.data() + static_cast<std::size_t>(index[labels[r]]) * d;
    const double* e = embeddings.data() + static_cast<std::size_t>(r) * d;
    for (int k = 0; k < d; ++k) c[k] += e[k];
  }
  for (int i = 0; i < cs.num_classes(); ++i) {
    double* c = cs.centroids.data() + static_cast<std::size_t>(i) * d;
    for (int k = 0; k < d; ++k) c[k] /= static_cast<double>(cs.counts[i]);
  }
  return cs;
}

DistanceVector distances(const double* sample, int dim, const CentroidSet& cents) {
  if (dim != cents.dim) {
    throw ShapeError("distance dimension " + std::to_string(dim) +
                             " does not match centroid dimension " +
                             std::to_string(cents.dim));
  }
  DistanceVector dv;
  dv.d.resize(static_cast<std::size_t>(cents.num_classes()));
  for (int i = 0; i < cents.num_classes(); ++i) {
    const double* c = cents.centroid(i);
    double s = 0.0;
    for (int k = 0; k < dim; ++k) {
      const double z = sample[k] - c[k];
      s += z * z;
    }
    dv.d[static_cast<std::size_t>(i)] = std::sqrt(s);
  }
  return dv;
}

ConfidenceVector confidence(const DistanceVector& dv, const CentroidSet& cents) {
  const int c = static_cast<int>(dv.d.size());
  if (c < 2) throw ConfigError("confidence needs at least 2 classes");
  ConfidenceVector cv;
  cv.scores.resize(static_cast<std::size_t>(c));

  double total = 0.0;
  for (double v : dv.d) total += v;
  if (total <= 0.0) {
    // Pathological frame: every centroid at distance 0. Do not halt replay.
    std::fill(cv.scores.begin(), cv.scores.end(), 1.0 / c);
    cv.predicted = cents.class_ids[0];
    cv.degenerate = true;
    return cv;
  }

  std::vector<double> membership(static_cast<std::size_t>(c));
  double mmax = -1.0;
  for (int i = 0; i < c; ++i) {
    membership[static_cast<std::size_t>(i)] = 1.0 - dv.d[static_cast<std::size_t>(i)] / total;
    mmax = std::max(mmax, membership[static_cast<std::size_t>(i)]);
  }
  double z = 0.0;
  for (int i = 0; i < c; ++i) {
    cv.scores[static_cast<std::size_t>(i)] =
        std::exp(membership[static_cast<std::size_t>(i)] - mmax);
    z += cv.scores[static_cast<std::size_t>(i)];
  }
  int best = 0;
  for (int i = 0; i < c; ++i) {
    cv.scores[static_cast<std::size_t>(i)] /= z;
    if (cv.scores[static_cast<std::size_t>(i)] > cv.scores[static_cast<std::size_t>(best)]) {
      best = i;  // strict: ties keep the lowest class id
    }
  }
  cv.predicted = cents.class_ids[static_cast<std::size_t>(best)];
  return cv;
}

std::vector<Prediction> predict_batch(const Tensor& embeddings, const CentroidSet& cents) {
  if (embeddings.rank() != 2) {
    throw ShapeError("predict_batch expects [B,D] embeddings");
  }
  const int b = embeddings.dim(0), d = embeddings.dim(1);
  if (b == 0) throw DataError("predict_batch: empty batch");
  std::vector<Prediction> out;
  out.reserve(static_cast<std::size_t>(b));
  for (int r = 0; r < b; ++r) {
    Prediction p;
    p.distances = distances(embeddings.data() + static_cast<std::size_t>(r) * d, d, cents);
    p.confidence = confidence(p.distances, cents);
    p.predicted = p.confidence.predicted;
    out.push_back(std::move(p));
  }
  return out;
}

CentroidSet with_added_class(const CentroidSet& cents, int class_id,
                             const Tensor& embeddings) {
  for (int cid : cents.class_ids) {
    if (cid == class_id) throw ConfigError("class already has a centroid");
  }
  const int m = embeddings.dim(0), d = embeddings.dim(1);
  if (d != cents.dim) throw ShapeError("with_added_class dimension mismatch");
  if (m == 0) throw DataError("with_added_class: no examples for new class");

  CentroidSet out = cents;
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  for (int r = 0; r < m; ++r) {
    const double* e = embeddings.data() + static_cast<std::size_t>(r) * d;
    for (int k = 0; k < d; ++k) mean[static_cast<std::size_t>(k)] += e[k];
  }
  for (double& v : mean) v /= static_cast<double>(m);

  // keep class_ids ascending
  auto pos = std::lower_bound(out.class_ids.begin(), out.class_ids.end(), class_id);
  const int at = static_cast<int>(pos - out.class_ids.begin());
  out.class_ids.insert(pos, class_id);
  out.counts.insert(out.counts.begin() + at, m);
  out.centroids.insert(out.centroids.begin() + static_cast<std::size_t>(at) * d,
                       mean.begin(), mean.end());
  return out;
}

}  // namespace emglab::ncc
