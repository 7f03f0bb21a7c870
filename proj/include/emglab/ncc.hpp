#pragma once

#include <vector>

#include "emglab/tensor.hpp"

namespace emglab::ncc {

using tensor::Tensor;

// Per-class mean embeddings (prototypes) in the learned space.
struct CentroidSet {
  std::vector<int> class_ids;     // ascending
  int dim = 0;
  std::vector<double> centroids;  // C * dim
  std::vector<int> counts;

  int num_classes() const { return static_cast<int>(class_ids.size()); }
  const double* centroid(int i) const {
    return centroids.data() + static_cast<std::size_t>(i) * dim;
  }
};

struct DistanceVector {
  std::vector<double> d;  // Euclidean distance to each centroid, centroid order
};

struct ConfidenceVector {
  std::vector<double> scores;  // softmax of D_c = 1 - d_c/sum(d); sums to 1
  int predicted = -1;          // class id (argmax score == argmin distance)
  bool degenerate = false;     // all distances zero -> uniform scores
};

struct Prediction {
  int predicted = -1;
  ConfidenceVector confidence;
  DistanceVector distances;
};

// centroid_c = mean of class-c rows of embeddings [M,D]. Every class present
// in `labels` gets a centroid; a requested class with zero samples is an error.
CentroidSet compute_centroids(const Tensor& embeddings, const std::vector<int>& labels);

DistanceVector distances(const double* sample, int dim, const CentroidSet& cents);

// Eq-style membership scores: D_c = 1 - d_c / sum(d_i), scores = softmax(D).
// Ties and the all-zero degenerate case resolve to the lowest class id.
ConfidenceVector confidence(const DistanceVector& dv, const CentroidSet& cents);

std::vector<Prediction> predict_batch(const Tensor& embeddings, const CentroidSet& cents);

// Append one centroid computed from held-out examples; existing prototypes
// are untouched (few-shot class addition, no retraining).
CentroidSet with_added_class(const CentroidSet& cents, int class_id,
                             const Tensor& embeddings);

}  // namespace emglab::ncc
