#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "emglab/dsp.hpp"
#include "emglab/ncc.hpp"
#include "emglab/tensor.hpp"

namespace emglab::models {

using tensor::LayerSpec;
using tensor::Mode;
using tensor::NamedParam;
using tensor::Node;
using tensor::Padding;
using tensor::Shape;
using tensor::Tape;
using tensor::Tensor;

// ---- configuration ------------------------------------------------------------

struct TripletConfig {
  double margin_alpha = 20.0;  // on the squared-distance scale
  int batch_size = 128;
};

struct CenterLossConfig {
  double tau = 5e-5;       // joint-loss weight
  double center_lr = 0.5;  // per-batch center update rate
};

struct EcnnConfig {
  double lambda_kl = 0.1;
  enum class Activation { relu, softplus } evidence_activation = Activation::relu;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 128;
  int patience = 5;
  double min_delta = 1e-4;
  int max_epochs = 50;
  bool best_epoch_recall = true;
  std::uint64_t seed = 0;
};

enum class ModelKind { sdcnn, dcnn, cnnsc, ecnn };

std::string model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

// Convolution feature extractor: five conv blocks (batch norm + leaky ReLU)
// with shrinking kernels, then flatten. On a 1x4x16 input the embedding is
// 224-dimensional.
std::vector<LayerSpec> sdcnn_conv_stack();

// 128-unit FC head with leaky ReLU, 50% train-time dropout, and a C-unit
// output layer.
std::vector<LayerSpec> classifier_head_stack(int num_classes);

// ---- differentiable losses ------------------------------------------------------

// embeddings [B,D] -> squared Euclidean distances [B,B].
Node* pairwise_sq_dist(Tape& tape, Node* embeddings);

// Value-only variant (mining, validation, oracles).
Tensor pairwise_sq_dist_values(const Tensor& embeddings);

// log(1 + e^x) evidence activation (ECNN alternative to ReLU).
Node* softplus(Tape& tape, Node* input);

struct Triplet {
  int anchor, positive, negative;
  bool operator==(const Triplet&) const = default;
  bool operator<(const Triplet& o) const {
    if (anchor != o.anchor) return anchor < o.anchor;
    if (positive != o.positive) return positive < o.positive;
    return negative < o.negative;
  }
};

// All (a,p,n) with label(a)==label(p), a!=p, label(n)!=label(a) and
// d_ap < d_an < d_ap + alpha. Anchor-positive pairs without a semi-hard
// negative fall back to the hardest negative with d_an > d_ap, else the
// easiest (largest-distance) negative. Single-class batches yield no triples.
std::vector<Triplet> mine_semihard(const Tensor& dists, const std::vector<int>& labels,
                                   double alpha);

// mean over triples of max(d_ap - d_an + alpha, 0); differentiable through
// the distance matrix node.
Node* triplet_loss(Tape& tape, Node* dists, const std::vector<Triplet>& triples,
                   double alpha);

// mean of -log softmax(logits)[label], max-subtraction stabilized.
Node* cross_entropy_loss(Tape& tape, Node* logits, const std::vector<int>& labels);

// L_c = 1/(2B) sum_i ||f_i - center_{y_i}||^2; centers are constants here.
// label_index maps raw labels to center rows.
Node* center_loss(Tape& tape, Node* features, const std::vector<int>& label_rows,
                  const Tensor& centers);

// Per-batch center update: c_j += lr * mean_i(f_i - c_j) over i with row j.
void update_centers(Tensor& centers, const Tensor& features,
                    const std::vector<int>& label_rows, double center_lr);

// Evidential sum-of-squares loss with Dirichlet KL regularizer (mean over batch).
Node* ecnn_loss(Tape& tape, Node* evidence, const std::vector<int>& label_rows,
                double lambda_kl);

struct EcnnUncertainty {
  double vacuity = 0.0;
  double dissonance = 0.0;
  double entropy = 0.0;
  double neg_max_prob = 0.0;
  double confidence = 0.0;  // max expected probability (rejection score)
  std::vector<double> p_hat;
};

EcnnUncertainty ecnn_uncertainty(const double* evidence, int num_classes);

double digamma(double x);
double trigamma(double x);

// ---- parameterized layer stacks ----------------------------------------------

// Parameters, batch-norm state and forward pass for a LayerSpec list.
// Kaiming-style fan-in init for conv/dense weights; gamma=1, beta=0.
class LayerStack {
 public:
  LayerStack() = default;
  LayerStack(Shape input_chw, std::vector<LayerSpec> specs, Rng& init_rng,
             std::string param_prefix);

  // When bound_params is given, parameter leaves are created with gradients
  // enabled and appended in params() order. taps, when given, collects each
  // layer's output node (e.g. to read penultimate features).
  Node* forward(Tape& tape, Node* input, Mode mode, Rng* dropout_rng,
                std::vector<Node*>* bound_params = nullptr,
                std::vector<Node*>* taps = nullptr);

  const std::vector<LayerSpec>& specs() const { return specs_; }
  const Shape& input_shape() const { return input_chw_; }
  Shape output_shape() const;

  std::vector<NamedParam> params();
  std::vector<Tensor*> param_tensors();

  struct Slot {
    LayerSpec spec;
    Tensor weights, bias;    // conv/dense
    Tensor gamma, beta;      // batchnorm
    tensor::BatchNormState bn;
  };
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }

 private:
  Shape input_chw_;
  std::vector<LayerSpec> specs_;
  std::vector<Slot> slots_;
  std::string prefix_;
};

// Siamese embedding network: one shared parameter set; embedding both halves
// of any pair runs through the same weights.
class EmbeddingNet {
 public:
  EmbeddingNet() = default;
  EmbeddingNet(int input_h, int input_w, Rng& init_rng);
  EmbeddingNet(int input_h, int input_w, std::vector<LayerSpec> specs, Rng& init_rng);

  Node* forward(Tape& tape, Node* frames_b1hw, Mode mode,
                std::vector<Node*>* bound_params = nullptr);
  // frames [B,H,W] -> embeddings [B,D]; no gradient bookkeeping.
  Tensor embed(const Tensor& frames, Mode mode = Mode::eval);

  int embedding_dim() const { return embedding_dim_; }
  int input_h() const { return input_h_; }
  int input_w() const { return input_w_; }
  LayerStack& stack() { return stack_; }
  const LayerStack& stack() const { return stack_; }

 private:
  LayerStack stack_;
  int input_h_ = 0, input_w_ = 0;
  int embedding_dim_ = 0;
};

// ---- datasets and training -------------------------------------------------------

struct Dataset {
  Tensor frames;            // [N,H,W]
  std::vector<int> labels;  // raw class ids
  std::size_t size() const { return labels.size(); }
};

struct ModelSpec {
  ModelKind kind = ModelKind::sdcnn;
  int input_h = 4;
  int input_w = 16;
  std::vector<int> class_ids;  // training classes, ascending
  TripletConfig triplet;
  CenterLossConfig center;
  EcnnConfig ecnn;
};

struct TrainingLog {
  std::vector<double> train_loss;  // per epoch (mean over steps)
  std::vector<double> valid_loss;  // per epoch
  std::vector<int> skipped_batches;
  int best_epoch = -1;
  int epochs_run = 0;
};

struct TrainedModel {
  ModelSpec spec;
  TrainConfig train_cfg;
  EmbeddingNet net;
  LayerStack head;             // baselines only
  Tensor centers;              // cnnsc
  ncc::CentroidSet centroids;  // sdcnn
  TrainingLog log;

  int num_classes() const { return static_cast<int>(spec.class_ids.size()); }
  int class_row(int class_id) const;  // index into class_ids; -1 if absent
};

// Shared epoch loop with shuffled batches, early stopping (patience epochs
// without >= min_delta improvement of the validation loss) and best-epoch
// parameter recall. SDCNN fits nearest-centroid prototypes on the training
// set after recall.
TrainedModel train(const ModelSpec& spec, const Dataset& train_set,
                   const Dataset& valid_set, const TrainConfig& cfg);

struct BatchPrediction {
  std::vector<int> predicted;               // raw class ids
  std::vector<double> confidence;           // rejection score per sample
  Tensor scores;                            // [B,C] full per-class scores
  std::vector<ncc::DistanceVector> dists;   // sdcnn only
  std::vector<bool> degenerate;             // sdcnn only
};

BatchPrediction predict(TrainedModel& model, const Tensor& frames);

// ---- checkpoint container --------------------------------------------------------

// Self-describing container: JSON header (specs, config, seed, array table)
// followed by raw little-endian float64 payload; round-trips bit-exactly.
void save_checkpoint(const TrainedModel& model, const std::string& path);
TrainedModel load_checkpoint(const std::string& path);

// Frame batches from dsp sequences.
Dataset dataset_from_sequences(const std::vector<const dsp::FrameSequence*>& seqs);

}  // namespace emglab::models
