#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "emglab/errors.hpp"
#include "emglab/rng.hpp"

namespace emglab::tensor {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of 64-bit floats. The gradient buffer is optional
// and only populated by grad_of / the training loop.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor full(Shape shape, double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int i) { return data_[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) { return data_[idx2(i, j)]; }
  double& at(int i, int j, int k) { return data_[idx3(i, j, k)]; }
  double& at(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
  double at(int i) const { return data_[static_cast<std::size_t>(i)]; }
  double at(int i, int j) const { return data_[idx2(i, j)]; }
  double at(int i, int j, int k) const { return data_[idx3(i, j, k)]; }
  double at(int i, int j, int k, int l) const { return data_[idx4(i, j, k, l)]; }

  bool has_grad() const { return !grad_.empty(); }
  std::vector<double>& grad();             // allocates zeros on first use
  const std::vector<double>& grad() const { return grad_; }
  void clear_grad() { grad_.clear(); }

  bool all_finite() const;
  Tensor reshaped(Shape new_shape) const;

 private:
  std::size_t idx2(int i, int j) const {
    return static_cast<std::size_t>(i) * shape_[1] + j;
  }
  std::size_t idx3(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
  }
  std::size_t idx4(int i, int j, int k, int l) const {
    return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
  }

  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

enum class Padding { same, none };
enum class Mode { train, eval };

// Running statistics owned by a batch-norm layer instance.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  bool initialized = false;
  double momentum = 0.9;
  double epsilon = 1e-5;
};

// One node of the recorded computation graph. Nodes are owned by the Tape
// and live until the tape is destroyed, so backward closures may safely
// reference parent values.
struct Node {
  Tensor value;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::vector<Node*> parents;
  std::function<void()> backprop;  // scatter this->grad into parents
  int id = 0;
};

// Reverse-mode tape. One tape per forward/backward pass; single-threaded.
class Tape {
 public:
  Node* leaf(Tensor value, bool requires_grad = false);

  // Generic node constructor used by all ops (and by custom losses).
  Node* make_node(Tensor value, std::vector<Node*> parents,
                  std::function<void()> backprop);

  // Backpropagate from a scalar loss node; fills grads of reachable
  // requires_grad nodes. Unreachable parameters keep zero gradients.
  void backward(Node* loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;
};

// ---- layer ops ------------------------------------------------------------

// input [B,Cin,H,W] (or [Cin,H,W] for a single sample), weights
// [Cout,Cin,kh,kw], bias [Cout]. Same padding keeps HxW; extra padding for
// even overhang goes to bottom/right.
Node* conv2d(Tape& tape, Node* input, Node* weights, Node* bias, Padding padding);

Node* batch_norm(Tape& tape, Node* input, Node* gamma, Node* beta,
                 BatchNormState& state, Mode mode);

Node* leaky_relu(Tape& tape, Node* input, double slope);
Node* relu(Tape& tape, Node* input);

// input [B,N] x weights [M,N] + bias [M] -> [B,M]
Node* dense(Tape& tape, Node* input, Node* weights, Node* bias);

// [B, ...] -> [B, prod(rest)]; rank<=1 passes through, unbatched tensors
// flatten to their element count.
Node* flatten(Tape& tape, Node* input);

// Inverted dropout; eval mode is the identity (returns input node).
Node* dropout(Tape& tape, Node* input, double rate, Mode mode, Rng& rng);

// ---- small composition ops (losses, tests) --------------------------------

Node* add(Tape& tape, Node* a, Node* b);
Node* scale(Tape& tape, Node* a, double k);
Node* sum(Tape& tape, Node* a);
Node* sum_squares(Tape& tape, Node* a);

// ---- gradients and optimizer ----------------------------------------------

// Gradients of a scalar loss w.r.t. the given parameter nodes, in order.
std::vector<Tensor> grad_of(Tape& tape, Node* loss, const std::vector<Node*>& params);

struct NamedParam {
  std::string name;
  Tensor* value = nullptr;
};

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
};

// Standard bias-corrected Adam update. Throws NumericError naming the
// parameter if a gradient is non-finite.
void adam_step(std::vector<NamedParam>& params, const std::vector<Tensor>& grads,
               AdamState& state);

// ---- layer specs ------------------------------------------------------------

enum class LayerKind { conv2d, batchnorm, leaky_relu, flatten, dense, dropout };

struct LayerSpec {
  LayerKind kind = LayerKind::conv2d;
  int conv_out_channels = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  Padding padding = Padding::same;
  int dense_out_units = 0;
  double leaky_slope = 0.01;
  double dropout_rate = 0.0;

  static LayerSpec conv(int out_channels, int kh, int kw, Padding pad);
  static LayerSpec batchnorm();
  static LayerSpec leaky(double slope);
  static LayerSpec flat();
  static LayerSpec fully_connected(int units);
  static LayerSpec drop(double rate);

  void validate() const;
};

// Output shape of a spec list applied to an input of shape [C,H,W]
// (flatten yields a rank-1 shape). Pure shape algebra, no parameters needed.
Shape stack_output_shape(const std::vector<LayerSpec>& specs, const Shape& input_chw);

}  // namespace emglab::tensor
