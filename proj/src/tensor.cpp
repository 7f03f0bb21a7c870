#include "emglab/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

namespace emglab::tensor {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(numel(shape_), 0.0) {
  for (int d : shape_) {
    if (d <= 0) throw ShapeError("tensor extent must be positive, got " + shape_str(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({static_cast<int>(values.size())}, std::vector<double>(values));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::vector<double>& Tensor::grad() {
  if (grad_.empty()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (numel(new_shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(new_shape));
  }
  return Tensor(std::move(new_shape), data_);
}

// ---- tape -------------------------------------------------------------------

Node* Tape::leaf(Tensor value, bool requires_grad) {
  Node* n = make_node(std::move(value), {}, nullptr);
  if (requires_grad) {
    n->requires_grad = true;
    n->grad.assign(n->value.size(), 0.0);
  }
  return n;
}

Node* Tape::make_node(Tensor value, std::vector<Node*> parents,
                      std::function<void()> backprop) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.backprop = std::move(backprop);
  n.id = static_cast<int>(nodes_.size()) - 1;
  for (Node* p : n.parents) {
    if (p->requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.grad.assign(n.value.size(), 0.0);
  return &n;
}

void Tape::backward(Node* loss) {
  if (loss->value.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " +
                     shape_str(loss->value.shape()));
  }
  if (!loss->requires_grad) return;  // no parameters reachable
  loss->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->id > loss->id) continue;
    if (it->requires_grad && it->backprop) it->backprop();
  }
}

// ---- conv2d -----------------------------------------------------------------

namespace {

struct ConvDims {
  int batch, cin, h, w, cout, kh, kw, hout, wout, pad_top, pad_left;
  bool batched_input;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weights, const Tensor& bias,
                   Padding padding) {
  const Shape& ws = weights.shape();
  if (ws.size() != 4) {
    throw ShapeError("conv2d weights must be [Cout,Cin,kh,kw], got " + shape_str(ws));
  }
  ConvDims d{};
  d.cout = ws[0];
  d.cin = ws[1];
  d.kh = ws[2];
  d.kw = ws[3];
  if (d.kh < 1 || d.kw < 1) throw ShapeError("conv2d kernel extents must be >= 1");
  const Shape& is = input.shape();
  if (is.size() == 4) {
    d.batched_input = true;
    d.batch = is[0];
    if (is[1] != d.cin) {
      throw ShapeError("conv2d input channels " + std::to_string(is[1]) +
                       " do not match weight channels " + std::to_string(d.cin));
    }
    d.h = is[2];
    d.w = is[3];
  } else if (is.size() == 3) {
    d.batched_input = false;
    d.batch = 1;
    if (is[0] != d.cin) {
      throw ShapeError("conv2d input channels " + std::to_string(is[0]) +
                       " do not match weight channels " + std::to_string(d.cin));
    }
    d.h = is[1];
    d.w = is[2];
  } else {
    throw ShapeError("conv2d input must be [B,C,H,W] or [C,H,W], got " + shape_str(is));
  }
  if (bias.shape() != Shape{d.cout}) {
    throw ShapeError("conv2d bias must be [Cout]=" + std::to_string(d.cout) + ", got " +
                     shape_str(bias.shape()));
  }
  if (padding == Padding::same) {
    d.hout = d.h;
    d.wout = d.w;
    d.pad_top = (d.kh - 1) / 2;   // extra overhang goes to bottom/right
    d.pad_left = (d.kw - 1) / 2;
  } else {
    if (d.h < d.kh || d.w < d.kw) {
      throw ShapeError("conv2d kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                       " does not fit unpadded input " + std::to_string(d.h) + "x" +
                       std::to_string(d.w));
    }
    d.hout = d.h - d.kh + 1;
    d.wout = d.w - d.kw + 1;
    d.pad_top = 0;
    d.pad_left = 0;
  }
  return d;
}

// Gather one sample's receptive fields into col [Cin*kh*kw, Hout*Wout].
void im2col(const double* x, const ConvDims& d, double* col) {
  const int hw = d.hout * d.wout;
  for (int ci = 0; ci < d.cin; ++ci) {
    const double* xc = x + static_cast<std::size_t>(ci) * d.h * d.w;
    for (int dy = 0; dy < d.kh; ++dy) {
      for (int dx = 0; dx < d.kw; ++dx) {
        double* row = col + (static_cast<std::size_t>(ci) * d.kh * d.kw +
                             static_cast<std::size_t>(dy) * d.kw + dx) * hw;
        for (int oy = 0; oy < d.hout; ++oy) {
          const int iy = oy - d.pad_top + dy;
          double* out = row + static_cast<std::size_t>(oy) * d.wout;
          if (iy < 0 || iy >= d.h) {
            std::fill(out, out + d.wout, 0.0);
            continue;
          }
          const double* xrow = xc + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.wout; ++ox) {
            const int ix = ox - d.pad_left + dx;
            out[ox] = (ix >= 0 && ix < d.w) ? xrow[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-add col gradients back into one sample's input gradient.
void col2im_add(const double* col, const ConvDims& d, double* gx) {
  const int hw = d.hout * d.wout;
  for (int ci = 0; ci < d.cin; ++ci) {
    double* gc = gx + static_cast<std::size_t>(ci) * d.h * d.w;
    for (int dy = 0; dy < d.kh; ++dy) {
      for (int dx = 0; dx < d.kw; ++dx) {
        const double* row = col + (static_cast<std::size_t>(ci) * d.kh * d.kw +
                                   static_cast<std::size_t>(dy) * d.kw + dx) * hw;
        for (int oy = 0; oy < d.hout; ++oy) {
          const int iy = oy - d.pad_top + dy;
          if (iy < 0 || iy >= d.h) continue;
          double* grow = gc + static_cast<std::size_t>(iy) * d.w;
          const double* in = row + static_cast<std::size_t>(oy) * d.wout;
          for (int ox = 0; ox < d.wout; ++ox) {
            const int ix = ox - d.pad_left + dx;
            if (ix >= 0 && ix < d.w) grow[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Node* conv2d(Tape& tape, Node* input, Node* weights, Node* bias, Padding padding) {
  const ConvDims d = conv_dims(input->value, weights->value, bias->value, padding);
  const int k = d.cin * d.kh * d.kw;
  const int hw = d.hout * d.wout;

  Shape out_shape = d.batched_input ? Shape{d.batch, d.cout, d.hout, d.wout}
                                    : Shape{d.cout, d.hout, d.wout};
  Tensor out(out_shape);

  std::vector<double> col(static_cast<std::size_t>(k) * hw);
  ConstMatMap wmat(weights->value.data(), d.cout, k);
  const double* bptr = bias->value.data();
  const std::size_t sample_in = static_cast<std::size_t>(d.cin) * d.h * d.w;
  const std::size_t sample_out = static_cast<std::size_t>(d.cout) * hw;

  for (int b = 0; b < d.batch; ++b) {
    im2col(input->value.data() + b * sample_in, d, col.data());
    ConstMatMap cmat(col.data(), k, hw);
    MatMap ymat(out.data() + b * sample_out, d.cout, hw);
    ymat.noalias() = wmat * cmat;
    for (int co = 0; co < d.cout; ++co) ymat.row(co).array() += bptr[co];
  }

  Node* node = tape.make_node(std::move(out), {input, weights, bias}, nullptr);
  if (node->requires_grad) {
    node->backprop = [node, input, weights, bias, d, k, hw, sample_in, sample_out]() {
      std::vector<double> col(static_cast<std::size_t>(k) * hw);
      std::vector<double> dcol(static_cast<std::size_t>(k) * hw);
      ConstMatMap wmat(weights->value.data(), d.cout, k);
      for (int b = 0; b < d.batch; ++b) {
        ConstMatMap gy(node->grad.data() + b * sample_out, d.cout, hw);
        if (weights->requires_grad) {
          im2col(input->value.data() + b * sample_in, d, col.data());
          ConstMatMap cmat(col.data(), k, hw);
          MatMap gw(weights->grad.data(), d.cout, k);
          gw.noalias() += gy * cmat.transpose();
        }
        if (bias->requires_grad) {
          // explicit loop: Eigen redux order depends on runtime alignment
          const double* gptr = node->grad.data() + b * sample_out;
          for (int co = 0; co < d.cout; ++co) {
            double s = 0.0;
            for (int i = 0; i < hw; ++i) s += gptr[static_cast<std::size_t>(co) * hw + i];
            bias->grad[co] += s;
          }
        }
        if (input->requires_grad) {
          MatMap gc(dcol.data(), k, hw);
          gc.noalias() = wmat.transpose() * gy;
          col2im_add(dcol.data(), d, input->grad.data() + b * sample_in);
        }
      }
    };
  }
  return node;
}

// ---- batch norm ---------------------------------------------------------------

Node* batch_norm(Tape& tape, Node* input, Node* gamma, Node* beta,
                 BatchNormState& state, Mode mode) {
  const Shape& is = input->value.shape();
  if (is.size() != 4) {
    throw ShapeError("batch_norm input must be [B,C,H,W], got " + shape_str(is));
  }
  const int batch = is[0], channels = is[1], h = is[2], w = is[3];
  if (gamma->value.shape() != Shape{channels} || beta->value.shape() != Shape{channels}) {
    throw ShapeError("batch_norm gamma/beta must be [C]=" + std::to_string(channels));
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t reduce_n = static_cast<std::size_t>(batch) * plane;

  std::vector<double> mean(channels), var(channels);
  if (mode == Mode::train) {
    if (reduce_n < 2) {
      throw ShapeError("batch_norm train mode needs B*H*W >= 2 per channel, got " +
                       std::to_string(reduce_n));
    }
    for (int c = 0; c < channels; ++c) {
      double s = 0.0;
      for (int b = 0; b < batch; ++b) {
        const double* x = input->value.data() +
                          (static_cast<std::size_t>(b) * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += x[i];
      }
      const double mu = s / static_cast<double>(reduce_n);
      double sq = 0.0;
      for (int b = 0; b < batch; ++b) {
        const double* x = input->value.data() +
                          (static_cast<std::size_t>(b) * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double z = x[i] - mu;
          sq += z * z;
        }
      }
      mean[c] = mu;
      var[c] = sq / static_cast<double>(reduce_n);
    }
    if (!state.initialized) {
      state.running_mean = Tensor({channels});
      state.running_var = Tensor::full({channels}, 1.0);
      state.initialized = true;
      for (int c = 0; c < channels; ++c) {
        state.running_mean[c] = mean[c];
        state.running_var[c] = var[c];
      }
    } else {
      for (int c = 0; c < channels; ++c) {
        state.running_mean[c] = state.momentum * state.running_mean[c] +
                                (1.0 - state.momentum) * mean[c];
        state.running_var[c] = state.momentum * state.running_var[c] +
                               (1.0 - state.momentum) * var[c];
      }
    }
  } else {
    if (!state.initialized) {
      throw NumericError("batch_norm eval mode called before running statistics exist");
    }
    for (int c = 0; c < channels; ++c) {
      mean[c] = state.running_mean[c];
      var[c] = state.running_var[c];
    }
  }

  Tensor out(is);
  std::vector<double> inv_std(channels);
  for (int c = 0; c < channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + state.epsilon);
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      const double* x = input->value.data() +
                        (static_cast<std::size_t>(b) * channels + c) * plane;
      double* y = out.data() + (static_cast<std::size_t>(b) * channels + c) * plane;
      const double g = gamma->value[c], bb = beta->value[c], mu = mean[c], is_ = inv_std[c];
      for (std::size_t i = 0; i < plane; ++i) y[i] = (x[i] - mu) * is_ * g + bb;
    }
  }

  Node* node = tape.make_node(std::move(out), {input, gamma, beta}, nullptr);
  if (node->requires_grad) {
    auto mean_c = std::make_shared<std::vector<double>>(std::move(mean));
    auto inv_c = std::make_shared<std::vector<double>>(std::move(inv_std));
    const bool train = (mode == Mode::train);
    node->backprop = [node, input, gamma, beta, mean_c, inv_c, batch, channels, plane,
                      reduce_n, train]() {
      const double n = static_cast<double>(reduce_n);
      for (int c = 0; c < channels; ++c) {
        const double mu = (*mean_c)[c], istd = (*inv_c)[c], g = gamma->value[c];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < batch; ++b) {
          const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * plane;
          const double* dy = node->grad.data() + off;
          const double* x = input->value.data() + off;
          for (std::size_t i = 0; i < plane; ++i) {
            sum_dy += dy[i];
            sum_dy_xhat += dy[i] * (x[i] - mu) * istd;
          }
        }
        if (gamma->requires_grad) gamma->grad[c] += sum_dy_xhat;
        if (beta->requires_grad) beta->grad[c] += sum_dy;
        if (input->requires_grad) {
          for (int b = 0; b < batch; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * plane;
            const double* dy = node->grad.data() + off;
            const double* x = input->value.data() + off;
            double* gx = input->grad.data() + off;
            if (train) {
              for (std::size_t i = 0; i < plane; ++i) {
                const double xhat = (x[i] - mu) * istd;
                gx[i] += g * istd * (dy[i] - sum_dy / n - xhat * sum_dy_xhat / n);
              }
            } else {
              for (std::size_t i = 0; i < plane; ++i) gx[i] += g * istd * dy[i];
            }
          }
        }
      }
    };
  }
  return node;
}

// ---- elementwise activations ---------------------------------------------------

namespace {

Node* slope_activation(Tape& tape, Node* input, double slope) {
  Tensor out(input->value.shape());
  const std::size_t n = input->value.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = input->value[i];
    out[i] = x >= 0.0 ? x : slope * x;
  }
  Node* node = tape.make_node(std::move(out), {input}, nullptr);
  if (node->requires_grad) {
    node->backprop = [node, input, slope, n]() {
      for (std::size_t i = 0; i < n; ++i) {
        input->grad[i] += node->grad[i] * (input->value[i] >= 0.0 ? 1.0 : slope);
      }
    };
  }
  return node;
}

}  // namespace

Node* leaky_relu(Tape& tape, Node* input, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) {
    throw ConfigError("leaky_relu slope must lie in (0,1), got " + std::to_string(slope));
  }
  return slope_activation(tape, input, slope);
}

Node* relu(Tape& tape, Node* input) { return slope_activation(tape, input, 0.0); }

// ---- dense ------------------------------------------------------------------

Node* dense(Tape& tape, Node* input, Node* weights, Node* bias) {
  const Shape& is = input->value.shape();
  const Shape& ws = weights->value.shape();
  if (is.size() != 2 || ws.size() != 2) {
    throw ShapeError("dense expects input [B,N] and weights [M,N], got " + shape_str(is) +
                     " and " + shape_str(ws));
  }
  const int batch = is[0], in_dim = is[1], out_dim = ws[0];
  if (ws[1] != in_dim) {
    throw ShapeError("dense inner dimensions disagree: input " + shape_str(is) +
                     " vs weights " + shape_str(ws));
  }
  if (bias->value.shape() != Shape{out_dim}) {
    throw ShapeError("dense bias must be [M]=" + std::to_string(out_dim));
  }

  Tensor out({batch, out_dim});
  {
    ConstMatMap x(input->value.data(), batch, in_dim);
    ConstMatMap w(weights->value.data(), out_dim, in_dim);
    MatMap y(out.data(), batch, out_dim);
    y.noalias() = x * w.transpose();
    ConstMatMap b(bias->value.data(), 1, out_dim);
    y.rowwise() += b.row(0);
  }

  Node* node = tape.make_node(std::move(out), {input, weights, bias}, nullptr);
  if (node->requires_grad) {
    node->backprop = [node, input, weights, bias, batch, in_dim, out_dim]() {
      ConstMatMap gy(node->grad.data(), batch, out_dim);
      if (input->requires_grad) {
        ConstMatMap w(weights->value.data(), out_dim, in_dim);
        MatMap gx(input->grad.data(), batch, in_dim);
        gx.noalias() += gy * w;
      }
      if (weights->requires_grad) {
        ConstMatMap x(input->value.data(), batch, in_dim);
        MatMap gw(weights->grad.data(), out_dim, in_dim);
        gw.noalias() += gy.transpose() * x;
      }
      if (bias->requires_grad) {
        for (int i = 0; i < batch; ++i) {
          const double* grow = node->grad.data() + static_cast<std::size_t>(i) * out_dim;
          for (int m = 0; m < out_dim; ++m) bias->grad[m] += grow[m];
        }
      }
    };
  }
  return node;
}

// ---- flatten / dropout ---------------------------------------------------------

Node* flatten(Tape& tape, Node* input) {
  const Shape& is = input->value.shape();
  Shape out_shape;
  if (is.size() <= 1) {
    out_shape = is.empty() ? Shape{1} : is;
  } else {
    int rest = 1;
    for (std::size_t i = 1; i < is.size(); ++i) rest *= is[i];
    out_shape = {is[0], rest};
  }
  Node* node = tape.make_node(input->value.reshaped(out_shape), {input}, nullptr);
  if (node->requires_grad) {
    node->backprop = [node, input]() {
      for (std::size_t i = 0; i < node->grad.size(); ++i) input->grad[i] += node->grad[i];
    };
  }
  return node;
}

Node* dropout(Tape& tape, Node* input, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0,1), got " + std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0) return input;
  const std::size_t n = input->value.size();
  auto mask = std::make_shared<std::vector<double>>(n);
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor out(input->value.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double m = rng.uniform() >= rate ? keep_scale : 0.0;
    (*mask)[i] = m;
    out[i] = input->value[i] * m;
  }
  Node* node = tape.make_node(std::move(out), {input}, nullptr);
  if (node->requires_grad) {
    node->backprop = [node, input, mask, n]() {
      for (std::size_t i = 0; i < n; ++i) input->grad[i] += node->grad[i] * (*mask)[i];
    };
  }
  return node;
}

// ---- small ops ------------------------------------------------------------------

Node* add(Tape& tape, Node* a, Node* b) {
  if (a->value.shape() != b->value.shape()) {
    throw ShapeError("add shape mismatch: " + shape_str(a->value.shape()) + " vs " +
                     shape_str(b->value.shape()));
  }
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  Node* node = tape.make_node(std::move(out), {a, b}, nullptr);
  if (node->requires_grad) {
    node->backprop = [node, a, b]() {
      for (std::size_t i = 0; i < node->grad.size(); ++i) {
        if (a->requires_grad) a->grad[i] += node->grad[i];
        if (b->requires_grad) b->grad[i] += node->grad[i];
      }
    };
  }
  return node;
}

Node* scale(Tape& tape, Node* a, double k) {
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * k;
  Node* node = tape.make_node(std::move(out), {a}, nullptr);
  if (node->requires_grad) {
    node->backprop = [node, a, k]() {
      for (std::size_t i = 0; i < node->grad.size(); ++i) a->grad[i] += node->grad[i] * k;
    };
  }
  return node;
}

Node* sum(Tape& tape, Node* a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) s += a->value[i];
  Node* node = tape.make_node(Tensor::scalar(s), {a}, nullptr);
  if (node->requires_grad) {
    node->backprop = [node, a]() {
      const double g = node->grad[0];
      for (std::size_t i = 0; i < a->value.size(); ++i) a->grad[i] += g;
    };
  }
  return node;
}

Node* sum_squares(Tape& tape, Node* a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) s += a->value[i] * a->value[i];
  Node* node = tape.make_node(Tensor::scalar(s), {a}, nullptr);
  if (node->requires_grad) {
    node->backprop = [node, a]() {
      const double g = node->grad[0];
      for (std::size_t i = 0; i < a->value.size(); ++i) a->grad[i] += g * 2.0 * a->value[i];
    };
  }
  return node;
}

// ---- grad_of / adam ---------------------------------------------------------------

std::vector<Tensor> grad_of(Tape& tape, Node* loss, const std::vector<Node*>& params) {
  tape.backward(loss);
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (Node* p : params) {
    Tensor g(p->value.shape());
    if (!p->grad.empty()) {
      std::copy(p->grad.begin(), p->grad.end(), g.values().begin());
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

void adam_step(std::vector<NamedParam>& params, const std::vector<Tensor>& grads,
               AdamState& state) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params vs " +
                     std::to_string(grads.size()) + " grads");
  }
  if (state.m.empty()) {
    for (auto& p : params) {
      state.m.emplace_back(p.value->shape());
      state.v.emplace_back(p.value->shape());
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: moment buffers do not match parameter count");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi].value;
    const Tensor& g = grads[pi];
    if (g.shape() != p.shape()) {
      throw ShapeError("adam_step: gradient shape mismatch for " + params[pi].name);
    }
    Tensor& m = state.m[pi];
    Tensor& v = state.v[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      if (!std::isfinite(gi)) {
        throw NumericError("non-finite gradient in parameter '" + params[pi].name + "'");
      }
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

// ---- layer specs ----------------------------------------------------------------

LayerSpec LayerSpec::conv(int out_channels, int kh, int kw, Padding pad) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.conv_out_channels = out_channels;
  s.kernel_h = kh;
  s.kernel_w = kw;
  s.padding = pad;
  return s;
}

LayerSpec LayerSpec::batchnorm() {
  LayerSpec s;
  s.kind = LayerKind::batchnorm;
  return s;
}

LayerSpec LayerSpec::leaky(double slope) {
  LayerSpec s;
  s.kind = LayerKind::leaky_relu;
  s.leaky_slope = slope;
  return s;
}

LayerSpec LayerSpec::flat() {
  LayerSpec s;
  s.kind = LayerKind::flatten;
  return s;
}

LayerSpec LayerSpec::fully_connected(int units) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.dense_out_units = units;
  return s;
}

LayerSpec LayerSpec::drop(double rate) {
  LayerSpec s;
  s.kind = LayerKind::dropout;
  s.dropout_rate = rate;
  return s;
}

void LayerSpec::validate() const {
  switch (kind) {
    case LayerKind::conv2d:
      if (conv_out_channels < 1 || kernel_h < 1 || kernel_w < 1) {
        throw ConfigError("conv2d spec requires out_channels and kernel extents >= 1");
      }
      break;
    case LayerKind::leaky_relu:
      if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
        throw ConfigError("leaky_relu slope must lie in (0,1)");
      }
      break;
    case LayerKind::dense:
      if (dense_out_units < 1) throw ConfigError("dense spec requires out_units >= 1");
      break;
    case LayerKind::dropout:
      if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw ConfigError("dropout rate must lie in [0,1)");
      }
      break;
    default:
      break;
  }
}

Shape stack_output_shape(const std::vector<LayerSpec>& specs, const Shape& input_chw) {
  if (input_chw.size() != 3) {
    throw ShapeError("stack_output_shape expects [C,H,W] input, got " + shape_str(input_chw));
  }
  Shape cur = input_chw;
  bool flat = false;
  int flat_dim = 0;
  for (const auto& spec : specs) {
    spec.validate();
    switch (spec.kind) {
      case LayerKind::conv2d: {
        if (flat) throw ShapeError("conv2d after flatten");
        int h = cur[1], w = cur[2];
        if (spec.padding == Padding::none) {
          h = h - spec.kernel_h + 1;
          w = w - spec.kernel_w + 1;
          if (h < 1 || w < 1) throw ShapeError("conv2d kernel does not fit input");
        }
        cur = {spec.conv_out_channels, h, w};
        break;
      }
      case LayerKind::dense: {
        if (!flat) throw ShapeError("dense requires flattened input");
        flat_dim = spec.dense_out_units;
        break;
      }
      case LayerKind::flatten: {
        if (!flat) {
          flat = true;
          flat_dim = cur[0] * cur[1] * cur[2];
        }
        break;
      }
      default:
        break;  // shape preserved
    }
  }
  if (flat) return {flat_dim};
  return cur;
}

}  // namespace emglab::tensor
