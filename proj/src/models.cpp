#include "emglab/models.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace emglab::models {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
}  // namespace

std::string model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::sdcnn: return "sdcnn";
    case ModelKind::dcnn: return "dcnn";
    case ModelKind::cnnsc: return "cnnsc";
    case ModelKind::ecnn: return "ecnn";
  }
  return "unknown";
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "sdcnn") return ModelKind::sdcnn;
  if (name == "dcnn") return ModelKind::dcnn;
  if (name == "cnnsc") return ModelKind::cnnsc;
  if (name == "ecnn") return ModelKind::ecnn;
  throw ConfigError("unknown model kind '" + name + "'");
}

std::vector<LayerSpec> sdcnn_conv_stack() {
  using LS = LayerSpec;
  std::vector<LayerSpec> specs;
  const int kernel_sizes[] = {13, 9, 5, 3};
  for (int k : kernel_sizes) {
    specs.push_back(LS::conv(32, k, k, Padding::same));
    specs.push_back(LS::batchnorm());
    specs.push_back(LS::leaky(0.01));
  }
  specs.push_back(LS::conv(8, 3, 3, Padding::none));
  specs.push_back(LS::batchnorm());
  specs.push_back(LS::leaky(0.01));
  specs.push_back(LS::flat());
  return specs;
}

std::vector<LayerSpec> classifier_head_stack(int num_classes) {
  using LS = LayerSpec;
  return {LS::fully_connected(128), LS::leaky(0.01), LS::drop(0.5),
          LS::fully_connected(num_classes)};
}

// ---- pairwise squared distances ---------------------------------------------

Node* pairwise_sq_dist(Tape& tape, Node* embeddings) {
  const Shape& es = embeddings->value.shape();
  if (es.size() != 2) throw ShapeError("pairwise_sq_dist expects [B,D]");
  const int b = es[0], d = es[1];
  if (b < 2) throw ShapeError("pairwise_sq_dist needs a batch of >= 2");

  Tensor out({b, b});
  {
    ConstMatMap e(embeddings->value.data(), b, d);
    RowMat gram = e * e.transpose();
    for (int i = 0; i < b; ++i) {
      out.at(i, i) = 0.0;
      for (int j = i + 1; j < b; ++j) {
        const double v = std::max(0.0, gram(i, i) + gram(j, j) - 2.0 * gram(i, j));
        out.at(i, j) = v;
        out.at(j, i) = v;
      }
    }
  }

  Node* node = tape.make_node(std::move(out), {embeddings}, nullptr);
  if (node->requires_grad) {
    node->backprop = [node, embeddings, b, d]() {
      // dE = 2 (diag(rowsum(s)) - s) E with s = g + g^T
      RowMat s(b, b);
      Eigen::VectorXd row_sums(b);
      for (int i = 0; i < b; ++i) {
        double total = 0.0;
        for (int j = 0; j < b; ++j) {
          const double v = node->grad[static_cast<std::size_t>(i) * b + j] +
                           node->grad[static_cast<std::size_t>(j) * b + i];
          s(i, j) = v;
          total += v;
        }
        row_sums(i) = total;
      }
      ConstMatMap e(embeddings->value.data(), b, d);
      MatMap ge(embeddings->grad.data(), b, d);
      ge.noalias() += 2.0 * (row_sums.asDiagonal() * e - s * e);
    };
  }
  return node;
}

Tensor pairwise_sq_dist_values(const Tensor& embeddings) {
  Tape tape;
  Node* e = tape.leaf(embeddings, false);
  return pairwise_sq_dist(tape, e)->value;
}

Node* softplus(Tape& tape, Node* input) {
  Tensor out(input->value.shape());
  const std::size_t n = input->value.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = input->value[i];
    out[i] = x > 30.0 ? x : std::log1p(std::exp(x));
  }
  Node* node = tape.make_node(std::move(out), {input}, nullptr);
  if (node->requires_grad) {
    node->backprop = [node, input, n]() {
      for (std::size_t i = 0; i < n; ++i) {
        const double x = input->value[i];
        const double sig = x > 30.0 ? 1.0 : 1.0 / (1.0 + std::exp(-x));
        input->grad[i] += node->grad[i] * sig;
      }
    };
  }
  return node;
}

// ---- semi-hard mining ----------------------------------------------------------

std::vector<Triplet> mine_semihard(const Tensor& dists, const std::vector<int>& labels,
                                   double alpha) {
  if (dists.rank() != 2 || dists.dim(0) != dists.dim(1)) {
    throw ShapeError("mine_semihard expects a square distance matrix");
  }
  const int b = dists.dim(0);
  if (static_cast<std::size_t>(b) != labels.size()) {
    throw ShapeError("mine_semihard labels do not match batch");
  }
  std::vector<Triplet> triples;
  for (int a = 0; a < b; ++a) {
    for (int p = 0; p < b; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      const double d_ap = dists.at(a, p);
      bool found_semihard = false;
      int fallback_harder = -1;   // hardest negative with d_an > d_ap
      int fallback_easiest = -1;  // largest-distance negative
      for (int n = 0; n < b; ++n) {
        if (labels[n] == labels[a]) continue;
        const double d_an = dists.at(a, n);
        if (d_ap < d_an && d_an < d_ap + alpha) {
          triples.push_back({a, p, n});
          found_semihard = true;
        }
        if (d_an > d_ap &&
            (fallback_harder < 0 || d_an < dists.at(a, fallback_harder))) {
          fallback_harder = n;
        }
        if (fallback_easiest < 0 || d_an > dists.at(a, fallback_easiest)) {
          fallback_easiest = n;
        }
      }
      if (!found_semihard) {
        const int n = fallback_harder >= 0 ? fallback_harder : fallback_easiest;
        if (n >= 0) triples.push_back({a, p, n});
      }
    }
  }
  return triples;
}

// ---- triplet loss ---------------------------------------------------------------

Node* triplet_loss(Tape& tape, Node* dists, const std::vector<Triplet>& triples,
                   double alpha) {
  if (triples.empty()) {
    throw DataError("triplet_loss called with no triples (step should be skipped)");
  }
  const int b = dists->value.dim(0);
  double loss = 0.0;
  for (const auto& t : triples) {
    loss += std::max(dists->value.at(t.anchor, t.positive) -
                         dists->value.at(t.anchor, t.negative) + alpha,
                     0.0);
  }
  loss /= static_cast<double>(triples.size());

  Node* node = tape.make_node(Tensor::scalar(loss), {dists}, nullptr);
  if (node->requires_grad) {
    auto kept = std::make_shared<std::vector<Triplet>>(triples);
    node->backprop = [node, dists, kept, alpha, b]() {
      const double g = node->grad[0] / static_cast<double>(kept->size());
      for (const auto& t : *kept) {
        const double slack = dists->value.at(t.anchor, t.positive) -
                             dists->value.at(t.anchor, t.negative) + alpha;
        if (slack > 0.0) {
          dists->grad[static_cast<std::size_t>(t.anchor) * b + t.positive] += g;
          dists->grad[static_cast<std::size_t>(t.anchor) * b + t.negative] -= g;
        }
      }
    };
  }
  return node;
}

// ---- cross entropy ---------------------------------------------------------------

Node* cross_entropy_loss(Tape& tape, Node* logits, const std::vector<int>& labels) {
  const Shape& ls = logits->value.shape();
  if (ls.size() != 2) throw ShapeError("cross_entropy_loss expects [B,C] logits");
  const int b = ls[0], c = ls[1];
  if (static_cast<std::size_t>(b) != labels.size()) {
    throw ShapeError("cross_entropy_loss labels do not match batch");
  }
  for (int y : labels) {
    if (y < 0 || y >= c) throw DataError("cross_entropy_loss label out of range");
  }

  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b) * c);
  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    const double* row = logits->value.data() + static_cast<std::size_t>(i) * c;
    double* prow = probs->data() + static_cast<std::size_t>(i) * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      prow[j] = std::exp(row[j] - mx);
      z += prow[j];
    }
    for (int j = 0; j < c; ++j) prow[j] /= z;
    loss += (mx + std::log(z)) - row[labels[static_cast<std::size_t>(i)]];
  }
  loss /= static_cast<double>(b);

  Node* node = tape.make_node(Tensor::scalar(loss), {logits}, nullptr);
  if (node->requires_grad) {
    auto labels_c = std::make_shared<std::vector<int>>(labels);
    node->backprop = [node, logits, probs, labels_c, b, c]() {
      const double g = node->grad[0] / static_cast<double>(b);
      for (int i = 0; i < b; ++i) {
        const double* prow = probs->data() + static_cast<std::size_t>(i) * c;
        double* grow = logits->grad.data() + static_cast<std::size_t>(i) * c;
        const int y = (*labels_c)[static_cast<std::size_t>(i)];
        for (int j = 0; j < c; ++j) grow[j] += g * (prow[j] - (j == y ? 1.0 : 0.0));
      }
    };
  }
  return node;
}

// ---- center loss -----------------------------------------------------------------

Node* center_loss(Tape& tape, Node* features, const std::vector<int>& label_rows,
                  const Tensor& centers) {
  const Shape& fs = features->value.shape();
  if (fs.size() != 2) throw ShapeError("center_loss expects [B,K] features");
  const int b = fs[0], k = fs[1];
  if (centers.rank() != 2 || centers.dim(1) != k) {
    throw ShapeError("center_loss centers must be [C,K]");
  }
  if (static_cast<std::size_t>(b) != label_rows.size()) {
    throw ShapeError("center_loss labels do not match batch");
  }

  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    const double* f = features->value.data() + static_cast<std::size_t>(i) * k;
    const double* c = centers.data() +
                      static_cast<std::size_t>(label_rows[static_cast<std::size_t>(i)]) * k;
    for (int j = 0; j < k; ++j) {
      const double z = f[j] - c[j];
      loss += z * z;
    }
  }
  loss /= 2.0 * static_cast<double>(b);

  Node* node = tape.make_node(Tensor::scalar(loss), {features}, nullptr);
  if (node->requires_grad) {
    auto centers_c = std::make_shared<Tensor>(centers);
    auto rows_c = std::make_shared<std::vector<int>>(label_rows);
    node->backprop = [node, features, centers_c, rows_c, b, k]() {
      const double g = node->grad[0] / static_cast<double>(b);
      for (int i = 0; i < b; ++i) {
        const double* f = features->value.data() + static_cast<std::size_t>(i) * k;
        const double* c = centers_c->data() +
                          static_cast<std::size_t>((*rows_c)[static_cast<std::size_t>(i)]) * k;
        double* gf = features->grad.data() + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) gf[j] += g * (f[j] - c[j]);
      }
    };
  }
  return node;
}

void update_centers(Tensor& centers, const Tensor& features,
                    const std::vector<int>& label_rows, double center_lr) {
  const int b = features.dim(0), k = features.dim(1);
  const int c = centers.dim(0);
  std::vector<double> delta(static_cast<std::size_t>(c) * k, 0.0);
  std::vector<int> counts(static_cast<std::size_t>(c), 0);
  for (int i = 0; i < b; ++i) {
    const int row = label_rows[static_cast<std::size_t>(i)];
    counts[static_cast<std::size_t>(row)] += 1;
    const double* f = features.data() + static_cast<std::size_t>(i) * k;
    const double* cc = centers.data() + static_cast<std::size_t>(row) * k;
    double* dd = delta.data() + static_cast<std::size_t>(row) * k;
    for (int j = 0; j < k; ++j) dd[j] += f[j] - cc[j];
  }
  for (int r = 0; r < c; ++r) {
    if (counts[static_cast<std::size_t>(r)] == 0) continue;
    double* cc = centers.data() + static_cast<std::size_t>(r) * k;
    const double* dd = delta.data() + static_cast<std::size_t>(r) * k;
    const double scale = center_lr / static_cast<double>(counts[static_cast<std::size_t>(r)]);
    for (int j = 0; j < k; ++j) cc[j] += scale * dd[j];
  }
}

// ---- evidential loss --------------------------------------------------------------

double digamma(double x) {
  double r = 0.0;
  while (x < 12.0) {
    r -= 1.0 / x;
    x += 1.0;
  }
  const double x1 = 1.0 / x, x2 = x1 * x1;
  return r + std::log(x) - 0.5 * x1 -
         x2 * (1.0 / 12.0 -
               x2 * (1.0 / 120.0 -
                     x2 * (1.0 / 252.0 - x2 * (1.0 / 240.0 - x2 * (1.0 / 132.0)))));
}

double trigamma(double x) {
  double r = 0.0;
  while (x < 12.0) {
    r += 1.0 / (x * x);
    x += 1.0;
  }
  const double x1 = 1.0 / x, x2 = x1 * x1;
  return r + x1 * (1.0 +
                   x1 * (0.5 +
                         x1 * (1.0 / 6.0 -
                               x2 * (1.0 / 30.0 -
                                     x2 * (1.0 / 42.0 - x2 * (1.0 / 30.0))))));
}

namespace {

// KL(Dirichlet(alpha_tilde) || Dirichlet(1)) for one row.
double dirichlet_kl_to_uniform(const std::vector<double>& at) {
  const int c = static_cast<int>(at.size());
  double s = 0.0;
  for (double v : at) s += v;
  double kl = std::lgamma(s) - std::lgamma(static_cast<double>(c));
  const double psi_s = digamma(s);
  for (double v : at) kl += -std::lgamma(v) + (v - 1.0) * (digamma(v) - psi_s);
  return kl;
}

}  // namespace

Node* ecnn_loss(Tape& tape, Node* evidence, const std::vector<int>& label_rows,
                double lambda_kl) {
  const Shape& es = evidence->value.shape();
  if (es.size() != 2) throw ShapeError("ecnn_loss expects [B,C] evidence");
  const int b = es[0], c = es[1];
  if (static_cast<std::size_t>(b) != label_rows.size()) {
    throw ShapeError("ecnn_loss labels do not match batch");
  }
  for (std::size_t i = 0; i < evidence->value.size(); ++i) {
    if (evidence->value[i] < 0.0) {
      throw NumericError("ecnn_loss requires nonnegative evidence");
    }
  }

  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    const double* e = evidence->value.data() + static_cast<std::size_t>(i) * c;
    const int y = label_rows[static_cast<std::size_t>(i)];
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += e[j] + 1.0;
    double sq = 0.0, var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double a = e[j] + 1.0;
      const double p = a / s;
      const double yj = (j == y) ? 1.0 : 0.0;
      sq += (yj - p) * (yj - p);
      var += p * (1.0 - p) / (s + 1.0);
    }
    std::vector<double> at(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j) {
      at[static_cast<std::size_t>(j)] = (j == y) ? 1.0 : e[j] + 1.0;
    }
    loss += sq + var + lambda_kl * dirichlet_kl_to_uniform(at);
  }
  loss /= static_cast<double>(b);

  Node* node = tape.make_node(Tensor::scalar(loss), {evidence}, nullptr);
  if (node->requires_grad) {
    auto rows_c = std::make_shared<std::vector<int>>(label_rows);
    node->backprop = [node, evidence, rows_c, lambda_kl, b, c]() {
      const double gout = node->grad[0] / static_cast<double>(b);
      for (int i = 0; i < b; ++i) {
        const double* e = evidence->value.data() + static_cast<std::size_t>(i) * c;
        double* ge = evidence->grad.data() + static_cast<std::size_t>(i) * c;
        const int y = (*rows_c)[static_cast<std::size_t>(i)];
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += e[j] + 1.0;
        double sum_p2 = 0.0, sum_res_p = 0.0, gsum = 0.0;
        for (int j = 0; j < c; ++j) {
          const double p = (e[j] + 1.0) / s;
          const double yj = (j == y) ? 1.0 : 0.0;
          sum_p2 += p * p;
          sum_res_p += (yj - p) * p;
          gsum += p * (1.0 - p);
        }
        double st = 0.0;
        for (int j = 0; j < c; ++j) st += (j == y) ? 1.0 : e[j] + 1.0;
        const double psi1_st = trigamma(st);
        for (int j = 0; j < c; ++j) {
          const double a = e[j] + 1.0;
          const double p = a / s;
          const double yj = (j == y) ? 1.0 : 0.0;
          // squared-error term
          double g = -(2.0 / s) * ((yj - p) - sum_res_p);
          // variance term: d[g/(S+1)]
          g += (2.0 / s) * (sum_p2 - p) / (s + 1.0) - gsum / ((s + 1.0) * (s + 1.0));
          // KL term through alpha_tilde (true class held at 1)
          if (j != y) {
            g += lambda_kl * ((a - 1.0) * trigamma(a) -
                              (st - static_cast<double>(c)) * psi1_st);
          }
          ge[j] += gout * g;
        }
      }
    };
  }
  return node;
}

EcnnUncertainty ecnn_uncertainty(const double* evidence, int num_classes) {
  EcnnUncertainty u;
  const int c = num_classes;
  double s = 0.0;
  for (int j = 0; j < c; ++j) {
    if (evidence[j] < 0.0) throw NumericError("ecnn_uncertainty requires evidence >= 0");
    s += evidence[j] + 1.0;
  }
  u.vacuity = static_cast<double>(c) / s;
  u.p_hat.resize(static_cast<std::size_t>(c));
  std::vector<double> belief(static_cast<std::size_t>(c));
  double max_p = 0.0, entropy = 0.0;
  for (int j = 0; j < c; ++j) {
    const double p = (evidence[j] + 1.0) / s;
    u.p_hat[static_cast<std::size_t>(j)] = p;
    belief[static_cast<std::size_t>(j)] = evidence[j] / s;
    max_p = std::max(max_p, p);
    if (p > 0.0) entropy -= p * std::log(p);
  }
  u.entropy = entropy;
  u.neg_max_prob = -max_p;
  u.confidence = max_p;

  // Josang-style belief conflict.
  double diss = 0.0;
  for (int j = 0; j < c; ++j) {
    const double bj = belief[static_cast<std::size_t>(j)];
    double denom = 0.0, num = 0.0;
    for (int k2 = 0; k2 < c; ++k2) {
      if (k2 == j) continue;
      const double bk = belief[static_cast<std::size_t>(k2)];
      denom += bk;
      const double both = bj + bk;
      const double bal = both > 0.0 ? 1.0 - std::fabs(bj - bk) / both : 0.0;
      num += bk * bal;
    }
    if (denom > 0.0) diss += bj * num / denom;
  }
  u.dissonance = diss;
  return u;
}

// ---- parameterized stacks -----------------------------------------------------------

LayerStack::LayerStack(Shape input_chw, std::vector<LayerSpec> specs, Rng& init_rng,
                       std::string param_prefix)
    : input_chw_(std::move(input_chw)), specs_(std::move(specs)), prefix_(std::move(param_prefix)) {
  Shape cur = input_chw_;
  bool flat = input_chw_.size() == 1;
  int flat_dim = flat ? input_chw_[0] : 0;
  for (const auto& spec : specs_) {
    spec.validate();
    Slot slot;
    slot.spec = spec;
    switch (spec.kind) {
      case tensor::LayerKind::conv2d: {
        const int cin = cur[0];
        const int fan_in = cin * spec.kernel_h * spec.kernel_w;
        const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
        slot.weights = Tensor({spec.conv_out_channels, cin, spec.kernel_h, spec.kernel_w});
        for (std::size_t i = 0; i < slot.weights.size(); ++i) {
          slot.weights[i] = init_rng.normal(0.0, std_dev);
        }
        slot.bias = Tensor({spec.conv_out_channels});
        int h = cur[1], w = cur[2];
        if (spec.padding == Padding::none) {
          h = h - spec.kernel_h + 1;
          w = w - spec.kernel_w + 1;
        }
        cur = {spec.conv_out_channels, h, w};
        break;
      }
      case tensor::LayerKind::batchnorm: {
        const int channels = cur[0];
        slot.gamma = Tensor::full({channels}, 1.0);
        slot.beta = Tensor({channels});
        break;
      }
      case tensor::LayerKind::dense: {
        const int in_dim = flat ? flat_dim : cur[0] * cur[1] * cur[2];
        const double std_dev = std::sqrt(2.0 / static_cast<double>(in_dim));
        slot.weights = Tensor({spec.dense_out_units, in_dim});
        for (std::size_t i = 0; i < slot.weights.size(); ++i) {
          slot.weights[i] = init_rng.normal(0.0, std_dev);
        }
        slot.bias = Tensor({spec.dense_out_units});
        flat = true;
        flat_dim = spec.dense_out_units;
        break;
      }
      case tensor::LayerKind::flatten: {
        if (!flat) {
          flat = true;
          flat_dim = cur[0] * cur[1] * cur[2];
        }
        break;
      }
      default:
        break;
    }
    slots_.push_back(std::move(slot));
  }
}

Shape LayerStack::output_shape() const {
  if (input_chw_.size() == 1) {
    // dense-only stack
    int dim = input_chw_[0];
    for (const auto& s : specs_) {
      if (s.kind == tensor::LayerKind::dense) dim = s.dense_out_units;
    }
    return {dim};
  }
  return tensor::stack_output_shape(specs_, input_chw_);
}

Node* LayerStack::forward(Tape& tape, Node* input, Mode mode, Rng* dropout_rng,
                          std::vector<Node*>* bound_params, std::vector<Node*>* taps) {
  const bool bind = bound_params != nullptr;
  const auto bind_pair = [&](Tensor& a, Tensor& b) {
    Node* na = tape.leaf(a, bind);
    Node* nb = tape.leaf(b, bind);
    if (bind) {
      bound_params->push_back(na);
      bound_params->push_back(nb);
    }
    return std::pair<Node*, Node*>{na, nb};
  };

  Node* cur = input;
  for (auto& slot : slots_) {
    switch (slot.spec.kind) {
      case tensor::LayerKind::conv2d: {
        auto [w, b] = bind_pair(slot.weights, slot.bias);
        cur = tensor::conv2d(tape, cur, w, b, slot.spec.padding);
        break;
      }
      case tensor::LayerKind::batchnorm: {
        auto [g, bt] = bind_pair(slot.gamma, slot.beta);
        cur = tensor::batch_norm(tape, cur, g, bt, slot.bn, mode);
        break;
      }
      case tensor::LayerKind::leaky_relu:
        cur = tensor::leaky_relu(tape, cur, slot.spec.leaky_slope);
        break;
      case tensor::LayerKind::flatten:
        cur = tensor::flatten(tape, cur);
        break;
      case tensor::LayerKind::dense: {
        auto [w, b] = bind_pair(slot.weights, slot.bias);
        cur = tensor::dense(tape, cur, w, b);
        break;
      }
      case tensor::LayerKind::dropout: {
        if (mode == Mode::train && dropout_rng == nullptr) {
          throw ConfigError("train-mode dropout requires an RNG");
        }
        static Rng unused(0);
        cur = tensor::dropout(tape, cur, slot.spec.dropout_rate, mode,
                              dropout_rng ? *dropout_rng : unused);
        break;
      }
    }
    if (taps) taps->push_back(cur);
  }
  return cur;
}

std::vector<NamedParam> LayerStack::params() {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    auto& s = slots_[i];
    const std::string base = prefix_ + ".layer" + std::to_string(i);
    switch (s.spec.kind) {
      case tensor::LayerKind::conv2d:
      case tensor::LayerKind::dense:
        out.push_back({base + ".weights", &s.weights});
        out.push_back({base + ".bias", &s.bias});
        break;
      case tensor::LayerKind::batchnorm:
        out.push_back({base + ".gamma", &s.gamma});
        out.push_back({base + ".beta", &s.beta});
        break;
      default:
        break;
    }
  }
  return out;
}

std::vector<Tensor*> LayerStack::param_tensors() {
  std::vector<Tensor*> out;
  for (auto& p : params()) out.push_back(p.value);
  return out;
}

// ---- embedding net --------------------------------------------------------------

EmbeddingNet::EmbeddingNet(int input_h, int input_w, Rng& init_rng)
    : EmbeddingNet(input_h, input_w, sdcnn_conv_stack(), init_rng) {}

EmbeddingNet::EmbeddingNet(int input_h, int input_w, std::vector<LayerSpec> specs,
                           Rng& init_rng)
    : stack_({1, input_h, input_w}, std::move(specs), init_rng, "net"),
      input_h_(input_h),
      input_w_(input_w) {
  embedding_dim_ = stack_.output_shape()[0];
}

Node* EmbeddingNet::forward(Tape& tape, Node* frames_b1hw, Mode mode,
                            std::vector<Node*>* bound_params) {
  return stack_.forward(tape, frames_b1hw, mode, nullptr, bound_params);
}

Tensor EmbeddingNet::embed(const Tensor& frames, Mode mode) {
  if (frames.rank() != 3 || frames.dim(1) != input_h_ || frames.dim(2) != input_w_) {
    throw ShapeError("embed expects [B," + std::to_string(input_h_) + "," +
                             std::to_string(input_w_) + "] frames, got " +
                             tensor::shape_str(frames.shape()));
  }
  const int total = frames.dim(0);
  const int chunk = 256;
  Tensor out({total, embedding_dim_});
  const std::size_t frame_elems = static_cast<std::size_t>(input_h_) * input_w_;
  for (int start = 0; start < total; start += chunk) {
    const int n = std::min(chunk, total - start);
    Tensor block({n, 1, input_h_, input_w_});
    std::copy(frames.data() + static_cast<std::size_t>(start) * frame_elems,
              frames.data() + static_cast<std::size_t>(start + n) * frame_elems,
              block.data());
    Tape tape;
    Node* in = tape.leaf(std::move(block), false);
    Node* emb = forward(tape, in, mode);
    std::copy(emb->value.data(), emb->value.data() + emb->value.size(),
              out.data() + static_cast<std::size_t>(start) * embedding_dim_);
  }
  return out;
}

// ---- inference ----------------------------------------------------------------------

namespace {

// Eval-mode logits for baseline heads, chunked to bound tape memory.
Tensor forward_logits(TrainedModel& model, const Tensor& frames) {
  const int h = model.net.input_h(), w = model.net.input_w();
  const int total = frames.dim(0);
  const int c = model.num_classes();
  const int chunk = 256;
  Tensor out({total, c});
  const std::size_t frame_elems = static_cast<std::size_t>(h) * w;
  for (int start = 0; start < total; start += chunk) {
    const int n = std::min(chunk, total - start);
    Tensor block({n, 1, h, w});
    std::copy(frames.data() + static_cast<std::size_t>(start) * frame_elems,
              frames.data() + static_cast<std::size_t>(start + n) * frame_elems,
              block.data());
    Tape tape;
    Node* in = tape.leaf(std::move(block), false);
    Node* emb = model.net.forward(tape, in, Mode::eval);
    Node* logits = model.head.forward(tape, emb, Mode::eval, nullptr);
    std::copy(logits->value.data(), logits->value.data() + logits->value.size(),
              out.data() + static_cast<std::size_t>(start) * c);
  }
  return out;
}

void softmax_row(const double* in, double* out, int c) {
  const double mx = *std::max_element(in, in + c);
  double z = 0.0;
  for (int j = 0; j < c; ++j) {
    out[j] = std::exp(in[j] - mx);
    z += out[j];
  }
  for (int j = 0; j < c; ++j) out[j] /= z;
}

}  // namespace

BatchPrediction predict(TrainedModel& model, const Tensor& frames) {
  if (frames.rank() != 3) throw ShapeError("predict expects [B,H,W] frames");
  const int b = frames.dim(0);
  const int c = model.num_classes();
  BatchPrediction out;
  out.predicted.resize(static_cast<std::size_t>(b));
  out.confidence.resize(static_cast<std::size_t>(b));
  out.scores = Tensor({b, c});

  if (model.spec.kind == ModelKind::sdcnn) {
    Tensor emb = model.net.embed(frames, Mode::eval);
    auto preds = ncc::predict_batch(emb, model.centroids);
    out.dists.reserve(static_cast<std::size_t>(b));
    out.degenerate.reserve(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
      const auto& p = preds[static_cast<std::size_t>(i)];
      out.predicted[static_cast<std::size_t>(i)] = p.predicted;
      double best = 0.0;
      for (int j = 0; j < c; ++j) {
        const double s = p.confidence.scores[static_cast<std::size_t>(j)];
        out.scores.at(i, j) = s;
        best = std::max(best, s);
      }
      out.confidence[static_cast<std::size_t>(i)] = best;
      out.dists.push_back(p.distances);
      out.degenerate.push_back(p.confidence.degenerate);
    }
    return out;
  }

  Tensor logits = forward_logits(model, frames);
  std::vector<double> row(static_cast<std::size_t>(c));
  for (int i = 0; i < b; ++i) {
    const double* lr = logits.data() + static_cast<std::size_t>(i) * c;
    if (model.spec.kind == ModelKind::ecnn) {
      for (int j = 0; j < c; ++j) {
        const double x = lr[j];
        row[static_cast<std::size_t>(j)] =
            model.spec.ecnn.evidence_activation == EcnnConfig::Activation::relu
                ? std::max(0.0, x)
                : (x > 30.0 ? x : std::log1p(std::exp(x)));
      }
      auto u = ecnn_uncertainty(row.data(), c);
      int best = 0;
      for (int j = 0; j < c; ++j) {
        out.scores.at(i, j) = u.p_hat[static_cast<std::size_t>(j)];
        if (u.p_hat[static_cast<std::size_t>(j)] > u.p_hat[static_cast<std::size_t>(best)]) {
          best = j;
        }
      }
      out.predicted[static_cast<std::size_t>(i)] = model.spec.class_ids[static_cast<std::size_t>(best)];
      out.confidence[static_cast<std::size_t>(i)] = u.confidence;
    } else {
      softmax_row(lr, row.data(), c);
      int best = 0;
      for (int j = 0; j < c; ++j) {
        out.scores.at(i, j) = row[static_cast<std::size_t>(j)];
        if (row[static_cast<std::size_t>(j)] > row[static_cast<std::size_t>(best)]) best = j;
      }
      out.predicted[static_cast<std::size_t>(i)] = model.spec.class_ids[static_cast<std::size_t>(best)];
      out.confidence[static_cast<std::size_t>(i)] = row[static_cast<std::size_t>(best)];
    }
  }
  return out;
}

// ---- misc -------------------------------------------------------------------------

int TrainedModel::class_row(int class_id) const {
  const auto& ids = spec.class_ids;
  auto it = std::lower_bound(ids.begin(), ids.end(), class_id);
  if (it == ids.end() || *it != class_id) return -1;
  return static_cast<int>(it - ids.begin());
}

Dataset dataset_from_sequences(const std::vector<const dsp::FrameSequence*>& seqs) {
  if (seqs.empty()) throw DataError("dataset_from_sequences: no sequences");
  const int h = seqs.front()->height, w = seqs.front()->width;
  std::size_t total = 0;
  for (const auto* s : seqs) {
    if (s->height != h || s->width != w) {
      throw DataError("dataset_from_sequences: inconsistent frame sizes");
    }
    total += s->count();
  }
  if (total == 0) throw DataError("dataset_from_sequences: no frames");
  Dataset ds;
  ds.frames = Tensor({static_cast<int>(total), h, w});
  ds.labels.reserve(total);
  std::size_t off = 0;
  for (const auto* s : seqs) {
    std::copy(s->frames.begin(), s->frames.end(), ds.frames.data() + off);
    off += s->frames.size();
    ds.labels.insert(ds.labels.end(), s->labels.begin(), s->labels.end());
  }
  return ds;
}

}  // namespace emglab::models
