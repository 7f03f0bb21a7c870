#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "emglab/models.hpp"

namespace emglab::models {

namespace {

// Full snapshot of the learned state (parameters, batch-norm statistics,
// class centers) for best-epoch recall.
struct StateSnapshot {
  std::vector<Tensor> tensors;
  std::vector<char> bn_init;
};

void collect_stack(LayerStack& s, StateSnapshot& snap) {
  for (auto& slot : s.slots()) {
    snap.tensors.push_back(slot.weights);
    snap.tensors.push_back(slot.bias);
    snap.tensors.push_back(slot.gamma);
    snap.tensors.push_back(slot.beta);
    snap.tensors.push_back(slot.bn.running_mean);
    snap.tensors.push_back(slot.bn.running_var);
    snap.bn_init.push_back(slot.bn.initialized ? 1 : 0);
  }
}

void restore_stack(LayerStack& s, const StateSnapshot& snap, std::size_t& ti,
                   std::size_t& bi) {
  for (auto& slot : s.slots()) {
    slot.weights = snap.tensors[ti++];
    slot.bias = snap.tensors[ti++];
    slot.gamma = snap.tensors[ti++];
    slot.beta = snap.tensors[ti++];
    slot.bn.running_mean = snap.tensors[ti++];
    slot.bn.running_var = snap.tensors[ti++];
    slot.bn.initialized = snap.bn_init[bi++] != 0;
  }
}

StateSnapshot snapshot_model(TrainedModel& m) {
  StateSnapshot snap;
  collect_stack(m.net.stack(), snap);
  collect_stack(m.head, snap);
  snap.tensors.push_back(m.centers);
  return snap;
}

void restore_model(TrainedModel& m, const StateSnapshot& snap) {
  std::size_t ti = 0, bi = 0;
  restore_stack(m.net.stack(), snap, ti, bi);
  restore_stack(m.head, snap, ti, bi);
  m.centers = snap.tensors[ti++];
}

Tensor gather_frames(const Dataset& ds, const std::vector<int>& idx, int from, int to,
                     int h, int w) {
  const int n = to - from;
  Tensor out({n, 1, h, w});
  const std::size_t stride = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    const int src = idx[static_cast<std::size_t>(from + i)];
    std::copy(ds.frames.data() + static_cast<std::size_t>(src) * stride,
              ds.frames.data() + static_cast<std::size_t>(src + 1) * stride,
              out.data() + static_cast<std::size_t>(i) * stride);
  }
  return out;
}

std::vector<int> map_rows(const std::vector<int>& labels, const ModelSpec& spec) {
  std::vector<int> rows(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = std::lower_bound(spec.class_ids.begin(), spec.class_ids.end(), labels[i]);
    if (it == spec.class_ids.end() || *it != labels[i]) {
      throw DataError("label " + std::to_string(labels[i]) +
                      " is not among the configured training classes");
    }
    rows[i] = static_cast<int>(it - spec.class_ids.begin());
  }
  return rows;
}

Node* evidence_node(Tape& tape, Node* logits, const EcnnConfig& cfg) {
  return cfg.evidence_activation == EcnnConfig::Activation::relu
             ? tensor::relu(tape, logits)
             : softplus(tape, logits);
}

// Mean triplet loss over fixed-order validation batches with nonempty mining.
double sdcnn_validation_loss(TrainedModel& model, const Dataset& valid,
                             const TripletConfig& tcfg, int batch_size) {
  const Tensor emb = model.net.embed(valid.frames, Mode::eval);
  const int n = emb.dim(0), d = emb.dim(1);
  double total = 0.0;
  int batches = 0;
  for (int start = 0; start < n; start += batch_size) {
    const int b = std::min(batch_size, n - start);
    if (b < 2) continue;
    Tensor block({b, d});
    std::copy(emb.data() + static_cast<std::size_t>(start) * d,
              emb.data() + static_cast<std::size_t>(start + b) * d, block.data());
    std::vector<int> labels(valid.labels.begin() + start, valid.labels.begin() + start + b);
    Tensor dists = pairwise_sq_dist_values(block);
    auto triples = mine_semihard(dists, labels, tcfg.margin_alpha);
    if (triples.empty()) continue;
    double loss = 0.0;
    for (const auto& t : triples) {
      loss += std::max(dists.at(t.anchor, t.positive) - dists.at(t.anchor, t.negative) +
                           tcfg.margin_alpha,
                       0.0);
    }
    total += loss / static_cast<double>(triples.size());
    batches += 1;
  }
  if (batches == 0) return std::numeric_limits<double>::infinity();
  return total / static_cast<double>(batches);
}

double head_validation_loss(TrainedModel& model, const Dataset& valid,
                            const std::vector<int>& rows, int batch_size) {
  const int n = static_cast<int>(valid.size());
  const int h = model.net.input_h(), w = model.net.input_w();
  double total = 0.0;
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int start = 0; start < n; start += batch_size) {
    const int b = std::min(batch_size, n - start);
    Tape tape;
    Node* in = tape.leaf(gather_frames(valid, idx, start, start + b, h, w), false);
    Node* emb = model.net.forward(tape, in, Mode::eval);
    std::vector<Node*> taps;
    Node* logits = model.head.forward(tape, emb, Mode::eval, nullptr, nullptr, &taps);
    std::vector<int> batch_rows(rows.begin() + start, rows.begin() + start + b);
    Node* loss = nullptr;
    switch (model.spec.kind) {
      case ModelKind::dcnn:
        loss = cross_entropy_loss(tape, logits, batch_rows);
        break;
      case ModelKind::cnnsc: {
        Node* ce = cross_entropy_loss(tape, logits, batch_rows);
        Node* cl = center_loss(tape, taps[1], batch_rows, model.centers);
        loss = tensor::add(tape, ce, tensor::scale(tape, cl, model.spec.center.tau));
        break;
      }
      case ModelKind::ecnn:
        loss = ecnn_loss(tape, evidence_node(tape, logits, model.spec.ecnn), batch_rows,
                         model.spec.ecnn.lambda_kl);
        break;
      default:
        throw ConfigError("head_validation_loss: unexpected model kind");
    }
    total += loss->value[0] * b;
  }
  return total / static_cast<double>(n);
}

}  // namespace

TrainedModel train(const ModelSpec& spec, const Dataset& train_set,
                   const Dataset& valid_set, const TrainConfig& cfg) {
  if (train_set.size() == 0) throw DataError("train: empty training set");
  if (valid_set.size() == 0) throw DataError("train: empty validation set");
  if (spec.class_ids.size() < 2) throw ConfigError("train: need at least 2 classes");
  if (!std::is_sorted(spec.class_ids.begin(), spec.class_ids.end())) {
    throw ConfigError("train: class_ids must be ascending");
  }
  {
    std::set<int> seen(train_set.labels.begin(), train_set.labels.end());
    if (seen.size() < 2) throw DataError("train: training data contains a single class");
  }

  Rng init_rng(derive_seed(cfg.seed, 1));
  Rng shuffle_rng(derive_seed(cfg.seed, 2));
  Rng dropout_rng(derive_seed(cfg.seed, 3));

  TrainedModel model;
  model.spec = spec;
  model.train_cfg = cfg;
  model.net = EmbeddingNet(spec.input_h, spec.input_w, init_rng);
  const int num_classes = static_cast<int>(spec.class_ids.size());
  if (spec.kind != ModelKind::sdcnn) {
    model.head = LayerStack({model.net.embedding_dim()}, classifier_head_stack(num_classes),
                            init_rng, "head");
  }
  if (spec.kind == ModelKind::cnnsc) {
    model.centers = Tensor({num_classes, 128});  // zero-initialized
  }

  const std::vector<int> train_rows = map_rows(train_set.labels, spec);
  const std::vector<int> valid_rows = map_rows(valid_set.labels, spec);

  auto named = model.net.stack().params();
  if (spec.kind != ModelKind::sdcnn) {
    auto hp = model.head.params();
    named.insert(named.end(), hp.begin(), hp.end());
  }
  tensor::AdamState adam;
  adam.learning_rate = cfg.learning_rate;

  const int n = static_cast<int>(train_set.size());
  const int h = spec.input_h, w = spec.input_w;
  const int batch_size = spec.kind == ModelKind::sdcnn ? spec.triplet.batch_size
                                                       : cfg.batch_size;

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  double best_val = std::numeric_limits<double>::infinity();
  int epochs_without_improvement = 0;
  StateSnapshot best_state;
  bool have_best = false;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    int steps = 0, skipped = 0;

    for (int start = 0; start < n; start += batch_size) {
      const int b = std::min(batch_size, n - start);
      std::vector<int> batch_labels(static_cast<std::size_t>(b));
      std::vector<int> batch_rows(static_cast<std::size_t>(b));
      for (int i = 0; i < b; ++i) {
        batch_labels[static_cast<std::size_t>(i)] =
            train_set.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])];
        batch_rows[static_cast<std::size_t>(i)] =
            train_rows[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])];
      }

      Tape tape;
      Node* in = tape.leaf(gather_frames(train_set, order, start, start + b, h, w), false);
      std::vector<Node*> bound;
      Node* loss = nullptr;
      Tensor cnnsc_features;

      if (spec.kind == ModelKind::sdcnn) {
        if (b < 2) {
          skipped += 1;
          continue;
        }
        Node* emb = model.net.forward(tape, in, Mode::train, &bound);
        Node* dists = pairwise_sq_dist(tape, emb);
        auto triples = mine_semihard(dists->value, batch_labels, spec.triplet.margin_alpha);
        if (triples.empty()) {
          skipped += 1;
          continue;
        }
        loss = triplet_loss(tape, dists, triples, spec.triplet.margin_alpha);
      } else {
        Node* emb = model.net.forward(tape, in, Mode::train, &bound);
        std::vector<Node*> taps;
        Node* logits =
            model.head.forward(tape, emb, Mode::train, &dropout_rng, &bound, &taps);
        switch (spec.kind) {
          case ModelKind::dcnn:
            loss = cross_entropy_loss(tape, logits, batch_rows);
            break;
          case ModelKind::cnnsc: {
            Node* ce = cross_entropy_loss(tape, logits, batch_rows);
            Node* features = taps[1];  // dense128 -> leaky ReLU, pre-dropout
            Node* cl = center_loss(tape, features, batch_rows, model.centers);
            loss = tensor::add(tape, ce, tensor::scale(tape, cl, spec.center.tau));
            cnnsc_features = features->value;
            break;
          }
          case ModelKind::ecnn:
            loss = ecnn_loss(tape, evidence_node(tape, logits, spec.ecnn), batch_rows,
                             spec.ecnn.lambda_kl);
            break;
          default:
            break;
        }
      }

      auto grads = grad_of(tape, loss, bound);
      tensor::adam_step(named, grads, adam);
      if (spec.kind == ModelKind::cnnsc) {
        update_centers(model.centers, cnnsc_features, batch_rows, spec.center.center_lr);
      }
      epoch_loss += loss->value[0];
      steps += 1;
    }

    const double train_loss = steps > 0 ? epoch_loss / steps
                                        : std::numeric_limits<double>::quiet_NaN();
    double val_loss;
    if (spec.kind == ModelKind::sdcnn) {
      val_loss = sdcnn_validation_loss(model, valid_set, spec.triplet, batch_size);
    } else {
      val_loss = head_validation_loss(model, valid_set, valid_rows, batch_size);
    }

    model.log.train_loss.push_back(train_loss);
    model.log.valid_loss.push_back(val_loss);
    model.log.skipped_batches.push_back(skipped);
    model.log.epochs_run = epoch + 1;

    if (best_val - val_loss >= cfg.min_delta) {
      best_val = val_loss;
      model.log.best_epoch = epoch;
      epochs_without_improvement = 0;
      if (cfg.best_epoch_recall) {
        best_state = snapshot_model(model);
        have_best = true;
      }
    } else {
      epochs_without_improvement += 1;
      if (epochs_without_improvement >= cfg.patience) break;
    }
  }

  if (cfg.best_epoch_recall && have_best) restore_model(model, best_state);

  if (spec.kind == ModelKind::sdcnn) {
    Tensor emb = model.net.embed(train_set.frames, Mode::eval);
    model.centroids = ncc::compute_centroids(emb, train_set.labels);
  }
  return model;
}

}  // namespace emglab::models
