#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "emglab/models.hpp"
#include "testutil.hpp"

using namespace emglab;
using namespace emglab::models;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

// Independent mining oracle: direct enumeration over all index triples,
// with the same fallback rule evaluated by exhaustive scans.
std::vector<Triplet> brute_force_mine(const Tensor& d, const std::vector<int>& labels,
                                      double alpha) {
  const int b = d.dim(0);
  std::vector<Triplet> out;
  for (int a = 0; a < b; ++a) {
    for (int p = 0; p < b; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      std::vector<Triplet> semihard;
      for (int n = 0; n < b; ++n) {
        if (labels[n] == labels[a]) continue;
        if (d.at(a, p) < d.at(a, n) && d.at(a, n) < d.at(a, p) + alpha) {
          semihard.push_back({a, p, n});
        }
      }
      if (!semihard.empty()) {
        out.insert(out.end(), semihard.begin(), semihard.end());
        continue;
      }
      int pick = -1;
      for (int n = 0; n < b; ++n) {
        if (labels[n] == labels[a] || d.at(a, n) <= d.at(a, p)) continue;
        if (pick < 0 || d.at(a, n) < d.at(a, pick)) pick = n;
      }
      if (pick < 0) {
        for (int n = 0; n < b; ++n) {
          if (labels[n] == labels[a]) continue;
          if (pick < 0 || d.at(a, n) > d.at(a, pick)) pick = n;
        }
      }
      if (pick >= 0) out.push_back({a, p, pick});
    }
  }
  return out;
}

Dataset two_blob_dataset(int per_class, double separation, Rng& rng, int h = 4,
                         int w = 16) {
  Dataset ds;
  ds.frames = Tensor({2 * per_class, h, w});
  for (int i = 0; i < 2 * per_class; ++i) {
    const int cls = i < per_class ? 0 : 1;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const double base = (cls == 0 ? (c < w / 2 ? separation : 0.0)
                                      : (c >= w / 2 ? separation : 0.0));
        ds.frames.at(i, r, c) = base + 0.1 * rng.normal();
      }
    }
    ds.labels.push_back(cls);
  }
  return ds;
}

}  // namespace

TEST_CASE("pairwise squared distances") {
  SUBCASE("identical rows give zeros") {
    Tensor e({3, 4});
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 4; ++j) e.at(i, j) = 1.5;
    }
    auto d = pairwise_sq_dist_values(e);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(d[i] == 0.0);
  }
  SUBCASE("3-4-5 triangle") {
    Tensor e({2, 2}, {0.0, 0.0, 3.0, 4.0});
    auto d = pairwise_sq_dist_values(e);
    CHECK(d.at(0, 1) == doctest::Approx(25.0));
    CHECK(d.at(1, 0) == doctest::Approx(25.0));
    CHECK(d.at(0, 0) == 0.0);
  }
  SUBCASE("random matrix matches the double-loop oracle") {
    Rng rng(2);
    Tensor e = random_tensor({8, 5}, rng);
    auto d = pairwise_sq_dist_values(e);
    for (int i = 0; i < 8; ++i) {
      for (int j = 0; j < 8; ++j) {
        double acc = 0.0;
        for (int k = 0; k < 5; ++k) {
          const double z = e.at(i, k) - e.at(j, k);
          acc += z * z;
        }
        CHECK(std::fabs(d.at(i, j) - acc) < 1e-10);
        CHECK(d.at(i, j) == d.at(j, i));
        CHECK(d.at(i, j) >= 0.0);
      }
    }
  }
  SUBCASE("gradient matches finite differences") {
    Rng rng(3);
    std::vector<Tensor> params = {random_tensor({5, 3}, rng)};
    auto res = grad_check(params, [](tensor::Tape& t, const std::vector<Node*>& p) {
      return tensor::sum_squares(t, pairwise_sq_dist(t, p[0]));
    });
    CHECK(res.max_rel_error < 1e-6);
  }
}

TEST_CASE("semi-hard mining") {
  SUBCASE("four-point configuration with no semi-hard window") {
    // two classes at mutual squared distance 100, intra-class 1
    Tensor d({4, 4});
    const auto set = [&](int i, int j, double v) {
      d.at(i, j) = v;
      d.at(j, i) = v;
    };
    set(0, 1, 1.0);
    set(2, 3, 1.0);
    set(0, 2, 100.0);
    set(0, 3, 100.0);
    set(1, 2, 100.0);
    set(1, 3, 100.0);
    const std::vector<int> labels = {0, 0, 1, 1};
    auto triples = mine_semihard(d, labels, 20.0);
    CHECK(triples.size() == 4);  // one fallback per anchor-positive pair
    for (const auto& t : triples) {
      CHECK(d.at(t.anchor, t.negative) == doctest::Approx(100.0));
      CHECK(labels[static_cast<std::size_t>(t.anchor)] ==
            labels[static_cast<std::size_t>(t.positive)]);
      CHECK(labels[static_cast<std::size_t>(t.anchor)] !=
            labels[static_cast<std::size_t>(t.negative)]);
    }
  }
  SUBCASE("only the in-window negative is semi-hard") {
    // d_ap = 4; negatives at 2, 10, 30; alpha = 20 -> only 10 qualifies
    Tensor d({5, 5});
    const auto set = [&](int i, int j, double v) {
      d.at(i, j) = v;
      d.at(j, i) = v;
    };
    set(0, 1, 4.0);
    set(0, 2, 2.0);
    set(0, 3, 10.0);
    set(0, 4, 30.0);
    // keep the other pairs far so they fall back deterministically
    set(1, 2, 50.0);
    set(1, 3, 50.0);
    set(1, 4, 50.0);
    set(2, 3, 1.0);
    set(2, 4, 1.0);
    set(3, 4, 1.0);
    const std::vector<int> labels = {0, 0, 1, 1, 1};
    auto triples = mine_semihard(d, labels, 20.0);
    bool found = false;
    for (const auto& t : triples) {
      if (t.anchor == 0 && t.positive == 1) {
        CHECK(t.negative == 3);
        found = true;
      }
    }
    CHECK(found);
  }
  SUBCASE("equals brute-force enumeration on random batches") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
      const int b = 4 + rng.uniform_int(29);
      const int classes = 2 + rng.uniform_int(5);
      std::vector<int> labels(static_cast<std::size_t>(b));
      for (auto& l : labels) l = rng.uniform_int(classes);
      labels[0] = 0;
      labels[1] = 0;  // guarantee a positive pair
      labels[2] = 1;
      Tensor e = random_tensor({b, 6}, rng, 2.0);
      auto d = pairwise_sq_dist_values(e);
      auto mined = mine_semihard(d, labels, 8.0);
      auto brute = brute_force_mine(d, labels, 8.0);
      std::sort(mined.begin(), mined.end());
      std::sort(brute.begin(), brute.end());
      REQUIRE(mined == brute);
    }
  }
  SUBCASE("single-class batch yields no triples") {
    Tensor e({4, 3});
    auto d = pairwise_sq_dist_values(e);
    CHECK(mine_semihard(d, {2, 2, 2, 2}, 20.0).empty());
  }
}

TEST_CASE("triplet loss") {
  Tensor e({3, 2}, {0.0, 0.0, 0.0, 0.0, 0.0, 5.0});
  SUBCASE("boundary case is exactly zero") {
    // d_ap = 0, d_an = alpha
    auto d = pairwise_sq_dist_values(e);  // d(0,1)=0, d(0,2)=25
    tensor::Tape tape;
    Node* dn = tape.leaf(d, false);
    Node* loss = triplet_loss(tape, dn, {{0, 1, 2}}, 25.0);
    CHECK(loss->value[0] == 0.0);
  }
  SUBCASE("hand-computed positive loss") {
    Tensor d({3, 3});
    d.at(0, 1) = 5.0;
    d.at(0, 2) = 10.0;
    tensor::Tape tape;
    Node* dn = tape.leaf(d, false);
    Node* loss = triplet_loss(tape, dn, {{0, 1, 2}}, 20.0);
    CHECK(loss->value[0] == doctest::Approx(15.0));
  }
  SUBCASE("empty triples are rejected") {
    tensor::Tape tape;
    Node* dn = tape.leaf(Tensor({2, 2}), false);
    CHECK_THROWS_AS(triplet_loss(tape, dn, {}, 20.0), DataError);
  }
  SUBCASE("gradient through embeddings matches finite differences") {
    Rng rng(11);
    Tensor emb = random_tensor({8, 4}, rng);
    std::vector<int> labels = {0, 0, 1, 1, 2, 2, 0, 1};
    auto d0 = pairwise_sq_dist_values(emb);
    auto triples = mine_semihard(d0, labels, 6.0);
    REQUIRE(!triples.empty());
    std::vector<Tensor> params = {emb};
    auto res = grad_check(params, [&](tensor::Tape& t, const std::vector<Node*>& p) {
      return triplet_loss(t, pairwise_sq_dist(t, p[0]), triples, 6.0);
    });
    CHECK(res.max_rel_error < 1e-4);
  }
  SUBCASE("margin monotonicity for fixed triples") {
    Rng rng(13);
    Tensor emb = random_tensor({6, 3}, rng);
    std::vector<int> labels = {0, 0, 0, 1, 1, 1};
    auto d = pairwise_sq_dist_values(emb);
    auto triples = mine_semihard(d, labels, 4.0);
    REQUIRE(!triples.empty());
    double prev = -1.0;
    for (double alpha : {1.0, 2.0, 4.0, 8.0, 16.0}) {
      tensor::Tape tape;
      Node* dn = tape.leaf(d, false);
      const double loss = triplet_loss(tape, dn, triples, alpha)->value[0];
      CHECK(loss >= prev);
      prev = loss;
    }
  }
}

TEST_CASE("cross entropy") {
  SUBCASE("uniform logits give log C") {
    tensor::Tape tape;
    Node* logits = tape.leaf(Tensor({2, 6}), false);
    Node* loss = cross_entropy_loss(tape, logits, {0, 3});
    CHECK(loss->value[0] == doctest::Approx(std::log(6.0)).epsilon(1e-9));
  }
  SUBCASE("concentrated logits give near-zero loss") {
    Tensor logits({1, 6});
    logits.at(0, 2) = 30.0;
    tensor::Tape tape;
    Node* loss = cross_entropy_loss(tape, tape.leaf(logits, false), {2});
    CHECK(loss->value[0] < 1e-9);
  }
  SUBCASE("gradient matches finite differences") {
    Rng rng(17);
    std::vector<Tensor> params = {random_tensor({5, 4}, rng, 2.0)};
    auto res = grad_check(params, [](tensor::Tape& t, const std::vector<Node*>& p) {
      return cross_entropy_loss(t, p[0], {0, 1, 2, 3, 0});
    });
    CHECK(res.max_rel_error < 1e-5);
  }
}

TEST_CASE("center loss") {
  SUBCASE("features equal to centers give zero") {
    Tensor centers({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 4.0});
    Tensor feats({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 4.0});
    tensor::Tape tape;
    Node* loss = center_loss(tape, tape.leaf(feats, false), {0, 1}, centers);
    CHECK(loss->value[0] == 0.0);
  }
  SUBCASE("single unit feature at the origin center") {
    const int b = 4;
    Tensor centers({1, 3});
    Tensor feats({b, 3});
    feats.at(0, 0) = 1.0;
    tensor::Tape tape;
    Node* loss = center_loss(tape, tape.leaf(feats, false), {0, 0, 0, 0}, centers);
    CHECK(loss->value[0] == doctest::Approx(0.5 / b));
  }
  SUBCASE("center update with lr=1 and a single-class batch lands on the mean") {
    Rng rng(19);
    Tensor feats = random_tensor({6, 4}, rng);
    Tensor centers({1, 4}, {5.0, -2.0, 0.5, 1.0});
    update_centers(centers, feats, {0, 0, 0, 0, 0, 0}, 1.0);
    for (int k = 0; k < 4; ++k) {
      double mean = 0.0;
      for (int i = 0; i < 6; ++i) mean += feats.at(i, k);
      mean /= 6.0;
      CHECK(centers.at(0, k) == doctest::Approx(mean).epsilon(1e-12));
    }
  }
  SUBCASE("gradient matches finite differences") {
    Rng rng(23);
    Tensor centers = random_tensor({3, 4}, rng);
    std::vector<Tensor> params = {random_tensor({5, 4}, rng)};
    auto res = grad_check(params, [&](tensor::Tape& t, const std::vector<Node*>& p) {
      return center_loss(t, p[0], {0, 1, 2, 0, 1}, centers);
    });
    CHECK(res.max_rel_error < 1e-6);
  }
}

TEST_CASE("evidential loss") {
  SUBCASE("zero evidence two-class hand value") {
    tensor::Tape tape;
    Node* ev = tape.leaf(Tensor({1, 2}), false);
    Node* loss = ecnn_loss(tape, ev, {0}, 0.1);
    CHECK(loss->value[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("strong true-class evidence drives the loss toward zero") {
    Tensor ev({1, 4});
    ev.at(0, 1) = 1000.0;
    tensor::Tape tape;
    Node* loss = ecnn_loss(tape, tape.leaf(ev, false), {1}, 0.1);
    CHECK(loss->value[0] < 0.01);
  }
  SUBCASE("negative evidence violates the contract") {
    Tensor ev({1, 2});
    ev.at(0, 0) = -0.5;
    tensor::Tape tape;
    CHECK_THROWS_AS(ecnn_loss(tape, tape.leaf(ev, false), {0}, 0.1), NumericError);
  }
  SUBCASE("gradient matches finite differences") {
    Rng rng(29);
    Tensor ev({6, 4});
    for (std::size_t i = 0; i < ev.size(); ++i) ev[i] = std::fabs(rng.normal()) + 0.05;
    std::vector<Tensor> params = {ev};
    auto res = grad_check(params, [](tensor::Tape& t, const std::vector<Node*>& p) {
      return ecnn_loss(t, p[0], {0, 1, 2, 3, 0, 1}, 0.1);
    });
    CHECK(res.max_rel_error < 1e-4);
  }
  SUBCASE("digamma and trigamma match reference values") {
    CHECK(std::fabs(digamma(1.0) - (-0.5772156649015329)) < 1e-12);
    CHECK(std::fabs(digamma(10.0) - 2.2517525890667211) < 1e-12);
    CHECK(std::fabs(trigamma(1.0) - M_PI * M_PI / 6.0) < 1e-12);
    CHECK(std::fabs(trigamma(5.0) - 0.2213229557371153) < 1e-12);
  }
}

TEST_CASE("evidential uncertainty") {
  SUBCASE("zero evidence gives full vacuity") {
    std::vector<double> ev(6, 0.0);
    auto u = ecnn_uncertainty(ev.data(), 6);
    CHECK(u.vacuity == doctest::Approx(1.0));
    CHECK(u.confidence == doctest::Approx(1.0 / 6.0));
  }
  SUBCASE("one-sided evidence hand values") {
    std::vector<double> ev = {10.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    auto u = ecnn_uncertainty(ev.data(), 6);
    CHECK(u.vacuity == doctest::Approx(6.0 / 16.0));
    CHECK(u.neg_max_prob == doctest::Approx(-11.0 / 16.0));
  }
  SUBCASE("equal positive evidence maximizes dissonance among tested rows") {
    std::vector<double> equal = {5.0, 5.0, 5.0, 5.0};
    std::vector<double> onesided = {20.0, 0.0, 0.0, 0.0};
    std::vector<double> skewed = {10.0, 5.0, 1.0, 0.0};
    auto ue = ecnn_uncertainty(equal.data(), 4);
    auto uo = ecnn_uncertainty(onesided.data(), 4);
    auto us = ecnn_uncertainty(skewed.data(), 4);
    CHECK(ue.dissonance > uo.dissonance);
    CHECK(ue.dissonance > us.dissonance);
    CHECK(ue.confidence == doctest::Approx(0.25));
    // probabilities always sum to one
    for (const auto& u : {ue, uo, us}) {
      double s = 0.0;
      for (double p : u.p_hat) s += p;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(u.entropy >= 0.0);
      CHECK(u.entropy <= std::log(4.0) + 1e-12);
      CHECK(u.vacuity > 0.0);
      CHECK(u.vacuity <= 1.0);
    }
  }
}

TEST_CASE("embedding network") {
  Rng rng(31);
  EmbeddingNet net(4, 16, rng);
  CHECK(net.embedding_dim() == 224);

  SUBCASE("zero frame embeds to a finite 224-vector (train-mode statistics)") {
    Tensor frames({2, 4, 16});
    Tensor emb = net.embed(frames, Mode::train);
    CHECK(emb.shape() == tensor::Shape{2, 224});
    CHECK(emb.all_finite());
  }
  SUBCASE("identical frames embed identically and Siamese batches split") {
    Rng frng(33);
    Tensor warmup = random_tensor({4, 4, 16}, frng);
    net.embed(warmup, Mode::train);  // initialize batch-norm statistics

    Tensor pair({2, 4, 16});
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 16; ++c) {
        pair.at(0, r, c) = 0.3 * r + 0.1 * c;
        pair.at(1, r, c) = 0.3 * r + 0.1 * c;
      }
    }
    Tensor emb = net.embed(pair, Mode::eval);
    for (int k = 0; k < 224; ++k) CHECK(emb.at(0, k) == emb.at(1, k));

    // weight sharing: embedding a concatenated batch equals concatenating
    // per-half embeddings row by row
    Tensor a = random_tensor({3, 4, 16}, frng);
    Tensor b = random_tensor({2, 4, 16}, frng);
    Tensor ab({5, 4, 16});
    std::copy(a.values().begin(), a.values().end(), ab.data());
    std::copy(b.values().begin(), b.values().end(), ab.data() + a.size());
    Tensor ea = net.embed(a, Mode::eval);
    Tensor eb = net.embed(b, Mode::eval);
    Tensor eab = net.embed(ab, Mode::eval);
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 224; ++k) CHECK(eab.at(i, k) == ea.at(i, k));
    }
    for (int i = 0; i < 2; ++i) {
      for (int k = 0; k < 224; ++k) CHECK(eab.at(3 + i, k) == eb.at(i, k));
    }
  }
  SUBCASE("untrained net separates distinct inputs") {
    Tensor frames({2, 4, 16});
    for (int c = 0; c < 16; ++c) {
      frames.at(0, 0, c) = 1.0;
      frames.at(1, 3, c) = 1.0;
    }
    Tensor emb = net.embed(frames, Mode::train);
    double dist = 0.0;
    for (int k = 0; k < 224; ++k) {
      const double z = emb.at(0, k) - emb.at(1, k);
      dist += z * z;
    }
    CHECK(dist > 0.0);
  }
}

TEST_CASE("full embedding network gradient check with triplet loss") {
  Rng rng(37);
  EmbeddingNet net(4, 16, rng);
  Tensor frames = random_tensor({12, 4, 16}, rng, 0.5);
  std::vector<int> labels = {0, 0, 1, 1, 2, 2, 0, 1, 2, 0, 1, 2};

  // triples mined once and then frozen, so the loss stays differentiable
  std::vector<Triplet> triples;
  {
    Tensor emb = net.embed(frames, Mode::train);
    triples = mine_semihard(pairwise_sq_dist_values(emb), labels, 20.0);
  }
  REQUIRE(!triples.empty());

  // Reverse-mode gradients over every parameter, then central differences on
  // a random subset of entries per parameter tensor (a full sweep over all
  // ~126k parameters is prohibitively slow).
  Tensor batch({12, 1, 4, 16}, frames.values());
  tensor::Tape tape;
  std::vector<Node*> bound;
  Node* in = tape.leaf(batch, false);
  Node* emb_node = net.forward(tape, in, Mode::train, &bound);
  Node* loss_node = triplet_loss(tape, pairwise_sq_dist(tape, emb_node), triples, 20.0);
  auto grads = grad_of(tape, loss_node, bound);

  auto eval_loss = [&]() {
    Tensor emb = net.embed(frames, Mode::train);
    Tensor d = pairwise_sq_dist_values(emb);
    double loss = 0.0;
    for (const auto& t : triples) {
      loss += std::max(d.at(t.anchor, t.positive) - d.at(t.anchor, t.negative) + 20.0, 0.0);
    }
    return loss / static_cast<double>(triples.size());
  };

  Rng probe_rng(41);
  const double h = 1e-5;
  double max_err = 0.0;
  auto params = net.stack().params();
  REQUIRE(params.size() == grads.size());
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& tensor_ref = *params[pi].value;
    for (int probe = 0; probe < 4; ++probe) {
      const std::size_t j = static_cast<std::size_t>(
          probe_rng.uniform_int(static_cast<int>(tensor_ref.size())));
      const double orig = tensor_ref[j];
      tensor_ref[j] = orig + h;
      const double fp = eval_loss();
      tensor_ref[j] = orig - h;
      const double fm = eval_loss();
      tensor_ref[j] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      max_err = std::max(max_err, testutil::rel_error(grads[pi][j], fd));
    }
  }
  CHECK(max_err < 1e-4);
}

TEST_CASE("training loop") {
  Rng rng(43);
  Dataset train_set = two_blob_dataset(40, 2.0, rng);
  Dataset valid_set = two_blob_dataset(10, 2.0, rng);

  ModelSpec spec;
  spec.kind = ModelKind::sdcnn;
  spec.class_ids = {0, 1};
  spec.triplet.batch_size = 16;

  TrainConfig cfg;
  cfg.seed = 7;
  cfg.batch_size = 16;

  SUBCASE("max_epochs 1 runs exactly one epoch") {
    TrainConfig one = cfg;
    one.max_epochs = 1;
    auto model = train(spec, train_set, valid_set, one);
    CHECK(model.log.epochs_run == 1);
    CHECK(model.centroids.num_classes() == 2);
  }
  SUBCASE("validation loss improves on separable data and runs are repeatable") {
    TrainConfig few = cfg;
    few.max_epochs = 3;
    auto m1 = train(spec, train_set, valid_set, few);
    auto m2 = train(spec, train_set, valid_set, few);
    CHECK(m1.log.valid_loss == m2.log.valid_loss);
    CHECK(m1.log.train_loss == m2.log.train_loss);
    REQUIRE(m1.log.best_epoch >= 0);
    CHECK(m1.log.valid_loss[static_cast<std::size_t>(m1.log.best_epoch)] <=
          m1.log.valid_loss.front());
  }
  SUBCASE("empty and single-class sets are data errors") {
    Dataset empty;
    CHECK_THROWS_AS(train(spec, empty, valid_set, cfg), DataError);
    Dataset mono = two_blob_dataset(10, 1.0, rng);
    for (auto& l : mono.labels) l = 0;
    CHECK_THROWS_AS(train(spec, mono, valid_set, cfg), DataError);
  }
  SUBCASE("baseline heads train and predict") {
    for (auto kind : {ModelKind::dcnn, ModelKind::cnnsc, ModelKind::ecnn}) {
      ModelSpec bs = spec;
      bs.kind = kind;
      TrainConfig tc = cfg;
      tc.max_epochs = 2;
      tc.learning_rate = kind == ModelKind::dcnn ? 1e-3 : 1e-4;
      auto model = train(bs, train_set, valid_set, tc);
      auto pred = predict(model, valid_set.frames);
      CHECK(pred.predicted.size() == valid_set.size());
      for (double c : pred.confidence) {
        CHECK(c > 0.0);
        CHECK(c <= 1.0 + 1e-12);
      }
      // full score rows sum to one
      for (int i = 0; i < static_cast<int>(valid_set.size()); ++i) {
        double s = 0.0;
        for (int j = 0; j < 2; ++j) s += pred.scores.at(i, j);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Rng rng(47);
  Dataset train_set = two_blob_dataset(24, 2.0, rng);
  Dataset valid_set = two_blob_dataset(8, 2.0, rng);

  ModelSpec spec;
  spec.kind = ModelKind::cnnsc;
  spec.class_ids = {0, 1};
  TrainConfig cfg;
  cfg.seed = 11;
  cfg.batch_size = 16;
  cfg.max_epochs = 1;
  cfg.learning_rate = 1e-4;
  auto model = train(spec, train_set, valid_set, cfg);

  const std::string path = "/tmp/emglab_test_model.ckpt";
  save_checkpoint(model, path);
  auto loaded = load_checkpoint(path);

  CHECK(loaded.spec.kind == model.spec.kind);
  CHECK(loaded.spec.class_ids == model.spec.class_ids);
  CHECK(loaded.train_cfg.seed == model.train_cfg.seed);
  CHECK(loaded.log.valid_loss == model.log.valid_loss);

  auto p1 = model.net.stack().params();
  auto p2 = loaded.net.stack().params();
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    REQUIRE(p1[i].value->size() == p2[i].value->size());
    for (std::size_t j = 0; j < p1[i].value->size(); ++j) {
      CHECK((*p1[i].value)[j] == (*p2[i].value)[j]);
    }
  }
  CHECK(model.centers.values() == loaded.centers.values());

  // identical predictions after reload
  auto a = predict(model, valid_set.frames);
  auto b = predict(loaded, valid_set.frames);
  CHECK(a.predicted == b.predicted);
  for (std::size_t i = 0; i < a.confidence.size(); ++i) {
    CHECK(a.confidence[i] == b.confidence[i]);
  }

  // save -> load -> save gives identical bytes
  const std::string path2 = "/tmp/emglab_test_model2.ckpt";
  save_checkpoint(loaded, path2);
  auto read_file = [](const std::string& p) {
    std::FILE* f = std::fopen(p.c_str(), "rb");
    REQUIRE(f != nullptr);
    std::fseek(f, 0, SEEK_END);
    const long n = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::string data(static_cast<std::size_t>(n), '\0');
    REQUIRE(std::fread(data.data(), 1, data.size(), f) == data.size());
    std::fclose(f);
    return data;
  };
  CHECK(read_file(path) == read_file(path2));
}

TEST_CASE("sdcnn training separates synthetic classes") {
  Rng rng(53);
  Dataset train_set = two_blob_dataset(40, 2.0, rng);
  Dataset test_set = two_blob_dataset(12, 2.0, rng);

  ModelSpec spec;
  spec.kind = ModelKind::sdcnn;
  spec.class_ids = {0, 1};
  spec.triplet.batch_size = 16;
  TrainConfig cfg;
  cfg.seed = 3;
  cfg.max_epochs = 3;

  auto model = train(spec, train_set, train_set, cfg);
  auto pred = predict(model, test_set.frames);
  int correct = 0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    correct += pred.predicted[i] == test_set.labels[i] ? 1 : 0;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(test_set.size()) > 0.9);
}
