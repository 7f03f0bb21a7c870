#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "emglab/models.hpp"
#include "emglab/tensor.hpp"
#include "testutil.hpp"

using namespace emglab;
using namespace emglab::tensor;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

Tensor run_conv(const Tensor& x, const Tensor& w, const Tensor& b, Padding pad) {
  Tape tape;
  return conv2d(tape, tape.leaf(x), tape.leaf(w), tape.leaf(b), pad)->value;
}

}  // namespace

TEST_CASE("conv2d scalar product") {
  Tensor x({1, 1, 1}, {2.0});
  Tensor w({1, 1, 1, 1}, {3.0});
  Tensor b({1}, {0.0});
  auto y = run_conv(x, w, b, Padding::same);
  CHECK(y.shape() == Shape{1, 1, 1});
  CHECK(y[0] == doctest::Approx(6.0));
}

TEST_CASE("conv2d centered delta kernel is identity under same padding") {
  Rng rng(7);
  Tensor x = random_tensor({1, 3, 3}, rng);
  Tensor w({1, 1, 3, 3});
  w.at(0, 0, 1, 1) = 1.0;
  Tensor b({1});
  auto y = run_conv(x, w, b, Padding::same);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(x[i]));
}

TEST_CASE("conv2d output shapes") {
  Rng rng(3);
  Tensor x = random_tensor({2, 4, 16}, rng);
  Tensor w = random_tensor({5, 2, 3, 3}, rng);
  Tensor b = random_tensor({5}, rng);
  CHECK(run_conv(x, w, b, Padding::same).shape() == Shape{5, 4, 16});
  CHECK(run_conv(x, w, b, Padding::none).shape() == Shape{5, 2, 14});
  Tensor tall = random_tensor({5, 2, 13, 13}, rng);
  CHECK_THROWS_AS(run_conv(x, tall, b, Padding::none), ShapeError);
  Tensor badw = random_tensor({5, 3, 3, 3}, rng);
  CHECK_THROWS_AS(run_conv(x, badw, b, Padding::same), ShapeError);
}

TEST_CASE("conv2d matches direct-sum oracle with asymmetric even-kernel padding") {
  Rng rng(11);
  const int cin = 2, h = 4, w = 5, cout = 3, kh = 2, kw = 4;
  Tensor x = random_tensor({cin, h, w}, rng);
  Tensor wt = random_tensor({cout, cin, kh, kw}, rng);
  Tensor b = random_tensor({cout}, rng);
  auto y = run_conv(x, wt, b, Padding::same);
  const int pad_top = (kh - 1) / 2, pad_left = (kw - 1) / 2;
  for (int co = 0; co < cout; ++co) {
    for (int oy = 0; oy < h; ++oy) {
      for (int ox = 0; ox < w; ++ox) {
        double acc = b.at(co);
        for (int ci = 0; ci < cin; ++ci) {
          for (int dy = 0; dy < kh; ++dy) {
            for (int dx = 0; dx < kw; ++dx) {
              const int iy = oy - pad_top + dy, ix = ox - pad_left + dx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += x.at(ci, iy, ix) * wt.at(co, ci, dy, dx);
            }
          }
        }
        CHECK(y.at(co, oy, ox) == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("conv2d linearity in the input") {
  Rng rng(19);
  Tensor x = random_tensor({2, 4, 6}, rng);
  Tensor y = random_tensor({2, 4, 6}, rng);
  Tensor w = random_tensor({3, 2, 3, 3}, rng);
  Tensor b({3});
  const double a = 1.7, c = -0.4;
  Tensor mix({2, 4, 6});
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + c * y[i];
  auto lhs = run_conv(mix, w, b, Padding::same);
  auto fx = run_conv(x, w, b, Padding::same);
  auto fy = run_conv(y, w, b, Padding::same);
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    CHECK(std::fabs(lhs[i] - (a * fx[i] + c * fy[i])) < 1e-10);
  }
}

TEST_CASE("table-one stack shape algebra") {
  auto specs = models::sdcnn_conv_stack();
  CHECK(stack_output_shape(specs, {1, 4, 16}) == Shape{224});
  CHECK(stack_output_shape(specs, {1, 8, 8}) == Shape{288});
}

TEST_CASE("batch_norm train mode statistics") {
  SUBCASE("constant input maps to zeros") {
    Tape tape;
    BatchNormState st;
    Node* x = tape.leaf(Tensor::full({2, 1, 2, 2}, 5.0));
    Node* g = tape.leaf(Tensor::full({1}, 1.0));
    Node* b = tape.leaf(Tensor({1}));
    Node* y = batch_norm(tape, x, g, b, st, Mode::train);
    for (std::size_t i = 0; i < y->value.size(); ++i) {
      CHECK(std::fabs(y->value[i]) < 1e-9);
    }
  }
  SUBCASE("already standardized input is nearly unchanged") {
    Tape tape;
    BatchNormState st;
    Tensor x({2, 1, 1, 1});
    x[0] = -1.0;
    x[1] = 1.0;
    Node* y = batch_norm(tape, tape.leaf(x), tape.leaf(Tensor::full({1}, 1.0)),
                         tape.leaf(Tensor({1})), st, Mode::train);
    CHECK(y->value[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(y->value[1] == doctest::Approx(1.0).epsilon(1e-4));
  }
  SUBCASE("random batch is standardized per channel") {
    Rng rng(23);
    Tensor x = random_tensor({2, 3, 2, 2}, rng, 3.0);
    Tape tape;
    BatchNormState st;
    Node* y = batch_norm(tape, tape.leaf(x), tape.leaf(Tensor::full({3}, 1.0)),
                         tape.leaf(Tensor({3})), st, Mode::train);
    for (int c = 0; c < 3; ++c) {
      double mean = 0.0, var = 0.0;
      const int n = 2 * 2 * 2;
      for (int bi = 0; bi < 2; ++bi) {
        for (int i = 0; i < 2; ++i) {
          for (int j = 0; j < 2; ++j) mean += y->value.at(bi, c, i, j);
        }
      }
      mean /= n;
      for (int bi = 0; bi < 2; ++bi) {
        for (int i = 0; i < 2; ++i) {
          for (int j = 0; j < 2; ++j) {
            const double z = y->value.at(bi, c, i, j) - mean;
            var += z * z;
          }
        }
      }
      var /= n;
      CHECK(std::fabs(mean) < 1e-9);
      CHECK(std::fabs(var - 1.0) < 1e-4);  // epsilon in the denominator shifts it slightly
    }
  }
}

TEST_CASE("batch_norm eval before train is an error") {
  Tape tape;
  BatchNormState st;
  Node* x = tape.leaf(Tensor::full({1, 1, 2, 2}, 1.0));
  CHECK_THROWS_AS(batch_norm(tape, x, tape.leaf(Tensor::full({1}, 1.0)),
                             tape.leaf(Tensor({1})), st, Mode::eval),
                  NumericError);
}

TEST_CASE("leaky_relu") {
  Tape tape;
  Node* x = tape.leaf(Tensor::vector({-1.0, 0.0, 2.0}));
  Node* y = leaky_relu(tape, x, 0.01);
  CHECK(y->value[0] == doctest::Approx(-0.01));
  CHECK(y->value[1] == doctest::Approx(0.0));
  CHECK(y->value[2] == doctest::Approx(2.0));

  Node* nonneg = tape.leaf(Tensor::vector({0.5, 3.0}));
  Node* id = leaky_relu(tape, nonneg, 0.01);
  CHECK(id->value[0] == doctest::Approx(0.5));
  CHECK(id->value[1] == doctest::Approx(3.0));

  CHECK_THROWS_AS(leaky_relu(tape, x, 1.0), ConfigError);
  CHECK_THROWS_AS(leaky_relu(tape, x, 0.0), ConfigError);
}

TEST_CASE("dense") {
  SUBCASE("identity weights pass input through") {
    Tape tape;
    Tensor w({2, 2}, {1.0, 0.0, 0.0, 1.0});
    Node* y = dense(tape, tape.leaf(Tensor({1, 2}, {4.0, -3.0})), tape.leaf(w),
                    tape.leaf(Tensor({2})));
    CHECK(y->value[0] == doctest::Approx(4.0));
    CHECK(y->value[1] == doctest::Approx(-3.0));
  }
  SUBCASE("hand computation") {
    Tape tape;
    Tensor w({2, 2}, {1.0, 1.0, 0.0, 1.0});
    Node* y = dense(tape, tape.leaf(Tensor({1, 2}, {1.0, 2.0})), tape.leaf(w),
                    tape.leaf(Tensor({2})));
    CHECK(y->value[0] == doctest::Approx(3.0));
    CHECK(y->value[1] == doctest::Approx(2.0));
  }
  SUBCASE("random case matches triple-loop oracle") {
    Rng rng(31);
    Tensor x = random_tensor({2, 5}, rng);
    Tensor w = random_tensor({3, 5}, rng);
    Tensor b = random_tensor({3}, rng);
    Tape tape;
    Node* y = dense(tape, tape.leaf(x), tape.leaf(w), tape.leaf(b));
    for (int i = 0; i < 2; ++i) {
      for (int m = 0; m < 3; ++m) {
        double acc = b.at(m);
        for (int k = 0; k < 5; ++k) acc += x.at(i, k) * w.at(m, k);
        CHECK(std::fabs(y->value.at(i, m) - acc) < 1e-12);
      }
    }
  }
  SUBCASE("dimension mismatch") {
    Tape tape;
    CHECK_THROWS_AS(dense(tape, tape.leaf(Tensor({1, 3})), tape.leaf(Tensor({2, 2})),
                          tape.leaf(Tensor({2}))),
                    ShapeError);
  }
}

TEST_CASE("dropout") {
  Rng rng(41);
  Tensor x = Tensor::full({100}, 1.0);
  SUBCASE("eval mode is the identity") {
    Tape tape;
    Node* xin = tape.leaf(x);
    CHECK(dropout(tape, xin, 0.5, Mode::eval, rng) == xin);
  }
  SUBCASE("rate zero is the identity") {
    Tape tape;
    Node* xin = tape.leaf(x);
    CHECK(dropout(tape, xin, 0.0, Mode::train, rng) == xin);
  }
  SUBCASE("inverted dropout preserves the mean") {
    Tape tape;
    Node* xin = tape.leaf(Tensor::full({100000}, 1.0));
    Node* y = dropout(tape, xin, 0.5, Mode::train, rng);
    double mean = 0.0;
    for (std::size_t i = 0; i < y->value.size(); ++i) mean += y->value[i];
    mean /= static_cast<double>(y->value.size());
    CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
  }
  SUBCASE("deterministic under a fixed seed") {
    Rng r1(99), r2(99);
    Tape t1, t2;
    Node* y1 = dropout(t1, t1.leaf(x), 0.3, Mode::train, r1);
    Node* y2 = dropout(t2, t2.leaf(x), 0.3, Mode::train, r2);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y1->value[i] == y2->value[i]);
  }
}

TEST_CASE("grad_of basics") {
  SUBCASE("sum gives all-ones gradient") {
    Tape tape;
    Node* p = tape.leaf(Tensor::vector({1.0, -2.0, 7.0}), true);
    auto grads = grad_of(tape, sum(tape, p), {p});
    for (int i = 0; i < 3; ++i) CHECK(grads[0][i] == doctest::Approx(1.0));
  }
  SUBCASE("sum of squares") {
    Tape tape;
    Node* p = tape.leaf(Tensor::vector({1.0, -2.0}), true);
    auto grads = grad_of(tape, sum_squares(tape, p), {p});
    CHECK(grads[0][0] == doctest::Approx(2.0));
    CHECK(grads[0][1] == doctest::Approx(-4.0));
  }
  SUBCASE("unreachable parameters get zero gradients") {
    Tape tape;
    Node* p = tape.leaf(Tensor::vector({1.0}), true);
    Node* q = tape.leaf(Tensor::vector({5.0}), true);
    auto grads = grad_of(tape, sum(tape, p), {p, q});
    CHECK(grads[0][0] == doctest::Approx(1.0));
    CHECK(grads[1][0] == doctest::Approx(0.0));
  }
  SUBCASE("non-scalar loss is an error") {
    Tape tape;
    Node* p = tape.leaf(Tensor::vector({1.0, 2.0}), true);
    CHECK_THROWS_AS(grad_of(tape, scale(tape, p, 2.0), {p}), ShapeError);
  }
}

TEST_CASE("layer gradients match finite differences") {
  Rng rng(57);
  SUBCASE("conv2d same and none padding") {
    for (auto pad : {Padding::same, Padding::none}) {
      std::vector<Tensor> params = {random_tensor({2, 2, 4, 5}, rng),
                                    random_tensor({3, 2, 2, 3}, rng),
                                    random_tensor({3}, rng)};
      auto res = grad_check(params, [pad](Tape& t, const std::vector<Node*>& p) {
        return sum_squares(t, conv2d(t, p[0], p[1], p[2], pad));
      });
      CHECK(res.max_rel_error < 1e-6);
    }
  }
  SUBCASE("batch_norm train and eval modes") {
    std::vector<Tensor> params = {random_tensor({3, 2, 2, 2}, rng, 2.0),
                                  random_tensor({2}, rng, 0.5),
                                  random_tensor({2}, rng, 0.5)};
    params[1][0] += 1.5;  // keep gamma away from zero
    params[1][1] += 1.5;
    auto train_res = grad_check(params, [](Tape& t, const std::vector<Node*>& p) {
      BatchNormState st;
      return sum_squares(t, batch_norm(t, p[0], p[1], p[2], st, Mode::train));
    });
    CHECK(train_res.max_rel_error < 1e-4);

    BatchNormState shared;
    {  // initialize running stats once
      Tape t;
      batch_norm(t, t.leaf(params[0]), t.leaf(params[1]), t.leaf(params[2]), shared,
                 Mode::train);
    }
    auto eval_res = grad_check(params, [&shared](Tape& t, const std::vector<Node*>& p) {
      return sum_squares(t, batch_norm(t, p[0], p[1], p[2], shared, Mode::eval));
    });
    CHECK(eval_res.max_rel_error < 1e-6);
  }
  SUBCASE("leaky_relu, relu, softplus, dense, flatten, dropout") {
    std::vector<Tensor> act = {random_tensor({2, 7}, rng)};
    CHECK(grad_check(act, [](Tape& t, const std::vector<Node*>& p) {
            return sum_squares(t, leaky_relu(t, p[0], 0.01));
          }).max_rel_error < 1e-6);
    CHECK(grad_check(act, [](Tape& t, const std::vector<Node*>& p) {
            return sum_squares(t, relu(t, p[0]));
          }).max_rel_error < 1e-6);
    CHECK(grad_check(act, [](Tape& t, const std::vector<Node*>& p) {
            return sum_squares(t, models::softplus(t, p[0]));
          }).max_rel_error < 1e-6);

    std::vector<Tensor> dn = {random_tensor({3, 4}, rng), random_tensor({2, 4}, rng),
                              random_tensor({2}, rng)};
    CHECK(grad_check(dn, [](Tape& t, const std::vector<Node*>& p) {
            return sum_squares(t, dense(t, p[0], p[1], p[2]));
          }).max_rel_error < 1e-6);

    std::vector<Tensor> fl = {random_tensor({2, 3, 2, 2}, rng)};
    CHECK(grad_check(fl, [](Tape& t, const std::vector<Node*>& p) {
            return sum_squares(t, flatten(t, p[0]));
          }).max_rel_error < 1e-6);

    std::vector<Tensor> dr = {random_tensor({4, 6}, rng)};
    CHECK(grad_check(dr, [](Tape& t, const std::vector<Node*>& p) {
            Rng mask_rng(1234);  // same mask on every call
            return sum_squares(t, dropout(t, p[0], 0.4, Mode::train, mask_rng));
          }).max_rel_error < 1e-6);
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::vector({1.0, -2.0});
    std::vector<NamedParam> params = {{"p", &p}};
    AdamState st;
    st.learning_rate = 0.1;
    adam_step(params, {Tensor({2})}, st);
    CHECK(p[0] == doctest::Approx(1.0));
    CHECK(p[1] == doctest::Approx(-2.0));
    CHECK(st.step == 1);
  }
  SUBCASE("first step is bias-corrected") {
    Tensor p = Tensor::vector({0.0});
    std::vector<NamedParam> params = {{"p", &p}};
    AdamState st;
    st.learning_rate = 0.1;
    adam_step(params, {Tensor::vector({1.0})}, st);
    CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-6));
  }
  SUBCASE("quadratic bowl converges") {
    Tensor p = Tensor::vector({1.0, 1.0});
    std::vector<NamedParam> params = {{"p", &p}};
    AdamState st;
    st.learning_rate = 1e-2;
    for (int i = 0; i < 500; ++i) {
      Tensor g({2}, {2.0 * p[0], 2.0 * p[1]});
      adam_step(params, {g}, st);
    }
    CHECK(std::sqrt(p[0] * p[0] + p[1] * p[1]) < 1e-3);
  }
  SUBCASE("non-finite gradient names the parameter") {
    Tensor p = Tensor::vector({0.0});
    std::vector<NamedParam> params = {{"theta", &p}};
    AdamState st;
    Tensor g = Tensor::vector({std::numeric_limits<double>::quiet_NaN()});
    CHECK_THROWS_WITH_AS(adam_step(params, {g}, st),
                         doctest::Contains("theta"), NumericError);
  }
}

TEST_CASE("forward and backward are deterministic under identical seeds") {
  const auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> params = {random_tensor({2, 1, 4, 6}, rng),
                                  random_tensor({3, 1, 3, 3}, rng),
                                  random_tensor({3}, rng)};
    Tape tape;
    std::vector<Node*> leaves;
    for (const auto& p : params) leaves.push_back(tape.leaf(p, true));
    Node* loss =
        sum_squares(tape, conv2d(tape, leaves[0], leaves[1], leaves[2], Padding::same));
    auto grads = grad_of(tape, loss, leaves);
    std::vector<double> sig = {loss->value[0]};
    for (const auto& g : grads) sig.insert(sig.end(), g.values().begin(), g.values().end());
    return sig;
  };
  const auto a = run(1001), b = run(1001);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
