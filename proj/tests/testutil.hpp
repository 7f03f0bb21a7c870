#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "emglab/rng.hpp"
#include "emglab/tensor.hpp"

namespace testutil {

using emglab::Rng;
using emglab::tensor::grad_of;
using emglab::tensor::Node;
using emglab::tensor::Tape;
using emglab::tensor::Tensor;

// Loss builder: given a tape and parameter leaves (one per init tensor, same
// order), return the scalar loss node. Must be deterministic across calls.
using LossBuilder = std::function<Node*(Tape&, const std::vector<Node*>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
};

inline double rel_error(double analytic, double fd) {
  const double scale = std::max({std::fabs(analytic), std::fabs(fd), 1e-4});
  return std::fabs(analytic - fd) / scale;
}

// Central finite differences against reverse-mode gradients. probes_per_param
// < 0 checks every entry; otherwise that many random entries per parameter.
inline GradCheckResult grad_check(const std::vector<Tensor>& params,
                                  const LossBuilder& build, double h = 1e-5,
                                  int probes_per_param = -1,
                                  std::uint64_t probe_seed = 0) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Node*> leaves;
    for (const auto& p : params) leaves.push_back(tape.leaf(p, true));
    Node* loss = build(tape, leaves);
    analytic = grad_of(tape, loss, leaves);
  }

  const auto eval_loss = [&](const std::vector<Tensor>& perturbed) {
    Tape tape;
    std::vector<Node*> leaves;
    for (const auto& p : perturbed) leaves.push_back(tape.leaf(p, false));
    return build(tape, leaves)->value[0];
  };

  Rng rng(probe_seed ^ 0x67726164ULL);
  GradCheckResult result;
  std::vector<Tensor> work = params;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const std::size_t n = params[pi].size();
    std::vector<std::size_t> entries;
    if (probes_per_param < 0 || static_cast<std::size_t>(probes_per_param) >= n) {
      entries.resize(n);
      for (std::size_t i = 0; i < n; ++i) entries[i] = i;
    } else {
      for (int i = 0; i < probes_per_param; ++i) {
        entries.push_back(static_cast<std::size_t>(rng.uniform_int(static_cast<int>(n))));
      }
    }
    for (std::size_t j : entries) {
      const double orig = work[pi][j];
      work[pi][j] = orig + h;
      const double fp = eval_loss(work);
      work[pi][j] = orig - h;
      const double fm = eval_loss(work);
      work[pi][j] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      result.max_rel_error = std::max(result.max_rel_error, rel_error(analytic[pi][j], fd));
      result.probes += 1;
    }
  }
  return result;
}

inline Tensor random_tensor(emglab::tensor::Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

// Spearman rank correlation (ties get average ranks).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ranks = [](const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j < n && v[idx[j]] == v[idx[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0;
      for (std::size_t k = i; k < j; ++k) r[idx[k]] = avg;
      i = j;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace testutil
