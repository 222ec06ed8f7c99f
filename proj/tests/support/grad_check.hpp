#pragma once

// Central-difference gradient checking against backward(). Lives in test code
// only; the implementation under test never calls into this.

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

#include "tcsf/tensor.hpp"

namespace testsupport {

inline double rel_err(double a, double b, double floor_ = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor_});
}

inline double fd_at(std::vector<double>& vals, size_t ci,
                    const std::function<tcsf::Tensor()>& make_loss, double h) {
  const double saved = vals[ci];
  tcsf::NoGradGuard ng;
  vals[ci] = saved + h;
  const double lp = make_loss().item();
  vals[ci] = saved - h;
  const double lm = make_loss().item();
  vals[ci] = saved;
  return (lp - lm) / (2.0 * h);
}

// Checks d(loss)/d(param) for every listed parameter against central
// differences. Coordinates can be subsampled for large parameters. A failing
// coordinate is retried at smaller step sizes: piecewise-linear kinks (ReLU,
// clamp) near the evaluation point otherwise dominate the difference quotient.
inline double max_grad_rel_error(std::vector<tcsf::Tensor> params,
                                 const std::function<tcsf::Tensor()>& make_loss,
                                 int max_coords_per_param = -1, uint64_t coord_seed = 1234,
                                 double h0 = 1e-5, double tol = 1e-4) {
  using namespace tcsf;
  for (auto& p : params) p.zero_grad();
  Tensor loss = make_loss();
  backward(loss);

  double worst = 0.0;
  Rng rng(coord_seed);
  for (auto& p : params) {
    auto& vals = p.mutable_values();
    const auto& g = p.grad();
    std::vector<size_t> coords;
    if (max_coords_per_param < 0 ||
        static_cast<size_t>(max_coords_per_param) >= vals.size()) {
      coords.resize(vals.size());
      std::iota(coords.begin(), coords.end(), size_t{0});
    } else {
      for (int i = 0; i < max_coords_per_param; ++i) {
        coords.push_back(static_cast<size_t>(
            rng.uniform_int(0, static_cast<int>(vals.size()) - 1)));
      }
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    for (size_t ci : coords) {
      const double analytic = g[ci];
      double best = rel_err(fd_at(vals, ci, make_loss, h0), analytic);
      for (double h : {h0 / 10.0, h0 / 100.0}) {
        if (best <= tol) break;
        best = std::min(best, rel_err(fd_at(vals, ci, make_loss, h), analytic));
      }
      worst = std::max(worst, best);
    }
  }
  return worst;
}

}  // namespace testsupport
