#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "wmtl/rng.hpp"
#include "wmtl/tensor.hpp"

namespace test_support {

inline wmtl::Tensor random_tensor(wmtl::Shape shape, wmtl::RngStream& rng, double scale = 1.0,
                                  bool requires_grad = true) {
  wmtl::Tensor t = wmtl::Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = scale * rng.next_gaussian();
  return t;
}

/// Central finite-difference check: build the scalar loss on a fresh tape,
/// backward it, then compare every input coordinate's tape gradient against
/// (f(x+h) - f(x-h)) / 2h. Returns the worst relative error, with the
/// denominator floored at 1 so near-zero gradients compare absolutely.
inline double fd_max_rel_err(std::vector<wmtl::Tensor> inputs,
                             const std::function<wmtl::Tensor(wmtl::Tape&)>& build,
                             double h = 1e-5) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  wmtl::Tape tape;
  wmtl::Tensor loss = build(tape);
  tape.backward(loss);

  double worst = 0.0;
  for (auto& t : inputs) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double keep = t.values()[i];
      t.values()[i] = keep + h;
      wmtl::Tape up_tape;
      const double up = build(up_tape).item();
      t.values()[i] = keep - h;
      wmtl::Tape dn_tape;
      const double dn = build(dn_tape).item();
      t.values()[i] = keep;
      const double numeric = (up - dn) / (2.0 * h);
      const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
      const double rel =
          std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace test_support
