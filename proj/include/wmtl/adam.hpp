#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wmtl/errors.hpp"
#include "wmtl/params.hpp"

namespace wmtl {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  double clip_norm = 100.0;  // global L2 norm ceiling; <= 0 disables clipping
};

/// First/second moment buffers for one parameter tensor.
struct AdamSlot {
  std::vector<double> m;
  std::vector<double> v;
};

/// Adam state over a fixed set of parameter paths. The optimizer owns its
/// path list: parameters outside it are never touched, which is what makes
/// freezing a model as simple as leaving its paths out.
class AdamState {
 public:
  AdamState() = default;

  AdamState(AdamConfig config, const NamedParamSet& params, std::vector<std::string> paths)
      : config_(config), paths_(std::move(paths)) {
    for (const std::string& path : paths_) {
      const Tensor& t = params.at(path);
      slots_[path] = AdamSlot{std::vector<double>(t.size(), 0.0), std::vector<double>(t.size(), 0.0)};
    }
  }

  const AdamConfig& config() const { return config_; }
  const std::vector<std::string>& paths() const { return paths_; }
  std::uint64_t step_count() const { return step_count_; }

  AdamSlot& slot(const std::string& path) {
    auto it = slots_.find(path);
    if (it == slots_.end()) throw KeyError("optimizer has no slot for '" + path + "'");
    return it->second;
  }
  const AdamSlot& slot(const std::string& path) const {
    auto it = slots_.find(path);
    if (it == slots_.end()) throw KeyError("optimizer has no slot for '" + path + "'");
    return it->second;
  }

  void set_step_count(std::uint64_t t) { step_count_ = t; }

  /// Global L2 norm of the gradients over this optimizer's paths.
  double grad_norm(const NamedParamSet& params) const {
    double sq = 0.0;
    for (const std::string& path : paths_) {
      const Tensor& t = params.at(path);
      if (!t.has_grad()) continue;
      for (double g : t.grad()) sq += g * g;
    }
    return std::sqrt(sq);
  }

  /// One Adam update with bias correction, after scaling all gradients by
  /// min(1, clip_norm / ||g||) when clipping is enabled. Gradients are read,
  /// not cleared; the training loop zeroes them between steps.
  void step(NamedParamSet& params) {
    double clip_scale = 1.0;
    if (config_.clip_norm > 0.0) {
      const double norm = grad_norm(params);
      if (norm > config_.clip_norm) clip_scale = config_.clip_norm / norm;
    }
    ++step_count_;
    const double t = static_cast<double>(step_count_);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    for (const std::string& path : paths_) {
      Tensor& p = params.at(path);
      if (!p.has_grad()) continue;
      AdamSlot& s = slots_.at(path);
      const std::vector<double>& g = p.grad();
      std::vector<double>& x = p.values();
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double gi = g[i] * clip_scale;
        s.m[i] = config_.beta1 * s.m[i] + (1.0 - config_.beta1) * gi;
        s.v[i] = config_.beta2 * s.v[i] + (1.0 - config_.beta2) * gi * gi;
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        x[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
      }
    }
  }

  /// Reset moments and step count, e.g. after parameters were replaced by a
  /// transfer so stale momentum does not drag the fresh weights.
  void reset() {
    step_count_ = 0;
    for (auto& [path, s] : slots_) {
      std::fill(s.m.begin(), s.m.end(), 0.0);
      std::fill(s.v.begin(), s.v.end(), 0.0);
    }
  }

 private:
  AdamConfig config_;
  std::vector<std::string> paths_;
  std::map<std::string, AdamSlot> slots_;
  std::uint64_t step_count_ = 0;
};

}  // namespace wmtl
