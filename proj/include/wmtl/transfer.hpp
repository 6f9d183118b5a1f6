#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "wmtl/checkpoint.hpp"
#include "wmtl/errors.hpp"
#include "wmtl/nets.hpp"
#include "wmtl/params.hpp"
#include "wmtl/worldmodel.hpp"

namespace wmtl {

enum class TransferModeKind { Random, Fractional, Full };

/// How a parameter group is initialized on the target: fresh random, the
/// source copied verbatim, or fresh random plus omega times the source.
struct TransferMode {
  TransferModeKind kind = TransferModeKind::Random;
  double omega = 0.0;

  static TransferMode random() { return {TransferModeKind::Random, 0.0}; }
  static TransferMode full() { return {TransferModeKind::Full, 0.0}; }
  static TransferMode fractional(double omega) {
    if (!(omega >= 0.0 && omega <= 1.0)) {
      throw ConfigError("transfer fraction must be in [0, 1], got " + std::to_string(omega));
    }
    return {TransferModeKind::Fractional, omega};
  }

  std::string to_string() const {
    switch (kind) {
      case TransferModeKind::Random: return "random";
      case TransferModeKind::Full: return "full";
      case TransferModeKind::Fractional: {
        std::ostringstream os;
        os << "fractional:" << omega;
        return os.str();
      }
    }
    return "?";
  }

  static TransferMode parse(const std::string& s) {
    if (s == "random") return random();
    if (s == "full") return full();
    if (s.rfind("fractional:", 0) == 0) {
      try {
        return fractional(std::stod(s.substr(11)));
      } catch (const std::invalid_argument&) {
        throw ConfigError("bad transfer fraction in '" + s + "'");
      }
    }
    throw ConfigError("unknown transfer mode '" + s + "'");
  }

  bool operator==(const TransferMode&) const = default;
};

/// Assignment of transfer modes to parameters. Resolution precedence, most
/// specific first: explicit path prefix (longest match), then role scoped to
/// a model ("output_head.actor"), then the bare role default.
struct TransferPlan {
  std::map<ParamRole, TransferMode> role_defaults;
  std::map<std::string, TransferMode> role_model_overrides;  // "role.model"
  std::map<std::string, TransferMode> path_overrides;        // path prefix

  TransferMode resolve(const std::string& path, ParamRole role) const {
    const TransferMode* best = nullptr;
    std::size_t best_len = 0;
    for (const auto& [prefix, mode] : path_overrides) {
      if (path.rfind(prefix, 0) == 0 && prefix.size() >= best_len) {
        best = &mode;
        best_len = prefix.size();
      }
    }
    if (best) return *best;
    const std::string model = path.substr(0, path.find('/'));
    const auto scoped = role_model_overrides.find(std::string(wmtl::to_string(role)) + "." + model);
    if (scoped != role_model_overrides.end()) return scoped->second;
    const auto it = role_defaults.find(role);
    if (it == role_defaults.end()) {
      throw TransferError("transfer plan does not resolve path '" + path + "'");
    }
    return it->second;
  }
};

/// The standard modular plan: feature-extraction layers copied from the
/// source, action-input weights re-randomized (action spaces differ across
/// domains), reward and value output layers blended at the given fraction,
/// and the actor's output layer re-randomized.
inline TransferPlan default_plan(double omega) {
  TransferPlan plan;
  plan.role_defaults[ParamRole::FeatureExtraction] = TransferMode::full();
  plan.role_defaults[ParamRole::ActionInput] = TransferMode::random();
  plan.role_defaults[ParamRole::OutputHead] = TransferMode::fractional(omega);
  plan.role_model_overrides["output_head.actor"] = TransferMode::random();
  return plan;
}

inline TransferPlan full_plan() {
  TransferPlan plan;
  plan.role_defaults[ParamRole::FeatureExtraction] = TransferMode::full();
  plan.role_defaults[ParamRole::ActionInput] = TransferMode::full();
  plan.role_defaults[ParamRole::OutputHead] = TransferMode::full();
  return plan;
}

inline std::string plan_to_text(const TransferPlan& plan) {
  std::ostringstream os;
  for (const auto& [role, mode] : plan.role_defaults) {
    os << wmtl::to_string(role) << " = " << mode.to_string() << "\n";
  }
  for (const auto& [key, mode] : plan.role_model_overrides) {
    os << key << " = " << mode.to_string() << "\n";
  }
  for (const auto& [prefix, mode] : plan.path_overrides) {
    os << prefix << " = " << mode.to_string() << "\n";
  }
  return os.str();
}

inline TransferPlan plan_from_text(const std::string& text) {
  TransferPlan plan;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) continue;
    const TransferMode mode = TransferMode::parse(value);
    if (key.find('/') != std::string::npos) {
      plan.path_overrides[key] = mode;
    } else if (key.find('.') != std::string::npos) {
      plan.role_model_overrides[key] = mode;
    } else {
      plan.role_defaults[param_role_from_string(key)] = mode;
    }
  }
  return plan;
}

/// random_init + omega * source, elementwise, exactly as written.
inline Tensor fractional_blend(const Tensor& random_init, const Tensor& source, double omega) {
  if (!(omega >= 0.0 && omega <= 1.0)) {
    throw ConfigError("transfer fraction must be in [0, 1], got " + std::to_string(omega));
  }
  if (random_init.shape() != source.shape()) {
    throw DimensionError("fractional_blend: shape " + shape_to_string(random_init.shape()) +
                         " vs " + shape_to_string(source.shape()));
  }
  Tensor out = Tensor::zeros(random_init.shape());
  const std::vector<double>& r = random_init.values();
  const std::vector<double>& s = source.values();
  std::vector<double>& y = out.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = r[i] + omega * s[i];
  return out;
}

/// Build the target's initial parameters from a source set under a plan.
/// The target set only supplies shapes and roles; Random and Fractional
/// groups draw their fresh values from the per-path init streams of the
/// given rng, so an all-Random plan reproduces build_agent bit for bit.
/// Pure: neither input set is modified.
inline NamedParamSet apply_transfer(const NamedParamSet& target, const NamedParamSet& source,
                                    const TransferPlan& plan, RngStream& rng) {
  NamedParamSet out;
  for (const std::string& path : target.paths()) {
    const Tensor& shape_ref = target.at(path);
    const ParamRole role = target.role(path);
    const TransferMode mode = plan.resolve(path, role);
    auto source_tensor = [&]() -> const Tensor& {
      if (!source.contains(path)) {
        throw TransferError("source has no parameter '" + path + "' needed by mode " +
                            mode.to_string());
      }
      const Tensor& s = source.at(path);
      if (s.shape() != shape_ref.shape()) {
        throw TransferError("shape mismatch at '" + path + "': target " +
                            shape_to_string(shape_ref.shape()) + " vs source " +
                            shape_to_string(s.shape()));
      }
      return s;
    };
    Tensor result;
    switch (mode.kind) {
      case TransferModeKind::Random:
        result = detail::init_param(path, shape_ref.shape(), rng);
        break;
      case TransferModeKind::Full:
        result = source_tensor().clone_values();
        break;
      case TransferModeKind::Fractional:
        result = fractional_blend(detail::init_param(path, shape_ref.shape(), rng), source_tensor(),
                                  mode.omega);
        break;
    }
    out.insert(path, std::move(result), role);
  }
  return out;
}

/// Frozen encoder extracted from a (normally multi-domain) agent checkpoint,
/// identified by the hash of its weights so downstream source pools can be
/// checked for feature-space compatibility.
struct UniversalEncoder {
  NamedParamSet params;  // encoder/* only, requires_grad off
  std::string fingerprint;
  std::vector<std::string> trained_domains;
  bool single_domain = false;  // flagged: a shared feature space wants >= 2 domains
};

inline UniversalEncoder make_universal_encoder(const AgentCheckpoint& ckpt) {
  UniversalEncoder uae;
  bool any = false;
  for (const auto& [path, entry] : ckpt.params) {
    if (path.rfind("encoder/", 0) != 0) continue;
    uae.params.insert(path, entry.tensor.clone_values(), entry.role);
    uae.params.at(path).set_requires_grad(false);
    any = true;
  }
  if (!any) throw TransferError("checkpoint contains no encoder parameters");
  uae.fingerprint = encoder_fingerprint(ckpt.params);
  if (ckpt.metadata.contains("domains")) {
    uae.trained_domains = ckpt.metadata.at("domains").get<std::vector<std::string>>();
  }
  uae.single_domain = uae.trained_domains.size() < 2;
  return uae;
}

/// Overwrite the agent's encoder with the universal one and freeze it.
/// Returns the frozen paths (to exclude from the optimizer).
inline std::vector<std::string> install_universal_encoder(NamedParamSet& params,
                                                          const UniversalEncoder& uae) {
  std::vector<std::string> frozen;
  for (const auto& [path, entry] : uae.params) {
    params.assign(path, entry.tensor);
    params.at(path).set_requires_grad(false);
    frozen.push_back(path);
  }
  return frozen;
}

enum class MetaFeatureMode { Feature, Scalar };

inline MetaFeatureMode meta_mode_from_string(const std::string& s) {
  if (s == "feature") return MetaFeatureMode::Feature;
  if (s == "scalar") return MetaFeatureMode::Scalar;
  throw ConfigError("unknown meta feature mode '" + s + "' (expected feature|scalar)");
}

/// N frozen source reward models evaluated side by side. In feature mode
/// each source contributes its penultimate (64-wide) activation, in scalar
/// mode just its prediction. Evaluation happens on a non-recording tape, so
/// no gradient ever reaches the sources and none flows through them.
struct MetaSources {
  std::vector<NamedParamSet> reward_models;
  std::vector<std::string> source_domains;
  MetaFeatureMode mode = MetaFeatureMode::Feature;
  std::size_t per_source_width = 0;

  std::size_t count() const { return reward_models.size(); }
  std::size_t total_width() const { return count() * per_source_width; }

  Tensor features(const Tensor& state) const {
    Tape frozen_tape(false);
    std::vector<Tensor> parts;
    parts.reserve(reward_models.size());
    for (const NamedParamSet& m : reward_models) {
      if (mode == MetaFeatureMode::Feature) {
        parts.push_back(forward_mlp_features(frozen_tape, m, "reward", state));
      } else {
        parts.push_back(forward_mlp(frozen_tape, m, "reward", state));
      }
    }
    return concat_cols(frozen_tape, std::span<const Tensor>(parts));
  }

  MetaFeatureFn feature_fn() const {
    if (reward_models.empty()) return {};
    return [this](const Tensor& state) { return features(state); };
  }
};

/// Collect the frozen reward models of a source pool, verifying every source
/// shares the universal encoder (same fingerprint) so their latent inputs
/// mean the same thing.
inline MetaSources assemble_meta_sources(const std::vector<AgentCheckpoint>& pool,
                                         const std::string& uae_fingerprint, MetaFeatureMode mode) {
  if (pool.empty()) throw TransferError("meta-model source pool is empty");
  MetaSources out;
  out.mode = mode;
  for (const AgentCheckpoint& ckpt : pool) {
    const std::string fp = ckpt.metadata.value("encoder_fingerprint", std::string());
    if (fp != uae_fingerprint) {
      throw TransferError("source checkpoint encoder fingerprint " + fp.substr(0, 12) +
                          "... does not match the universal encoder " +
                          uae_fingerprint.substr(0, 12) + "...");
    }
    out.reward_models.push_back(frozen_model_copy(ckpt.params, "reward"));
    std::string domain = "?";
    if (ckpt.metadata.contains("domains")) {
      const auto ds = ckpt.metadata.at("domains").get<std::vector<std::string>>();
      if (!ds.empty()) domain = ds.front();
    }
    out.source_domains.push_back(domain);
  }
  if (mode == MetaFeatureMode::Feature) {
    const Tensor& last_hidden_w = out.reward_models.front().at("reward/fc2/weight");
    out.per_source_width = last_hidden_w.dim(1);
  } else {
    out.per_source_width = 1;
  }
  return out;
}

}  // namespace wmtl
