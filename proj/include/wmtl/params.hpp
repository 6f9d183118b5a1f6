#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "wmtl/errors.hpp"
#include "wmtl/tensor.hpp"

namespace wmtl {

/// Structural role of a parameter inside the agent, used by transfer plans
/// to decide what survives a domain switch.
enum class ParamRole {
  FeatureExtraction,  // encoder, recurrent core, latent heads: domain-shaped but reusable
  ActionInput,        // rows consuming the (padded) action vector
  OutputHead,         // final layer of reward, value and actor models
};

inline std::string_view to_string(ParamRole role) {
  switch (role) {
    case ParamRole::FeatureExtraction: return "feature_extraction";
    case ParamRole::ActionInput: return "action_input";
    case ParamRole::OutputHead: return "output_head";
  }
  return "?";
}

inline ParamRole param_role_from_string(std::string_view s) {
  if (s == "feature_extraction") return ParamRole::FeatureExtraction;
  if (s == "action_input") return ParamRole::ActionInput;
  if (s == "output_head") return ParamRole::OutputHead;
  throw ConfigError("unknown parameter role '" + std::string(s) + "'");
}

/// Ordered collection of named, role-tagged parameters. Paths are
/// slash-separated ("reward/fc1/weight"); the leading segment names the
/// owning model. Iteration order is lexicographic by path, which makes
/// checkpoint layout and optimizer slot order deterministic.
class NamedParamSet {
 public:
  struct Entry {
    Tensor tensor;
    ParamRole role;
  };

  void insert(const std::string& path, Tensor tensor, ParamRole role) {
    tensor.set_requires_grad(true);
    auto [it, fresh] = entries_.emplace(path, Entry{std::move(tensor), role});
    if (!fresh) throw KeyError("duplicate parameter path '" + path + "'");
  }

  bool contains(const std::string& path) const { return entries_.count(path) != 0; }

  Tensor& at(const std::string& path) {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw KeyError("no parameter at path '" + path + "'");
    return it->second.tensor;
  }
  const Tensor& at(const std::string& path) const {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw KeyError("no parameter at path '" + path + "'");
    return it->second.tensor;
  }

  ParamRole role(const std::string& path) const {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw KeyError("no parameter at path '" + path + "'");
    return it->second.role;
  }

  /// Replace the values stored at an existing path; shape must match.
  void assign(const std::string& path, const Tensor& source) {
    Tensor& dst = at(path);
    if (dst.shape() != source.shape()) {
      throw DimensionError("assign to '" + path + "': shape " + shape_to_string(dst.shape()) +
                           " vs " + shape_to_string(source.shape()));
    }
    dst.values() = source.values();
  }

  std::size_t size() const { return entries_.size(); }

  /// Paths in iteration (lexicographic) order.
  std::vector<std::string> paths() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [path, entry] : entries_) out.push_back(path);
    return out;
  }

  /// Paths whose first slash-separated segment equals `model`.
  std::vector<std::string> paths_of_model(std::string_view model) const {
    std::vector<std::string> out;
    for (const auto& [path, entry] : entries_) {
      const auto cut = path.find('/');
      if (path.compare(0, cut == std::string::npos ? path.size() : cut, model) == 0) {
        out.push_back(path);
      }
    }
    return out;
  }

  std::vector<std::string> paths_of_role(ParamRole role) const {
    std::vector<std::string> out;
    for (const auto& [path, entry] : entries_) {
      if (entry.role == role) out.push_back(path);
    }
    return out;
  }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& [path, entry] : entries_) n += entry.tensor.size();
    return n;
  }

  void zero_grads() {
    for (auto& [path, entry] : entries_) entry.tensor.zero_grad();
  }

  /// Deep copy: fresh value buffers, same paths, roles and grad flags.
  NamedParamSet clone() const {
    NamedParamSet out;
    for (const auto& [path, entry] : entries_) {
      out.insert(path, entry.tensor.clone_values(), entry.role);
      out.at(path).set_requires_grad(entry.tensor.requires_grad());
    }
    return out;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::map<std::string, Entry> entries_;
};

/// Detached copies of one model's parameters, gradients disabled. Used to
/// hold a model fixed inside an objective that must not update it, and for
/// frozen source models.
inline NamedParamSet frozen_model_copy(const NamedParamSet& params, const std::string& model) {
  NamedParamSet out;
  for (const std::string& path : params.paths_of_model(model)) {
    out.insert(path, params.at(path).clone_values(), params.role(path));
    out.at(path).set_requires_grad(false);
  }
  return out;
}

}  // namespace wmtl
