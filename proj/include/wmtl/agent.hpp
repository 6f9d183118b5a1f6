#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wmtl/adam.hpp"
#include "wmtl/config.hpp"
#include "wmtl/nets.hpp"
#include "wmtl/params.hpp"
#include "wmtl/transfer.hpp"

namespace wmtl {

/// Training-loop knobs with desk-scale defaults (a full run is ~100 episodes
/// and finishes in minutes on one core).
struct TrainHyper {
  double world_lr = 6e-4;
  double actor_lr = 3e-4;
  double value_lr = 3e-4;
  double clip_norm = 100.0;
  double gamma = 0.99;
  double lambda = 0.95;
  std::size_t horizon = 15;
  double free_nats = 1.0;
  std::size_t batch = 8;
  std::size_t seq_len = 16;
  std::size_t buffer_capacity = 50000;
  double explore_noise = 0.3;
  std::size_t seed_episodes = 5;
  std::size_t grad_steps = 20;
  std::uint64_t env_budget = 20000;
  std::uint64_t eval_interval = 1000;

  static TrainHyper from_config(const Config& cfg) {
    TrainHyper h;
    h.world_lr = cfg.get_double("world_lr", h.world_lr);
    h.actor_lr = cfg.get_double("actor_lr", h.actor_lr);
    h.value_lr = cfg.get_double("value_lr", h.value_lr);
    h.clip_norm = cfg.get_double("clip_norm", h.clip_norm);
    h.gamma = cfg.get_double("gamma", h.gamma);
    h.lambda = cfg.get_double("lambda", h.lambda);
    h.horizon = static_cast<std::size_t>(cfg.get_int("horizon", static_cast<long long>(h.horizon)));
    h.free_nats = cfg.get_double("free_nats", h.free_nats);
    h.batch = static_cast<std::size_t>(cfg.get_int("batch", static_cast<long long>(h.batch)));
    h.seq_len = static_cast<std::size_t>(cfg.get_int("seq_len", static_cast<long long>(h.seq_len)));
    h.buffer_capacity = static_cast<std::size_t>(
        cfg.get_int("buffer_capacity", static_cast<long long>(h.buffer_capacity)));
    h.explore_noise = cfg.get_double("explore_noise", h.explore_noise);
    h.seed_episodes = static_cast<std::size_t>(
        cfg.get_int("seed_episodes", static_cast<long long>(h.seed_episodes)));
    h.grad_steps =
        static_cast<std::size_t>(cfg.get_int("grad_steps", static_cast<long long>(h.grad_steps)));
    h.env_budget =
        static_cast<std::uint64_t>(cfg.get_int("env_steps", static_cast<long long>(h.env_budget)));
    h.eval_interval = static_cast<std::uint64_t>(
        cfg.get_int("eval_interval", static_cast<long long>(h.eval_interval)));
    return h;
  }
};

/// A trainable agent: parameters plus the three optimizers. The world-model
/// optimizer owns every path outside the actor and value models except
/// frozen ones; freezing is therefore just absence from the path list (and
/// requires_grad off so no gradient is even computed).
struct Agent {
  ModelSpec spec;
  NamedParamSet params;
  AdamState world_opt;
  AdamState actor_opt;
  AdamState value_opt;
  std::vector<std::string> frozen_paths;
  MetaSources meta;

  MetaFeatureFn meta_fn() const { return meta.feature_fn(); }
};

inline Agent make_agent(const ModelSpec& spec, NamedParamSet params, const TrainHyper& hyper,
                        std::vector<std::string> frozen_paths = {}, MetaSources meta = {}) {
  Agent agent;
  agent.spec = spec;
  agent.params = std::move(params);
  agent.frozen_paths = std::move(frozen_paths);
  agent.meta = std::move(meta);
  for (const std::string& path : agent.frozen_paths) {
    agent.params.at(path).set_requires_grad(false);
  }
  auto is_frozen = [&](const std::string& path) {
    return !agent.params.at(path).requires_grad();
  };
  std::vector<std::string> world_paths, actor_paths, value_paths;
  for (const std::string& path : agent.params.paths()) {
    if (is_frozen(path)) continue;
    if (path.rfind("actor/", 0) == 0) {
      actor_paths.push_back(path);
    } else if (path.rfind("value/", 0) == 0) {
      value_paths.push_back(path);
    } else {
      world_paths.push_back(path);
    }
  }
  agent.world_opt = AdamState({hyper.world_lr, 0.9, 0.999, 1e-7, hyper.clip_norm}, agent.params,
                              std::move(world_paths));
  agent.actor_opt = AdamState({hyper.actor_lr, 0.9, 0.999, 1e-7, hyper.clip_norm}, agent.params,
                              std::move(actor_paths));
  agent.value_opt = AdamState({hyper.value_lr, 0.9, 0.999, 1e-7, hyper.clip_norm}, agent.params,
                              std::move(value_paths));
  return agent;
}

}  // namespace wmtl
