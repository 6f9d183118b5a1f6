#pragma once

#include <deque>
#include <map>
#include <string>
#include <vector>

#include "wmtl/errors.hpp"
#include "wmtl/rng.hpp"
#include "wmtl/tensor.hpp"

namespace wmtl {

/// One recorded episode. Row i holds the observation o_i, the action that
/// preceded it (zeros at i=0) and the reward received on arriving at o_i
/// (the reset state's own reward at i=0, since rewards here are pure state
/// functions). An episode of T env steps has T+1 rows.
struct Episode {
  std::string domain;
  std::size_t action_width = 0;
  std::vector<std::vector<double>> observations;  // each kFramePixels wide
  std::vector<std::vector<double>> prev_actions;  // each action_width wide
  std::vector<double> rewards;

  std::size_t rows() const { return observations.size(); }
  std::size_t steps() const { return rows() == 0 ? 0 : rows() - 1; }

  /// Undiscounted sum of the step rewards (the reset row is excluded).
  double episode_return() const {
    double total = 0.0;
    for (std::size_t i = 1; i < rewards.size(); ++i) total += rewards[i];
    return total;
  }
};

/// Training batch of aligned subsequences, stored step-major: observations[t]
/// is a [B, obs] tensor, actions[t] the [B, A] action preceding it,
/// rewards[t] the [B] rewards. None of these require gradients.
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<Tensor> observations;
  std::vector<Tensor> actions;
  std::vector<Tensor> rewards;
  std::vector<std::string> domains;  // one per sequence
};

/// Episode store with a global step capacity. Episodes are grouped per
/// domain; when over capacity, the oldest episode of the largest domain is
/// evicted, which keeps the per-domain balance that batch sampling assumes.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity_steps) : capacity_(capacity_steps) {}

  void add_episode(Episode ep) {
    if (ep.rows() < 2) throw InputError("episode with fewer than 2 rows");
    if (ep.prev_actions.size() != ep.rows() || ep.rewards.size() != ep.rows()) {
      throw InputError("episode rows misaligned across observations/actions/rewards");
    }
    total_steps_ += ep.steps();
    domains_[ep.domain].push_back(std::move(ep));
    while (total_steps_ > capacity_) evict_one();
  }

  std::size_t total_steps() const { return total_steps_; }

  std::size_t domain_steps(const std::string& domain) const {
    auto it = domains_.find(domain);
    if (it == domains_.end()) return 0;
    std::size_t n = 0;
    for (const Episode& ep : it->second) n += ep.steps();
    return n;
  }

  std::size_t num_episodes() const {
    std::size_t n = 0;
    for (const auto& [d, eps] : domains_) n += eps.size();
    return n;
  }

  std::vector<std::string> domains() const {
    std::vector<std::string> out;
    for (const auto& [d, eps] : domains_) out.push_back(d);
    return out;
  }

  /// B independent sequences of length L. The domain is drawn uniformly over
  /// the domains present, then an episode within it, then a start offset, so
  /// multi-domain buffers contribute evenly regardless of episode counts.
  SequenceBatch sample(std::size_t batch, std::size_t length, RngStream& rng) const {
    if (domains_.empty()) throw TrainingError("replay buffer is empty");
    if (batch == 0 || length == 0) throw InputError("sample: batch and length must be positive");
    std::vector<const std::deque<Episode>*> pools;
    std::vector<std::string> pool_names;
    for (const auto& [d, eps] : domains_) {
      pools.push_back(&eps);
      pool_names.push_back(d);
    }
    const std::size_t obs_dim = pools[0]->front().observations[0].size();
    const std::size_t act_dim = pools[0]->front().action_width;

    std::vector<std::vector<double>> obs(length), act(length), rew(length);
    for (std::size_t t = 0; t < length; ++t) {
      obs[t].reserve(batch * obs_dim);
      act[t].reserve(batch * act_dim);
      rew[t].reserve(batch);
    }
    SequenceBatch out;
    out.batch = batch;
    out.length = length;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t di = pick(rng, pools.size());
      const std::deque<Episode>& eps = *pools[di];
      const Episode& ep = eps[pick(rng, eps.size())];
      if (ep.rows() < length) {
        throw TrainingError("episode in domain '" + ep.domain + "' shorter than sequence length " +
                            std::to_string(length));
      }
      const std::size_t start = pick(rng, ep.rows() - length + 1);
      for (std::size_t t = 0; t < length; ++t) {
        const std::size_t i = start + t;
        obs[t].insert(obs[t].end(), ep.observations[i].begin(), ep.observations[i].end());
        act[t].insert(act[t].end(), ep.prev_actions[i].begin(), ep.prev_actions[i].end());
        rew[t].push_back(ep.rewards[i]);
      }
      out.domains.push_back(pool_names[di]);
    }
    for (std::size_t t = 0; t < length; ++t) {
      out.observations.push_back(Tensor::from_values({batch, obs_dim}, std::move(obs[t])));
      out.actions.push_back(Tensor::from_values({batch, act_dim}, std::move(act[t])));
      out.rewards.push_back(Tensor::from_values({batch}, std::move(rew[t])));
    }
    return out;
  }

 private:
  static std::size_t pick(RngStream& rng, std::size_t n) {
    const auto i = static_cast<std::size_t>(rng.next_unit() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

  void evict_one() {
    std::string biggest;
    std::size_t most = 0;
    for (const auto& [d, eps] : domains_) {
      std::size_t n = 0;
      for (const Episode& ep : eps) n += ep.steps();
      if (n > most) {
        most = n;
        biggest = d;
      }
    }
    auto& eps = domains_.at(biggest);
    total_steps_ -= eps.front().steps();
    eps.pop_front();
    if (eps.empty()) domains_.erase(biggest);
  }

  std::size_t capacity_;
  std::size_t total_steps_ = 0;
  std::map<std::string, std::deque<Episode>> domains_;
};

}  // namespace wmtl
