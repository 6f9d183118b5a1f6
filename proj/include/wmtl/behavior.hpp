#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "wmtl/adam.hpp"
#include "wmtl/errors.hpp"
#include "wmtl/nets.hpp"
#include "wmtl/worldmodel.hpp"

namespace wmtl {

/// Latent rollout produced by the actor inside the model. states has H+1
/// entries, actions/rewards H (rewards[k] is the predicted reward for the
/// transition into states[k+1]), values H+1. The tensors stay attached to
/// the tape that built them so the actor update can differentiate through
/// the whole rollout; the value entries come from detached copies of the
/// value parameters, so they never receive gradients themselves.
struct ImaginedTrajectory {
  std::vector<Tensor> states;   // [N, |s|] each
  std::vector<Tensor> actions;  // [N, A] each
  std::vector<Tensor> rewards;  // [N] each
  std::vector<Tensor> values;   // [N] each
};

/// Flatten a list of per-step posterior states into one batch of imagination
/// start states, detached from whatever graph produced them.
inline LatentState merge_starts(const std::vector<LatentState>& posteriors) {
  if (posteriors.empty()) throw InputError("merge_starts: no posterior states");
  const std::size_t deter = posteriors[0].h.dim(1);
  const std::size_t stoch = posteriors[0].z_sample.dim(1);
  std::vector<double> h, zm, zs, zz;
  std::size_t rows = 0;
  for (const LatentState& s : posteriors) {
    rows += s.h.dim(0);
    h.insert(h.end(), s.h.values().begin(), s.h.values().end());
    zm.insert(zm.end(), s.z_mean.values().begin(), s.z_mean.values().end());
    zs.insert(zs.end(), s.z_std.values().begin(), s.z_std.values().end());
    zz.insert(zz.end(), s.z_sample.values().begin(), s.z_sample.values().end());
  }
  return {Tensor::from_values({rows, deter}, std::move(h)),
          Tensor::from_values({rows, stoch}, std::move(zm)),
          Tensor::from_values({rows, stoch}, std::move(zs)),
          Tensor::from_values({rows, stoch}, std::move(zz))};
}

namespace detail {

inline void check_finite(const Tensor& t, const char* what, std::size_t step) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw TrainingError(std::string(what) + " not finite at imagination step " +
                          std::to_string(step));
    }
  }
}

}  // namespace detail

/// Roll the actor through the learned dynamics for H steps starting from the
/// given states. Actions are reparameterized tanh-squashed Gaussian draws,
/// so gradients flow from every predicted reward back into the actor.
inline ImaginedTrajectory imagine(Tape& tape, const NamedParamSet& params, const ModelSpec& spec,
                                  const LatentState& starts, std::size_t horizon, RngStream& rng,
                                  const MetaFeatureFn& meta = {}) {
  if (horizon == 0) throw ConfigError("imagination horizon must be >= 1");
  NamedParamSet value_const = frozen_model_copy(params, "value");
  ImaginedTrajectory traj;
  LatentState cur = starts;
  Tensor s = latent_feature(tape, cur);
  traj.states.push_back(s);
  traj.values.push_back(value_forward(tape, value_const, s));
  for (std::size_t k = 0; k < horizon; ++k) {
    ActorOutput dist = actor_forward(tape, params, spec, s);
    Tensor action = tanh(tape, gaussian_sample(tape, dist.mean, dist.std, rng));
    cur = imagine_step(tape, params, spec, cur, action, rng);
    s = latent_feature(tape, cur);
    detail::check_finite(s, "latent state", k + 1);

    Tensor reward;
    if (meta) {
      Tensor feats = meta(s);
      reward = meta_reward_forward(tape, params, spec, s, &feats);
    } else {
      reward = meta_reward_forward(tape, params, spec, s);
    }
    traj.actions.push_back(action);
    traj.rewards.push_back(reward);
    traj.states.push_back(s);
    traj.values.push_back(value_forward(tape, value_const, s));
  }
  return traj;
}

/// Exponentially-weighted return targets by backward recursion:
/// V(H) = v_H, then V(t) = r_t + gamma * ((1-lambda) * v_{t+1} + lambda * V(t+1)).
/// lambda = 0 is the one-step bootstrap, lambda = 1 the Monte-Carlo return
/// with a terminal value tail. Differentiable in both inputs.
inline Tensor lambda_returns(Tape& tape, const Tensor& rewards, const Tensor& values, double gamma,
                             double lambda) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must be in [0, 1)");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0, 1]");
  if (rewards.rank() != 2 || values.rank() != 2 || values.dim(0) != rewards.dim(0) ||
      values.dim(1) != rewards.dim(1) + 1) {
    throw DimensionError("lambda_returns: rewards " + shape_to_string(rewards.shape()) +
                         " needs values " + shape_to_string(values.shape()) +
                         " with one extra column");
  }
  const std::size_t horizon = rewards.dim(1);
  Tensor next = reshape(tape, slice_cols(tape, values, horizon, 1), {rewards.dim(0)});
  std::vector<Tensor> cols(horizon);
  for (std::size_t t = horizon; t-- > 0;) {
    Tensor r = reshape(tape, slice_cols(tape, rewards, t, 1), {rewards.dim(0)});
    Tensor v_next = reshape(tape, slice_cols(tape, values, t + 1, 1), {rewards.dim(0)});
    Tensor mix = add(tape, scale(tape, v_next, 1.0 - lambda), scale(tape, next, lambda));
    next = add(tape, r, scale(tape, mix, gamma));
    cols[t] = reshape(tape, next, {rewards.dim(0), 1});
  }
  return concat_cols(tape, std::span<const Tensor>(cols));
}

struct BehaviorDiagnostics {
  double actor_loss = 0.0;
  double value_loss = 0.0;
  double mean_return_target = 0.0;
};

/// One joint actor/value update on an imagined rollout. The actor maximizes
/// the mean lambda-return (value net held fixed through detached copies made
/// in imagine); the value net regresses toward the detached targets on
/// detached states. The two objectives share no parameters, so a single
/// backward pass yields both gradients cleanly separated.
inline BehaviorDiagnostics behavior_update(Tape& tape, const ImaginedTrajectory& traj,
                                           NamedParamSet& params, AdamState& actor_opt,
                                           AdamState& value_opt, double gamma, double lambda) {
  const std::size_t horizon = traj.rewards.size();
  if (horizon == 0) throw InputError("behavior_update: empty trajectory");
  const std::size_t rows = traj.rewards[0].dim(0);

  std::vector<Tensor> rcols(horizon), vcols(horizon + 1);
  for (std::size_t t = 0; t < horizon; ++t) rcols[t] = reshape(tape, traj.rewards[t], {rows, 1});
  for (std::size_t t = 0; t <= horizon; ++t) vcols[t] = reshape(tape, traj.values[t], {rows, 1});
  Tensor rewards = concat_cols(tape, std::span<const Tensor>(rcols));
  Tensor values = concat_cols(tape, std::span<const Tensor>(vcols));
  Tensor targets = lambda_returns(tape, rewards, values, gamma, lambda);

  Tensor actor_loss = negate(tape, mean(tape, targets));

  std::vector<Tensor> pcols(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    Tensor v = value_forward(tape, params, stop_gradient(traj.states[t]));
    pcols[t] = reshape(tape, v, {rows, 1});
  }
  Tensor preds = concat_cols(tape, std::span<const Tensor>(pcols));
  Tensor diff = add(tape, preds, negate(tape, stop_gradient(targets)));
  Tensor value_loss = scale(tape, mean(tape, mul(tape, diff, diff)), 0.5);

  BehaviorDiagnostics diag{actor_loss.item(), value_loss.item(), -actor_loss.item()};
  if (!std::isfinite(diag.actor_loss) || !std::isfinite(diag.value_loss)) {
    throw TrainingError("behavior update produced a non-finite loss");
  }

  params.zero_grads();
  Tensor total = add(tape, actor_loss, value_loss);
  tape.backward(total);
  actor_opt.step(params);
  value_opt.step(params);
  return diag;
}

struct ActResult {
  std::vector<double> action;  // padded width, each coordinate in [-1, 1]
  LatentState latent;
};

/// Action selection in the real environment: encode the frame, fold it into
/// the latent with one observation step, then either act on the actor's
/// squashed mean (explore=false; fully deterministic, consumes no rng) or
/// sample with additional pre-squash exploration noise.
inline ActResult act(const NamedParamSet& params, const ModelSpec& spec, const LatentState& prev,
                     const std::vector<double>& prev_action, const std::vector<double>& frame,
                     bool explore, RngStream& rng, double explore_noise = 0.3) {
  if (prev_action.size() != spec.action_dim) {
    throw DimensionError("act: previous action width " + std::to_string(prev_action.size()) +
                         " does not match " + std::to_string(spec.action_dim));
  }
  Tape tape(false);
  Tensor obs = Tensor::from_values({1, frame.size()}, frame);
  Tensor action = Tensor::from_values({1, spec.action_dim}, prev_action);
  Tensor embed = encoder_forward(tape, params, obs);
  ObserveResult step = observe_step(tape, params, spec, prev, action, embed, rng,
                                    /*deterministic=*/!explore);
  ActorOutput dist = actor_forward(tape, params, spec, latent_feature(tape, step.posterior));

  ActResult out;
  out.latent = step.posterior;
  out.action.resize(spec.action_dim);
  for (std::size_t i = 0; i < spec.action_dim; ++i) {
    double u = dist.mean.values()[i];
    if (explore) {
      u += dist.std.values()[i] * rng.next_gaussian() + explore_noise * rng.next_gaussian();
    }
    out.action[i] = std::tanh(u);
  }
  return out;
}

}  // namespace wmtl
