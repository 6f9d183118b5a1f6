#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "wmtl/errors.hpp"
#include "wmtl/nets.hpp"
#include "wmtl/params.hpp"
#include "wmtl/replay.hpp"
#include "wmtl/rng.hpp"
#include "wmtl/tensor.hpp"

namespace wmtl {

/// Latent state of the recurrent world model: deterministic recurrent part h
/// and the stochastic part z as distribution parameters plus a draw.
struct LatentState {
  Tensor h;         // [B, deter]
  Tensor z_mean;    // [B, stoch]
  Tensor z_std;     // [B, stoch], strictly positive
  Tensor z_sample;  // [B, stoch]

  std::size_t batch() const { return h.dim(0); }
};

inline LatentState initial_latent(const ModelSpec& spec, std::size_t batch) {
  return {Tensor::zeros({batch, spec.deter_dim}), Tensor::zeros({batch, spec.stoch_dim}),
          Tensor::full({batch, spec.stoch_dim}, 1.0), Tensor::zeros({batch, spec.stoch_dim})};
}

/// The feature vector downstream models consume: concat(h, z_sample), [B,|s|].
inline Tensor latent_feature(Tape& tape, const LatentState& s) {
  return concat_cols(tape, {s.h, s.z_sample});
}

/// Extra reward-model inputs from frozen sources: state [B,|s|] -> [B, width].
using MetaFeatureFn = std::function<Tensor(const Tensor& state)>;

namespace detail {

/// Deterministic recurrent update shared by prior and posterior: embed the
/// (z, action) pair, then run one GRU cell step on h.
inline Tensor recurrent_step(Tape& tape, const NamedParamSet& p, const ModelSpec& spec,
                             const LatentState& prev, const Tensor& action) {
  if (action.rank() != 2 || action.dim(1) != spec.action_dim) {
    throw DimensionError("recurrent_step: action shape " + shape_to_string(action.shape()) +
                         " does not match action_dim " + std::to_string(spec.action_dim));
  }
  Tensor pre = linear(tape, prev.z_sample, p.at("transition/input/weight_latent"),
                      p.at("transition/input/bias"));
  pre = add(tape, pre, matmul(tape, action, p.at("transition/input/weight_action")));
  Tensor x = elu(tape, pre);

  const std::size_t d = spec.deter_dim;
  Tensor xg = linear(tape, x, p.at("transition/gru/input_weight"), p.at("transition/gru/bias"));
  Tensor hg = matmul(tape, prev.h, p.at("transition/gru/recurrent_weight"));
  Tensor reset = sigmoid(tape, add(tape, slice_cols(tape, xg, 0, d), slice_cols(tape, hg, 0, d)));
  Tensor update = sigmoid(tape, add(tape, slice_cols(tape, xg, d, d), slice_cols(tape, hg, d, d)));
  Tensor cand = tanh(tape, add(tape, slice_cols(tape, xg, 2 * d, d),
                               mul(tape, reset, slice_cols(tape, hg, 2 * d, d))));
  Tensor keep = mul(tape, update, prev.h);
  Tensor one_minus_u = add(tape, negate(tape, update), Tensor::scalar(1.0));
  return add(tape, keep, mul(tape, one_minus_u, cand));
}

/// Distribution head: input -> (mean, softplus std + min_std), each [B, z].
inline std::pair<Tensor, Tensor> latent_stats(Tape& tape, const NamedParamSet& p,
                                              const ModelSpec& spec, const std::string& model,
                                              const Tensor& input) {
  Tensor out = forward_mlp(tape, p, model, input);
  Tensor mean = slice_cols(tape, out, 0, spec.stoch_dim);
  Tensor std = add(tape, softplus(tape, slice_cols(tape, out, spec.stoch_dim, spec.stoch_dim)),
                   Tensor::scalar(spec.min_std));
  return {mean, std};
}

inline Tensor draw(Tape& tape, const Tensor& mean, const Tensor& std, RngStream& rng,
                   bool deterministic) {
  if (deterministic) return mean;
  return gaussian_sample(tape, mean, std, rng);
}

}  // namespace detail

struct ObserveResult {
  LatentState posterior;
  LatentState prior;
};

/// One step of the recurrent state-space model with an observation: advance
/// h, predict the prior over z from h alone, and the posterior from h plus
/// the encoded observation. Prior and posterior share h. The prior draw is
/// taken before the posterior draw, so an imagination step consumes the rng
/// identically to the prior half of an observation step.
inline ObserveResult observe_step(Tape& tape, const NamedParamSet& p, const ModelSpec& spec,
                                  const LatentState& prev, const Tensor& action, const Tensor& embed,
                                  RngStream& rng, bool deterministic = false) {
  Tensor h = detail::recurrent_step(tape, p, spec, prev, action);
  auto [pmean, pstd] = detail::latent_stats(tape, p, spec, "transition/prior", h);
  Tensor psample = detail::draw(tape, pmean, pstd, rng, deterministic);
  Tensor joint = concat_cols(tape, {h, embed});
  auto [qmean, qstd] = detail::latent_stats(tape, p, spec, "transition/posterior", joint);
  Tensor qsample = detail::draw(tape, qmean, qstd, rng, deterministic);
  return {LatentState{h, qmean, qstd, qsample}, LatentState{h, pmean, pstd, psample}};
}

/// Latent-only step used for imagination: the prior half of observe_step.
inline LatentState imagine_step(Tape& tape, const NamedParamSet& p, const ModelSpec& spec,
                                const LatentState& prev, const Tensor& action, RngStream& rng,
                                bool deterministic = false) {
  Tensor h = detail::recurrent_step(tape, p, spec, prev, action);
  auto [pmean, pstd] = detail::latent_stats(tape, p, spec, "transition/prior", h);
  Tensor psample = detail::draw(tape, pmean, pstd, rng, deterministic);
  return {h, pmean, pstd, psample};
}

/// Reward prediction with optional frozen-source features appended to the
/// latent state (meta-model input). The configured reward-model input width
/// must match |s| plus the feature width.
inline Tensor meta_reward_forward(Tape& tape, const NamedParamSet& p, const ModelSpec& spec,
                                  const Tensor& state, const Tensor* features = nullptr) {
  Tensor input = state;
  if (features != nullptr && features->size() > 0) {
    input = concat_cols(tape, {state, *features});
  }
  if (input.dim(1) != spec.reward_input_dim()) {
    throw DimensionError("reward input width " + std::to_string(input.dim(1)) +
                         " does not match configured width " +
                         std::to_string(spec.reward_input_dim()));
  }
  return reward_forward(tape, p, input);
}

struct WorldModelDiagnostics {
  double loss = 0.0;
  double recon = 0.0;       // mean over (b,t) of the half squared pixel error
  double reward_mse = 0.0;  // mean over (b,t) squared reward error
  double kl = 0.0;          // mean over (b,t) KL before the free-nats floor
};

struct WorldModelResult {
  Tensor loss;  // scalar: batch mean of per-sequence time sums
  std::vector<LatentState> posteriors;
  WorldModelDiagnostics diag;
};

/// Joint objective of the world model on a sequence batch: pixel
/// reconstruction, reward regression, and the KL between posterior and prior
/// floored at free_nats, summed over time and averaged over the batch.
inline WorldModelResult world_model_loss(Tape& tape, const NamedParamSet& p, const ModelSpec& spec,
                                         const SequenceBatch& batch, double free_nats, RngStream& rng,
                                         const MetaFeatureFn& meta = {}) {
  if (batch.batch == 0 || batch.length == 0) throw InputError("world_model_loss: empty batch");
  if (spec.meta_input_width > 0 && !meta) {
    throw ConfigError("reward model expects meta features but no source feature fn given");
  }
  const std::size_t B = batch.batch;
  WorldModelResult result;
  LatentState prev = initial_latent(spec, B);
  Tensor per_seq = Tensor::zeros({B});
  double recon_sum = 0.0, reward_sq_sum = 0.0, kl_sum = 0.0;

  for (std::size_t t = 0; t < batch.length; ++t) {
    Tensor embed = encoder_forward(tape, p, batch.observations[t]);
    ObserveResult step = observe_step(tape, p, spec, prev, batch.actions[t], embed, rng);
    Tensor s = latent_feature(tape, step.posterior);

    Tensor recon_diff = add(tape, decoder_forward(tape, p, s), negate(tape, batch.observations[t]));
    Tensor recon = scale(tape, sum_rows(tape, mul(tape, recon_diff, recon_diff)), 0.5);

    Tensor rpred;
    if (meta) {
      Tensor feats = meta(s);
      rpred = meta_reward_forward(tape, p, spec, s, &feats);
    } else {
      rpred = meta_reward_forward(tape, p, spec, s);
    }
    Tensor rdiff = add(tape, rpred, negate(tape, batch.rewards[t]));
    Tensor rsq = mul(tape, rdiff, rdiff);
    Tensor rloss = scale(tape, rsq, 0.5);

    Tensor kl = gaussian_kl(tape, step.posterior.z_mean, step.posterior.z_std, step.prior.z_mean,
                            step.prior.z_std);
    Tensor kl_floored = max_const(tape, kl, free_nats);

    per_seq = add(tape, per_seq, add(tape, add(tape, recon, rloss), kl_floored));
    for (double v : recon.values()) recon_sum += v;
    for (double v : rsq.values()) reward_sq_sum += v;
    for (double v : kl.values()) kl_sum += v;

    result.posteriors.push_back(step.posterior);
    prev = step.posterior;
  }

  result.loss = mean(tape, per_seq);
  const double denom = static_cast<double>(B * batch.length);
  result.diag = {result.loss.item(), recon_sum / denom, reward_sq_sum / denom, kl_sum / denom};
  if (!std::isfinite(result.diag.loss)) {
    const char* term = !std::isfinite(result.diag.recon)        ? "reconstruction"
                       : !std::isfinite(result.diag.reward_mse) ? "reward"
                                                                : "kl";
    throw TrainingError(std::string("world model loss is not finite (") + term + " term)");
  }
  return result;
}

}  // namespace wmtl
