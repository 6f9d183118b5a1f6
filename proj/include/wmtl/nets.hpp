#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "wmtl/errors.hpp"
#include "wmtl/params.hpp"
#include "wmtl/rng.hpp"
#include "wmtl/tensor.hpp"

namespace wmtl {

/// Widths and latent sizes of the agent's six networks. Defaults are the
/// desk-scale configuration: 16x16 grayscale frames, a 32+8 latent, and
/// 64-wide heads, sized so a full training run finishes in minutes on one
/// core. Encoder and decoder are dense stacks of four layers; reward, value
/// and actor are three-layer heads.
struct ModelSpec {
  std::size_t obs_dim = 256;
  std::size_t deter_dim = 32;
  std::size_t stoch_dim = 8;
  std::size_t hidden_dim = 64;
  std::vector<std::size_t> encoder_widths = {128, 64, 32};
  std::vector<std::size_t> decoder_widths = {32, 64, 128};
  std::vector<std::size_t> head_widths = {64, 64};
  std::size_t action_dim = 1;
  // Extra reward-model input width for meta-model reward transfer
  // (N sources x feature width); 0 means a plain reward model.
  std::size_t meta_input_width = 0;
  double min_std = 1e-4;

  std::size_t embed_dim() const { return 2 * stoch_dim; }
  std::size_t state_dim() const { return deter_dim + stoch_dim; }
  std::size_t reward_input_dim() const { return state_dim() + meta_input_width; }

  void validate() const {
    if (encoder_widths.size() != 3 || decoder_widths.size() != 3) {
      throw ConfigError("encoder/decoder must have exactly 4 dense layers (3 hidden widths)");
    }
    if (head_widths.size() != 2) {
      throw ConfigError("reward/value/actor heads must have exactly 3 dense layers (2 hidden widths)");
    }
    auto check = [](std::size_t w, const char* what) {
      if (w == 0) throw ConfigError(std::string("zero width for ") + what);
    };
    check(obs_dim, "obs_dim");
    check(deter_dim, "deter_dim");
    check(stoch_dim, "stoch_dim");
    check(hidden_dim, "hidden_dim");
    check(action_dim, "action_dim");
    for (std::size_t w : encoder_widths) check(w, "encoder layer");
    for (std::size_t w : decoder_widths) check(w, "decoder layer");
    for (std::size_t w : head_widths) check(w, "head layer");
    if (min_std <= 0.0) throw ConfigError("min_std must be positive");
  }

  bool operator==(const ModelSpec& o) const = default;
};

namespace detail {

/// Glorot-uniform fill for a [fan_in, fan_out] weight matrix.
inline Tensor glorot_weight(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w = Tensor::zeros({fan_in, fan_out});
  for (double& v : w.values()) v = rng.next_uniform(-bound, bound);
  return w;
}

/// Weights are Glorot-initialized from a stream derived from the parameter's
/// own path, so re-drawing any single path (transfer's Random mode) lands on
/// the same values a full build would have produced. Biases start at zero.
inline Tensor init_param(const std::string& path, const Shape& shape, RngStream& rng) {
  if (shape.size() == 1) return Tensor::zeros(shape);
  RngStream sub = rng.split("init/" + path);
  return glorot_weight(shape[0], shape[1], sub);
}

inline void add_param(NamedParamSet& out, const std::string& path, Shape shape, ParamRole role,
                      RngStream& rng) {
  out.insert(path, init_param(path, shape, rng), role);
}

inline void add_mlp(NamedParamSet& out, const std::string& model, std::size_t in_dim,
                    const std::vector<std::size_t>& hidden, std::size_t out_dim,
                    ParamRole hidden_role, ParamRole out_role, RngStream& rng) {
  std::vector<std::size_t> dims;
  dims.push_back(in_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out_dim);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::string layer = model + "/fc" + std::to_string(i + 1);
    const ParamRole role = (i + 2 == dims.size()) ? out_role : hidden_role;
    add_param(out, layer + "/weight", {dims[i], dims[i + 1]}, role, rng);
    add_param(out, layer + "/bias", {dims[i + 1]}, role, rng);
  }
}

}  // namespace detail

/// Fresh parameters for the whole agent: encoder, decoder, transition
/// (input layer, GRU cell, prior and posterior heads), reward, value, actor.
/// Role tags: everything is FeatureExtraction except the transition's
/// action-input weight block (ActionInput) and the final layer of the three
/// heads (OutputHead). Deterministic given the rng stream.
inline NamedParamSet build_agent(const ModelSpec& spec, RngStream& rng) {
  spec.validate();
  NamedParamSet p;
  const auto FE = ParamRole::FeatureExtraction;

  detail::add_mlp(p, "encoder", spec.obs_dim, spec.encoder_widths, spec.embed_dim(), FE, FE, rng);
  detail::add_mlp(p, "decoder", spec.state_dim(), spec.decoder_widths, spec.obs_dim, FE, FE, rng);

  detail::add_param(p, "transition/input/weight_latent", {spec.stoch_dim, spec.hidden_dim}, FE, rng);
  detail::add_param(p, "transition/input/weight_action", {spec.action_dim, spec.hidden_dim},
                    ParamRole::ActionInput, rng);
  detail::add_param(p, "transition/input/bias", {spec.hidden_dim}, FE, rng);
  detail::add_param(p, "transition/gru/input_weight", {spec.hidden_dim, 3 * spec.deter_dim}, FE, rng);
  detail::add_param(p, "transition/gru/recurrent_weight", {spec.deter_dim, 3 * spec.deter_dim}, FE, rng);
  detail::add_param(p, "transition/gru/bias", {3 * spec.deter_dim}, FE, rng);
  detail::add_mlp(p, "transition/prior", spec.deter_dim, {spec.hidden_dim}, 2 * spec.stoch_dim, FE, FE, rng);
  detail::add_mlp(p, "transition/posterior", spec.deter_dim + spec.embed_dim(), {spec.hidden_dim},
                  2 * spec.stoch_dim, FE, FE, rng);

  detail::add_mlp(p, "reward", spec.reward_input_dim(), spec.head_widths, 1, FE,
                  ParamRole::OutputHead, rng);
  detail::add_mlp(p, "value", spec.state_dim(), spec.head_widths, 1, FE, ParamRole::OutputHead, rng);
  detail::add_mlp(p, "actor", spec.state_dim(), spec.head_widths, 2 * spec.action_dim, FE,
                  ParamRole::OutputHead, rng);
  return p;
}

/// Output transform applied after the last dense layer of forward_mlp.
enum class HeadKind { Linear };

/// Dense stack model/fc1..fcN with ELU between layers. The layer count is
/// discovered from the parameter set, so the same code runs every model.
inline Tensor forward_mlp(Tape& tape, const NamedParamSet& params, const std::string& model,
                          const Tensor& input, HeadKind head = HeadKind::Linear) {
  Tensor x = input;
  for (std::size_t i = 1;; ++i) {
    const std::string layer = model + "/fc" + std::to_string(i);
    if (!params.contains(layer + "/weight")) {
      if (i == 1) throw KeyError("no layers found for model '" + model + "'");
      break;
    }
    if (i > 1) x = elu(tape, x);
    x = linear(tape, x, params.at(layer + "/weight"), params.at(layer + "/bias"));
  }
  switch (head) {
    case HeadKind::Linear: break;
  }
  return x;
}

/// Penultimate activation of a head model: the ELU output feeding its final
/// dense layer. This is the "feature" a frozen source reward model exports.
inline Tensor forward_mlp_features(Tape& tape, const NamedParamSet& params, const std::string& model,
                                   const Tensor& input) {
  std::size_t layers = 0;
  while (params.contains(model + "/fc" + std::to_string(layers + 1) + "/weight")) ++layers;
  if (layers < 2) throw KeyError("model '" + model + "' has no penultimate layer");
  Tensor x = input;
  for (std::size_t i = 1; i < layers; ++i) {
    if (i > 1) x = elu(tape, x);
    const std::string layer = model + "/fc" + std::to_string(i);
    x = linear(tape, x, params.at(layer + "/weight"), params.at(layer + "/bias"));
  }
  return elu(tape, x);
}

inline Tensor sigmoid(Tape& tape, const Tensor& x) {
  Tensor t = tanh(tape, scale(tape, x, 0.5));
  return add(tape, scale(tape, t, 0.5), Tensor::scalar(0.5));
}

/// Frame [B,256] -> observation embedding [B, 2z].
inline Tensor encoder_forward(Tape& tape, const NamedParamSet& params, const Tensor& obs) {
  return forward_mlp(tape, params, "encoder", obs);
}

/// Latent state [B,|s|] -> pixel means [B,256].
inline Tensor decoder_forward(Tape& tape, const NamedParamSet& params, const Tensor& state) {
  return forward_mlp(tape, params, "decoder", state);
}

/// Latent state [B,|s|] -> predicted reward [B].
inline Tensor reward_forward(Tape& tape, const NamedParamSet& params, const Tensor& input) {
  Tensor out = forward_mlp(tape, params, "reward", input);
  return sum_rows(tape, out);
}

inline Tensor value_forward(Tape& tape, const NamedParamSet& params, const Tensor& state) {
  Tensor out = forward_mlp(tape, params, "value", state);
  return sum_rows(tape, out);
}

struct ActorOutput {
  Tensor mean;  // [B,A], squashed to (-5,5) so tanh(mean) spans nearly all of (-1,1)
  Tensor std;   // [B,A], softplus + min_std
};

/// Latent state [B,|s|] -> pre-squash Gaussian action distribution.
inline ActorOutput actor_forward(Tape& tape, const NamedParamSet& params, const ModelSpec& spec,
                                 const Tensor& state) {
  Tensor out = forward_mlp(tape, params, "actor", state);
  Tensor raw_mean = slice_cols(tape, out, 0, spec.action_dim);
  Tensor raw_std = slice_cols(tape, out, spec.action_dim, spec.action_dim);
  Tensor mean = scale(tape, tanh(tape, scale(tape, raw_mean, 1.0 / 5.0)), 5.0);
  Tensor std = add(tape, softplus(tape, raw_std), Tensor::scalar(spec.min_std));
  return {mean, std};
}

}  // namespace wmtl
