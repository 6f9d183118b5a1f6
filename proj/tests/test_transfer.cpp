#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "support.hpp"
#include "wmtl/transfer.hpp"

using namespace wmtl;

namespace {

ModelSpec tiny_spec() {
  ModelSpec spec;
  spec.obs_dim = 16;
  spec.deter_dim = 3;
  spec.stoch_dim = 2;
  spec.hidden_dim = 4;
  spec.encoder_widths = {8, 6, 4};
  spec.decoder_widths = {4, 6, 8};
  spec.head_widths = {4, 3};
  spec.action_dim = 2;
  return spec;
}

NamedParamSet shifted_copy(const NamedParamSet& base, double shift) {
  NamedParamSet out = base.clone();
  for (const std::string& path : out.paths()) {
    for (double& v : out.at(path).values()) v += shift;
  }
  return out;
}

}  // namespace

TEST_CASE("fractional blend is the written expression, bit for bit") {
  RngStream rng = RngStream::root(80);
  Tensor random_init = test_support::random_tensor({25, 40}, rng, 1.0, false);
  Tensor source = test_support::random_tensor({25, 40}, rng, 1.0, false);
  for (int k = 0; k <= 10; ++k) {
    const double omega = static_cast<double>(k) / 10.0;
    Tensor out = fractional_blend(random_init, source, omega);
    REQUIRE(out.shape() == random_init.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double expected = random_init.values()[i] + omega * source.values()[i];
      REQUIRE(out.values()[i] == expected);
    }
  }
}

TEST_CASE("fractional blend endpoints and slope") {
  RngStream rng = RngStream::root(81);
  Tensor r = test_support::random_tensor({10, 10}, rng, 1.0, false);
  Tensor s = test_support::random_tensor({10, 10}, rng, 1.0, false);
  Tensor at0 = fractional_blend(r, s, 0.0);
  Tensor at1 = fractional_blend(r, s, 1.0);
  for (std::size_t i = 0; i < r.size(); ++i) {
    REQUIRE(at0.values()[i] == r.values()[i]);
    REQUIRE(at1.values()[i] == r.values()[i] + s.values()[i]);
  }
  // Linear in omega: the midpoint sits halfway between the endpoints.
  Tensor mid = fractional_blend(r, s, 0.5);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double expected = 0.5 * (at0.values()[i] + at1.values()[i]);
    REQUIRE(mid.values()[i] == Catch::Approx(expected).margin(1e-12));
  }
}

TEST_CASE("fractional blend validates fraction and shapes") {
  Tensor a = Tensor::zeros({2, 2});
  Tensor b = Tensor::zeros({2, 2});
  Tensor c = Tensor::zeros({2, 3});
  REQUIRE_THROWS_AS(fractional_blend(a, b, -0.1), ConfigError);
  REQUIRE_THROWS_AS(fractional_blend(a, b, 1.1), ConfigError);
  REQUIRE_THROWS_AS(fractional_blend(a, c, 0.5), DimensionError);
}

TEST_CASE("transfer modes parse and print") {
  REQUIRE(TransferMode::parse("random") == TransferMode::random());
  REQUIRE(TransferMode::parse("full") == TransferMode::full());
  REQUIRE(TransferMode::parse("fractional:0.25") == TransferMode::fractional(0.25));
  REQUIRE(TransferMode::fractional(0.25).to_string() == "fractional:0.25");
  REQUIRE(TransferMode::random().to_string() == "random");
  REQUIRE_THROWS_AS(TransferMode::parse("banana"), ConfigError);
  REQUIRE_THROWS_AS(TransferMode::parse("fractional:x"), ConfigError);
  REQUIRE_THROWS_AS(TransferMode::fractional(1.5), ConfigError);
}

TEST_CASE("plan resolution prefers paths over scoped roles over bare roles") {
  TransferPlan plan;
  plan.role_defaults[ParamRole::OutputHead] = TransferMode::full();
  plan.role_model_overrides["output_head.reward"] = TransferMode::fractional(0.4);
  plan.path_overrides["reward/fc3/bias"] = TransferMode::random();

  REQUIRE(plan.resolve("reward/fc3/bias", ParamRole::OutputHead) == TransferMode::random());
  REQUIRE(plan.resolve("reward/fc3/weight", ParamRole::OutputHead) ==
          TransferMode::fractional(0.4));
  REQUIRE(plan.resolve("value/fc3/weight", ParamRole::OutputHead) == TransferMode::full());
  REQUIRE_THROWS_AS(plan.resolve("encoder/fc1/weight", ParamRole::FeatureExtraction),
                    TransferError);

  // Longest matching path prefix wins.
  plan.path_overrides["reward/"] = TransferMode::full();
  plan.path_overrides["reward/fc3"] = TransferMode::fractional(0.9);
  REQUIRE(plan.resolve("reward/fc3/weight", ParamRole::OutputHead) ==
          TransferMode::fractional(0.9));
  REQUIRE(plan.resolve("reward/fc1/weight", ParamRole::OutputHead) == TransferMode::full());
}

TEST_CASE("plans round-trip through their text form") {
  TransferPlan plan = default_plan(0.2);
  plan.path_overrides["value/fc3/bias"] = TransferMode::full();
  TransferPlan parsed = plan_from_text(plan_to_text(plan));
  REQUIRE(parsed.role_defaults == plan.role_defaults);
  REQUIRE(parsed.role_model_overrides == plan.role_model_overrides);
  REQUIRE(parsed.path_overrides == plan.path_overrides);

  TransferPlan commented = plan_from_text(
      "# comment line\n"
      "feature_extraction = full\n"
      "output_head.actor = random  # trailing comment\n"
      "\n"
      "reward/fc3 = fractional:0.3\n");
  REQUIRE(commented.role_defaults.at(ParamRole::FeatureExtraction) == TransferMode::full());
  REQUIRE(commented.role_model_overrides.at("output_head.actor") == TransferMode::random());
  REQUIRE(commented.path_overrides.at("reward/fc3") == TransferMode::fractional(0.3));
}

TEST_CASE("the standard modular plan splits the agent as documented") {
  ModelSpec spec = tiny_spec();
  RngStream target_build = RngStream::root(82).split("build");
  NamedParamSet target = build_agent(spec, target_build);
  RngStream source_build = RngStream::root(83).split("build");
  NamedParamSet source = shifted_copy(build_agent(spec, source_build), 10.0);

  RngStream fresh = RngStream::root(82).split("build");  // same key as the target template
  NamedParamSet result = apply_transfer(target, source, default_plan(0.2), fresh);

  for (const std::string& path : target.paths()) {
    const ParamRole role = target.role(path);
    const auto& got = result.at(path).values();
    const auto& tpl = target.at(path).values();
    const auto& src = source.at(path).values();
    if (role == ParamRole::FeatureExtraction) {
      REQUIRE(got == src);
    } else if (role == ParamRole::ActionInput || path.rfind("actor/fc3", 0) == 0) {
      REQUIRE(got == tpl);  // fresh random from the same init streams
    } else {
      REQUIRE(path.substr(0, 5) != "actor");
      for (std::size_t i = 0; i < got.size(); ++i) {
        REQUIRE(got[i] == tpl[i] + 0.2 * src[i]);
      }
    }
  }
}

TEST_CASE("an all-random plan reproduces a fresh build") {
  ModelSpec spec = tiny_spec();
  RngStream build = RngStream::root(84).split("build");
  NamedParamSet target = build_agent(spec, build);
  RngStream other = RngStream::root(85).split("build");
  NamedParamSet source = build_agent(spec, other);

  TransferPlan all_random;
  all_random.role_defaults[ParamRole::FeatureExtraction] = TransferMode::random();
  all_random.role_defaults[ParamRole::ActionInput] = TransferMode::random();
  all_random.role_defaults[ParamRole::OutputHead] = TransferMode::random();

  RngStream replay = RngStream::root(84).split("build");
  NamedParamSet rebuilt = apply_transfer(target, source, all_random, replay);
  for (const std::string& path : target.paths()) {
    REQUIRE(rebuilt.at(path).values() == target.at(path).values());
    REQUIRE(rebuilt.role(path) == target.role(path));
  }
}

TEST_CASE("transfer leaves both input sets untouched") {
  ModelSpec spec = tiny_spec();
  RngStream b1 = RngStream::root(86).split("build");
  NamedParamSet target = build_agent(spec, b1);
  RngStream b2 = RngStream::root(87).split("build");
  NamedParamSet source = shifted_copy(build_agent(spec, b2), 1.0);
  const std::vector<double> target_before = target.at("encoder/fc1/weight").values();
  const std::vector<double> source_before = source.at("encoder/fc1/weight").values();

  RngStream fresh = RngStream::root(88).split("build");
  apply_transfer(target, source, default_plan(0.3), fresh);
  REQUIRE(target.at("encoder/fc1/weight").values() == target_before);
  REQUIRE(source.at("encoder/fc1/weight").values() == source_before);
}

TEST_CASE("transfer reports missing or mismatched source parameters by path") {
  ModelSpec spec = tiny_spec();
  RngStream b1 = RngStream::root(89).split("build");
  NamedParamSet target = build_agent(spec, b1);

  ModelSpec wide = spec;
  wide.action_dim = 3;
  RngStream b2 = RngStream::root(90).split("build");
  NamedParamSet wide_source = build_agent(wide, b2);
  RngStream fresh = RngStream::root(91).split("build");
  REQUIRE_THROWS_WITH(apply_transfer(target, wide_source, full_plan(), fresh),
                      Catch::Matchers::ContainsSubstring("actor/fc3/bias"));

  NamedParamSet partial;
  for (const std::string& path : target.paths()) {
    if (path == "value/fc3/bias") continue;
    partial.insert(path, target.at(path).clone_values(), target.role(path));
  }
  RngStream fresh2 = RngStream::root(92).split("build");
  REQUIRE_THROWS_WITH(apply_transfer(target, partial, full_plan(), fresh2),
                      Catch::Matchers::ContainsSubstring("value/fc3/bias"));
}

TEST_CASE("universal encoder extraction freezes and fingerprints") {
  ModelSpec spec = tiny_spec();
  RngStream build = RngStream::root(93).split("build");
  AgentCheckpoint ckpt;
  ckpt.params = build_agent(spec, build);
  ckpt.metadata["domains"] = std::vector<std::string>{"pendulum", "reacher2"};

  UniversalEncoder uae = make_universal_encoder(ckpt);
  REQUIRE(uae.fingerprint.size() == 64);
  REQUIRE(uae.fingerprint == encoder_fingerprint(ckpt.params));
  REQUIRE_FALSE(uae.single_domain);
  REQUIRE(uae.trained_domains == std::vector<std::string>{"pendulum", "reacher2"});
  for (const auto& [path, entry] : uae.params) {
    REQUIRE(path.rfind("encoder/", 0) == 0);
    REQUIRE_FALSE(entry.tensor.requires_grad());
    REQUIRE(entry.tensor.values() == ckpt.params.at(path).values());
  }

  AgentCheckpoint solo;
  solo.params = ckpt.params.clone();
  solo.metadata["domains"] = std::vector<std::string>{"pendulum"};
  REQUIRE(make_universal_encoder(solo).single_domain);

  AgentCheckpoint headless;
  headless.params = frozen_model_copy(ckpt.params, "reward");
  REQUIRE_THROWS_AS(make_universal_encoder(headless), TransferError);
}

TEST_CASE("installing a universal encoder overwrites and freezes in place") {
  ModelSpec spec = tiny_spec();
  RngStream b1 = RngStream::root(94).split("build");
  AgentCheckpoint ckpt;
  ckpt.params = build_agent(spec, b1);
  UniversalEncoder uae = make_universal_encoder(ckpt);

  RngStream b2 = RngStream::root(95).split("build");
  NamedParamSet agent = build_agent(spec, b2);
  std::vector<std::string> frozen = install_universal_encoder(agent, uae);
  REQUIRE(frozen == agent.paths_of_model("encoder"));
  for (const std::string& path : frozen) {
    REQUIRE(agent.at(path).values() == uae.params.at(path).values());
    REQUIRE_FALSE(agent.at(path).requires_grad());
  }
  REQUIRE(encoder_fingerprint(agent) == uae.fingerprint);
}

TEST_CASE("the encoder fingerprint tracks encoder weights only") {
  ModelSpec spec = tiny_spec();
  RngStream build = RngStream::root(96).split("build");
  NamedParamSet params = build_agent(spec, build);
  const std::string base = encoder_fingerprint(params);

  params.at("reward/fc1/weight").values()[0] += 1.0;
  REQUIRE(encoder_fingerprint(params) == base);

  params.at("encoder/fc1/weight").values()[0] += 1.0;
  REQUIRE(encoder_fingerprint(params) != base);
}

TEST_CASE("meta source pools concatenate frozen reward features") {
  ModelSpec spec = tiny_spec();
  RngStream b0 = RngStream::root(97).split("build");
  AgentCheckpoint shared;
  shared.params = build_agent(spec, b0);
  const std::string fp = encoder_fingerprint(shared.params);

  std::vector<AgentCheckpoint> pool;
  for (int i = 0; i < 2; ++i) {
    AgentCheckpoint ckpt;
    RngStream b = RngStream::root(98 + i).split("build");
    ckpt.params = build_agent(spec, b);
    ckpt.metadata["encoder_fingerprint"] = fp;
    ckpt.metadata["domains"] = std::vector<std::string>{i == 0 ? "pendulum" : "reacher2"};
    pool.push_back(std::move(ckpt));
  }

  MetaSources feature_mode = assemble_meta_sources(pool, fp, MetaFeatureMode::Feature);
  REQUIRE(feature_mode.count() == 2);
  REQUIRE(feature_mode.per_source_width == spec.head_widths[1]);
  REQUIRE(feature_mode.total_width() == 2 * spec.head_widths[1]);
  REQUIRE(feature_mode.source_domains == std::vector<std::string>{"pendulum", "reacher2"});

  Tensor state = Tensor::full({3, spec.state_dim()}, 0.2);
  Tensor feats = feature_mode.features(state);
  REQUIRE(feats.shape() == Shape{3, feature_mode.total_width()});
  REQUIRE_FALSE(feats.requires_grad());

  MetaSources scalar_mode = assemble_meta_sources(pool, fp, MetaFeatureMode::Scalar);
  REQUIRE(scalar_mode.per_source_width == 1);
  Tensor preds = scalar_mode.features(state);
  REQUIRE(preds.shape() == Shape{3, 2});
  Tape probe(false);
  Tensor direct = reward_forward(probe, pool[0].params, state);
  for (std::size_t b = 0; b < 3; ++b) {
    REQUIRE(preds.values()[b * 2] == direct.values()[b]);
  }

  MetaFeatureFn fn = feature_mode.feature_fn();
  REQUIRE(fn);
  REQUIRE(fn(state).values() == feats.values());
  REQUIRE_FALSE(MetaSources{}.feature_fn());

  REQUIRE_THROWS_AS(assemble_meta_sources({}, fp, MetaFeatureMode::Feature), TransferError);
  REQUIRE_THROWS_WITH(assemble_meta_sources(pool, "deadbeef", MetaFeatureMode::Feature),
                      Catch::Matchers::ContainsSubstring("fingerprint"));
}

TEST_CASE("meta feature mode names parse") {
  REQUIRE(meta_mode_from_string("feature") == MetaFeatureMode::Feature);
  REQUIRE(meta_mode_from_string("scalar") == MetaFeatureMode::Scalar);
  REQUIRE_THROWS_AS(meta_mode_from_string("both"), ConfigError);
}
