#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "wmtl/agent.hpp"
#include "wmtl/behavior.hpp"
#include "wmtl/checkpoint.hpp"
#include "wmtl/config.hpp"
#include "wmtl/envs.hpp"
#include "wmtl/metrics.hpp"
#include "wmtl/plot.hpp"
#include "wmtl/replay.hpp"
#include "wmtl/transfer.hpp"
#include "wmtl/worldmodel.hpp"

namespace wmtl {

/// Full description of one experiment invocation, assembled from a config
/// file plus CLI overrides.
struct ExperimentConfig {
  std::string mode = "baseline";  // baseline|multitask|ftl|mmtl|sweep|full_transfer_ablation
  std::vector<std::string> domains;      // domains trained on (one for single-task modes)
  std::vector<std::string> pad_domains;  // action-padding set; defaults to `domains`
  std::vector<std::string> source_paths; // checkpoint files (ftl: 1, mmtl: N)
  std::string uae_path;
  double omega = 0.2;
  std::vector<double> omega_list = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<std::uint64_t> seeds = {0};
  MetaFeatureMode meta_mode = MetaFeatureMode::Feature;
  TrainHyper hyper;
  std::string out_dir = "runs";
  std::string run_name;  // defaults to the mode

  static ExperimentConfig from_config(const Config& cfg) {
    ExperimentConfig e;
    e.mode = cfg.get_string("mode", e.mode);
    e.domains = cfg.get_string_list("domains");
    if (e.domains.empty() && cfg.has("target")) e.domains = {cfg.require_string("target")};
    e.pad_domains = cfg.get_string_list("pad_domains", e.domains);
    e.source_paths = cfg.get_string_list("sources");
    e.uae_path = cfg.get_string("uae", "");
    e.omega = cfg.get_double("omega", e.omega);
    e.omega_list = cfg.get_double_list("omega_list", e.omega_list);
    for (double w : e.omega_list) {
      if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("sweep omega values must lie in [0, 1]");
    }
    e.seeds.clear();
    for (long long s : cfg.get_int_list("seeds", {0})) {
      e.seeds.push_back(static_cast<std::uint64_t>(s));
    }
    e.meta_mode = meta_mode_from_string(cfg.get_string("meta_mode", "feature"));
    e.hyper = TrainHyper::from_config(cfg);
    e.out_dir = cfg.get_string("out_dir", e.out_dir);
    e.run_name = cfg.get_string("run_name", "");
    return e;
  }

  std::string name() const { return run_name.empty() ? mode : run_name; }
};

/// Everything train_agent needs for one seeded run.
struct TrainSetup {
  std::vector<std::string> domains;
  PaddedActionSpace action_space;
  ModelSpec spec;
  NamedParamSet initial_params;
  std::vector<std::string> frozen_paths;
  MetaSources meta;
  TrainHyper hyper;
  std::uint64_t seed = 0;
  std::string run_dir;  // empty = no files written
  std::string method_label = "baseline";
};

struct TrainOutcome {
  AgentCheckpoint checkpoint;
  MetricLog log;
  MetricLog eval_log;
};

namespace detail {

inline double wall_ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

/// Run one episode and return it in replay layout. The policy is either the
/// agent (explore or eval mode) or, when params is null, uniform random.
inline Episode run_episode(PaddedEnv& env, const NamedParamSet* params, const ModelSpec* spec,
                           bool explore, double explore_noise, RngStream rng) {
  Episode ep;
  ep.domain = env.domain_id();
  ep.action_width = env.a_max();
  env.reset();
  ep.observations.push_back(env.render());
  ep.prev_actions.push_back(std::vector<double>(env.a_max(), 0.0));
  ep.rewards.push_back(env.env().state_reward());

  LatentState latent;
  if (params) latent = initial_latent(*spec, 1);
  std::vector<double> prev_action(env.a_max(), 0.0);
  for (std::size_t t = 0; t < env.env().spec().episode_length; ++t) {
    std::vector<double> action(env.a_max());
    if (params) {
      ActResult res = act(*params, *spec, latent, prev_action, ep.observations.back(), explore, rng,
                          explore_noise);
      action = res.action;
      latent = res.latent;
    } else {
      for (double& a : action) a = rng.next_uniform(-1.0, 1.0);
    }
    const double reward = env.step(action);
    ep.observations.push_back(env.render());
    ep.prev_actions.push_back(action);
    ep.rewards.push_back(reward);
    prev_action = action;
  }
  return ep;
}

}  // namespace detail

/// The collect/train loop: seed the buffer with random episodes, then
/// alternate one collected episode per domain with a block of gradient
/// updates, until the env-step budget is spent. Checkpoints at every eval
/// interval and at the end. Deterministic given the seed.
inline TrainOutcome train_agent(const TrainSetup& setup) {
  if (setup.hyper.env_budget == 0) throw ConfigError("env-step budget must be positive");
  if (setup.domains.empty()) throw ConfigError("no domains configured");
  if (!setup.run_dir.empty()) std::filesystem::create_directories(setup.run_dir);

  RngStream root = RngStream::root(setup.seed);
  RngStream seed_stream = root.split("seed_episodes");
  RngStream collect_stream = root.split("collect");
  RngStream train_stream = root.split("train");
  RngStream eval_stream = root.split("eval");

  Agent agent = make_agent(setup.spec, setup.initial_params.clone(), setup.hyper,
                           setup.frozen_paths, setup.meta);
  const MetaFeatureFn meta_fn = agent.meta_fn();

  std::vector<std::unique_ptr<PaddedEnv>> envs;
  for (const std::string& d : setup.domains) {
    envs.push_back(std::make_unique<PaddedEnv>(make_env(d), setup.action_space.a_max));
  }

  ReplayBuffer buffer(setup.hyper.buffer_capacity);
  TrainOutcome outcome;
  std::uint64_t env_steps = 0;
  std::uint64_t episode_counter = 0;
  const auto t0 = std::chrono::steady_clock::now();

  auto record_episode = [&](const Episode& ep) {
    env_steps += ep.steps();
    outcome.log.episodes.push_back(
        {env_steps, ep.domain, ep.episode_return(), detail::wall_ms_since(t0)});
  };

  for (std::size_t k = 0; k < setup.hyper.seed_episodes; ++k) {
    for (auto& env : envs) {
      Episode ep = detail::run_episode(*env, nullptr, nullptr, true, 0.0,
                                       seed_stream.split(episode_counter++));
      record_episode(ep);
      buffer.add_episode(std::move(ep));
    }
  }

  std::uint64_t update_counter = 0;
  std::uint64_t next_eval = setup.hyper.eval_interval;

  auto make_ckpt = [&]() {
    AgentCheckpoint ckpt;
    ckpt.metadata = {{"domains", setup.domains},
                     {"model_spec", spec_to_json(agent.spec)},
                     {"a_max", setup.action_space.a_max},
                     {"env_steps", env_steps},
                     {"encoder_fingerprint", encoder_fingerprint(agent.params)},
                     {"method", setup.method_label},
                     {"seed", setup.seed},
                     {"frozen_paths", agent.frozen_paths}};
    ckpt.params = agent.params.clone();
    return ckpt;
  };

  auto run_eval = [&]() {
    for (auto& env : envs) {
      Episode ep = detail::run_episode(*env, &agent.params, &agent.spec, false, 0.0,
                                       eval_stream.split(episode_counter++));
      outcome.eval_log.episodes.push_back(
          {env_steps, ep.domain, ep.episode_return(), detail::wall_ms_since(t0)});
    }
  };

  while (env_steps < setup.hyper.env_budget) {
    for (auto& env : envs) {
      Episode ep = detail::run_episode(*env, &agent.params, &agent.spec, true,
                                       setup.hyper.explore_noise,
                                       collect_stream.split(episode_counter++));
      record_episode(ep);
      buffer.add_episode(std::move(ep));
    }

    for (std::size_t g = 0; g < setup.hyper.grad_steps; ++g) {
      RngStream update_stream = train_stream.split(update_counter++);
      RngStream batch_stream = update_stream.split("batch");
      RngStream model_stream = update_stream.split("model");
      RngStream imagine_stream = update_stream.split("imagine");

      SequenceBatch batch = buffer.sample(setup.hyper.batch, setup.hyper.seq_len, batch_stream);

      agent.params.zero_grads();
      Tape wm_tape;
      WorldModelResult wm = world_model_loss(wm_tape, agent.params, agent.spec, batch,
                                             setup.hyper.free_nats, model_stream, meta_fn);
      wm_tape.backward(wm.loss);
      agent.world_opt.step(agent.params);

      LatentState starts = merge_starts(wm.posteriors);
      Tape b_tape;
      ImaginedTrajectory traj = imagine(b_tape, agent.params, agent.spec, starts,
                                        setup.hyper.horizon, imagine_stream, meta_fn);
      BehaviorDiagnostics bd = behavior_update(b_tape, traj, agent.params, agent.actor_opt,
                                               agent.value_opt, setup.hyper.gamma,
                                               setup.hyper.lambda);

      outcome.log.updates.push_back({env_steps, wm.diag.loss, wm.diag.recon, wm.diag.reward_mse,
                                     wm.diag.kl, bd.actor_loss, bd.value_loss});
    }

    if (env_steps >= next_eval) {
      run_eval();
      if (!setup.run_dir.empty()) {
        save_checkpoint(make_ckpt(),
                        setup.run_dir + "/ckpt_" + std::to_string(env_steps) + ".wmtl");
      }
      while (next_eval <= env_steps) next_eval += setup.hyper.eval_interval;
    }
  }

  AgentCheckpoint final_ckpt = make_ckpt();

  if (!setup.run_dir.empty()) {
    save_checkpoint(final_ckpt, setup.run_dir + "/final.wmtl");
    write_metrics_csv(setup.run_dir + "/metrics.csv", outcome.log);
    write_losses_csv(setup.run_dir + "/losses.csv", outcome.log);
    write_metrics_csv(setup.run_dir + "/eval.csv", outcome.eval_log);
  }
  outcome.checkpoint = std::move(final_ckpt);
  return outcome;
}

namespace detail {

inline std::string run_dir_for(const ExperimentConfig& cfg, const std::string& label,
                               std::uint64_t seed) {
  return cfg.out_dir + "/" + label + "-seed" + std::to_string(seed);
}

inline void write_run_meta(const std::string& run_dir, const std::string& method,
                           const std::string& task, std::uint64_t seed, const json& extra = {}) {
  json j = {{"method", method}, {"task", task}, {"seed", seed}};
  if (!extra.empty()) j["extra"] = extra;
  std::ofstream f(run_dir + "/meta.json");
  if (!f) throw IoError("cannot write meta.json in '" + run_dir + "'");
  f << j.dump(2) << "\n";
}

}  // namespace detail

/// Baseline or multitask training from scratch on the configured domains.
inline std::vector<TrainOutcome> run_training(const ExperimentConfig& cfg) {
  std::vector<TrainOutcome> outcomes;
  for (std::uint64_t seed : cfg.seeds) {
    TrainSetup setup;
    setup.domains = cfg.domains;
    if (setup.domains.empty()) throw ConfigError("no target domain configured");
    setup.action_space = pad_action_space(cfg.pad_domains.empty() ? cfg.domains : cfg.pad_domains);
    setup.spec.action_dim = setup.action_space.a_max;
    setup.hyper = cfg.hyper;
    setup.seed = seed;
    setup.method_label = cfg.name();
    RngStream root = RngStream::root(seed);
    RngStream build = root.split("build");
    setup.initial_params = build_agent(setup.spec, build);
    setup.run_dir = detail::run_dir_for(cfg, cfg.name(), seed);
    std::filesystem::create_directories(setup.run_dir);
    detail::write_run_meta(setup.run_dir, cfg.name(),
                           cfg.domains.size() == 1 ? cfg.domains[0] : "multitask", seed);
    outcomes.push_back(train_agent(setup));
  }
  return outcomes;
}

/// Fractional transfer: initialize the target agent from a source checkpoint
/// under the default modular plan at the configured fraction, then train on
/// the target domain.
inline std::vector<TrainOutcome> run_ftl(const ExperimentConfig& cfg, double omega_override = -1.0) {
  if (cfg.source_paths.empty()) throw ConfigError("ftl requires a source checkpoint (sources = ...)");
  const double omega = omega_override >= 0.0 ? omega_override : cfg.omega;
  const AgentCheckpoint source = load_checkpoint(cfg.source_paths.front());
  const TransferPlan plan = default_plan(omega);

  std::vector<TrainOutcome> outcomes;
  for (std::uint64_t seed : cfg.seeds) {
    TrainSetup setup;
    setup.domains = cfg.domains;
    if (setup.domains.size() != 1) throw ConfigError("ftl trains exactly one target domain");
    setup.action_space = pad_action_space(cfg.pad_domains.empty() ? cfg.domains : cfg.pad_domains);
    setup.spec.action_dim = setup.action_space.a_max;
    setup.hyper = cfg.hyper;
    setup.seed = seed;
    std::ostringstream label;
    label << cfg.name() << "-omega" << omega;
    setup.method_label = label.str();

    RngStream root = RngStream::root(seed);
    RngStream build = root.split("build");
    NamedParamSet target_template = build_agent(setup.spec, build);
    setup.initial_params = apply_transfer(target_template, source.params, plan, build);

    setup.run_dir = detail::run_dir_for(cfg, setup.method_label, seed);
    std::filesystem::create_directories(setup.run_dir);
    detail::write_run_meta(setup.run_dir, setup.method_label, cfg.domains[0], seed,
                           {{"omega", omega}, {"source", cfg.source_paths.front()}});
    outcomes.push_back(train_agent(setup));
  }
  return outcomes;
}

/// Meta-model transfer: frozen universal encoder, fresh agent, and a reward
/// model that also sees features from N frozen source reward models.
inline std::vector<TrainOutcome> run_mmtl(const ExperimentConfig& cfg) {
  if (cfg.uae_path.empty()) throw ConfigError("mmtl requires a universal encoder checkpoint (uae = ...)");
  if (cfg.source_paths.empty()) throw ConfigError("mmtl requires source checkpoints (sources = ...)");
  const UniversalEncoder uae = make_universal_encoder(load_checkpoint(cfg.uae_path));
  std::vector<AgentCheckpoint> pool;
  for (const std::string& p : cfg.source_paths) pool.push_back(load_checkpoint(p));
  MetaSources sources = assemble_meta_sources(pool, uae.fingerprint, cfg.meta_mode);

  std::vector<TrainOutcome> outcomes;
  for (std::uint64_t seed : cfg.seeds) {
    TrainSetup setup;
    setup.domains = cfg.domains;
    if (setup.domains.size() != 1) throw ConfigError("mmtl trains exactly one target domain");
    setup.action_space = pad_action_space(cfg.pad_domains.empty() ? cfg.domains : cfg.pad_domains);
    setup.spec.action_dim = setup.action_space.a_max;
    setup.spec.meta_input_width = sources.total_width();
    setup.hyper = cfg.hyper;
    setup.seed = seed;
    setup.method_label = cfg.name();
    setup.meta = sources;

    RngStream root = RngStream::root(seed);
    RngStream build = root.split("build");
    setup.initial_params = build_agent(setup.spec, build);
    setup.frozen_paths = install_universal_encoder(setup.initial_params, uae);

    setup.run_dir = detail::run_dir_for(cfg, cfg.name(), seed);
    std::filesystem::create_directories(setup.run_dir);
    detail::write_run_meta(setup.run_dir, cfg.name(), cfg.domains[0], seed,
                           {{"uae", cfg.uae_path},
                            {"sources", cfg.source_paths},
                            {"n_sources", sources.count()},
                            {"meta_mode", cfg.meta_mode == MetaFeatureMode::Feature ? "feature"
                                                                                    : "scalar"}});
    outcomes.push_back(train_agent(setup));
  }
  return outcomes;
}

/// Fraction sweep: one FTL experiment per omega in the list, aggregated into
/// a per-fraction table (overall and final-window return).
inline std::vector<AggregateRow> run_sweep(const ExperimentConfig& cfg) {
  std::vector<RunLog> runs;
  for (double omega : cfg.omega_list) {
    ExperimentConfig sub = cfg;
    sub.run_name = cfg.name();  // run_ftl appends the fraction
    std::vector<TrainOutcome> outcomes = run_ftl(sub, omega);
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      std::ostringstream method;
      method << "omega=" << omega;
      runs.push_back({method.str(), cfg.domains.at(0), cfg.seeds[i], outcomes[i].log});
    }
  }
  std::vector<AggregateRow> rows = aggregate(runs);
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream csv(cfg.out_dir + "/sweep.csv");
  csv << render_aggregate_csv(rows);
  std::ofstream txt(cfg.out_dir + "/sweep.txt");
  txt << render_aggregate_text(rows);
  return rows;
}

struct AblationOutcome {
  bool skipped = false;
  std::string skip_reason;
  std::vector<RunLog> runs;  // baseline + ablation, same seeds
};

/// Appendix-style full-transfer ablation: every parameter copied from the
/// source (no re-randomization), trained against a from-scratch baseline on
/// the same seeds. Comparison curves and the aggregate table are written to
/// the out dir; the return-level comparison is reported, not asserted.
inline AblationOutcome run_full_transfer_ablation(const ExperimentConfig& cfg) {
  if (cfg.source_paths.empty()) {
    throw ConfigError("full-transfer ablation requires a source checkpoint (sources = ...)");
  }
  AblationOutcome outcome;
  const AgentCheckpoint source = load_checkpoint(cfg.source_paths.front());

  ExperimentConfig base = cfg;
  base.run_name = "ablation-baseline";
  std::vector<TrainOutcome> baseline = run_training(base);
  for (std::size_t i = 0; i < baseline.size(); ++i) {
    outcome.runs.push_back({"baseline", cfg.domains.at(0), cfg.seeds[i], baseline[i].log});
  }

  const ModelSpec source_spec = spec_from_json(source.metadata.at("model_spec"));
  const PaddedActionSpace space =
      pad_action_space(cfg.pad_domains.empty() ? cfg.domains : cfg.pad_domains);
  if (source_spec.action_dim != space.a_max) {
    outcome.skipped = true;
    outcome.skip_reason = "source action width " + std::to_string(source_spec.action_dim) +
                          " differs from target width " + std::to_string(space.a_max) +
                          "; full transfer needs matching shapes";
  } else {
    const TransferPlan plan = full_plan();
    for (std::uint64_t seed : cfg.seeds) {
      TrainSetup setup;
      setup.domains = cfg.domains;
      setup.action_space = space;
      setup.spec.action_dim = space.a_max;
      setup.spec.meta_input_width = source_spec.meta_input_width;
      setup.hyper = cfg.hyper;
      setup.seed = seed;
      setup.method_label = "full-transfer";
      RngStream root = RngStream::root(seed);
      RngStream build = root.split("build");
      NamedParamSet target_template = build_agent(setup.spec, build);
      setup.initial_params = apply_transfer(target_template, source.params, plan, build);
      setup.run_dir = detail::run_dir_for(cfg, "ablation-full", seed);
      std::filesystem::create_directories(setup.run_dir);
      detail::write_run_meta(setup.run_dir, "full-transfer", cfg.domains.at(0), seed,
                             {{"source", cfg.source_paths.front()}});
      TrainOutcome t = train_agent(setup);
      outcome.runs.push_back({"full-transfer", cfg.domains.at(0), seed, t.log});
    }
  }

  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream report(cfg.out_dir + "/ablation_report.txt");
  if (outcome.skipped) {
    report << "full-transfer arm skipped: " << outcome.skip_reason << "\n\n";
  }
  std::vector<AggregateRow> rows = aggregate(outcome.runs);
  report << render_aggregate_text(rows);
  std::ofstream csv(cfg.out_dir + "/ablation.csv");
  csv << render_aggregate_csv(rows);

  std::map<std::string, PlotSeries> series;
  for (const RunLog& run : outcome.runs) {
    PlotSeries& s = series[run.method];
    s.label = run.method;
    s.seeds.push_back(run.log);
  }
  std::vector<PlotSeries> list;
  for (auto& [label, s] : series) list.push_back(std::move(s));
  write_svg_plot(cfg.out_dir + "/ablation.svg", "full transfer vs baseline: " + cfg.domains.at(0),
                 list);
  return outcome;
}

/// Scan run directories (each with meta.json + metrics.csv) into RunLogs.
inline std::vector<RunLog> load_run_dirs(const std::vector<std::string>& dirs) {
  std::vector<RunLog> runs;
  for (const std::string& dir : dirs) {
    const std::string meta_path = dir + "/meta.json";
    std::ifstream f(meta_path);
    if (!f) throw IoError("no meta.json in '" + dir + "'");
    json meta;
    try {
      f >> meta;
    } catch (const json::parse_error& e) {
      throw FormatError("'" + meta_path + "': " + e.what());
    }
    RunLog run;
    run.method = meta.value("method", "?");
    run.task = meta.value("task", "?");
    run.seed = meta.value("seed", 0ull);
    run.log = read_metrics_csv(dir + "/metrics.csv");
    runs.push_back(std::move(run));
  }
  return runs;
}

}  // namespace wmtl
