// Command-line front end for the world-model transfer laboratory: training,
// transfer experiments, evaluation, aggregation and checkpoint inspection.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wmtl/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string run_name;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> domains;
  long long env_steps = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
  auto* c = cmd->add_option("--config", args.config_path, "experiment config file");
  if (config_required) c->required()->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", args.out_dir, "directory for run outputs");
  cmd->add_option("--run-name", args.run_name, "label used in run directory names");
  cmd->add_option("--seed", args.seeds, "override the seed list (repeatable)");
  cmd->add_option("--domains", args.domains, "override the domain list (repeatable)");
  cmd->add_option("--env-steps", args.env_steps, "override the environment step budget");
}

wmtl::Config load_config(const CommonArgs& args, const std::string& mode) {
  wmtl::Config cfg =
      args.config_path.empty() ? wmtl::Config() : wmtl::Config::from_file(args.config_path);
  cfg.set("mode", mode);
  if (!args.out_dir.empty()) cfg.set("out_dir", args.out_dir);
  if (!args.run_name.empty()) cfg.set("run_name", args.run_name);
  if (!args.seeds.empty()) {
    std::ostringstream s;
    for (std::size_t i = 0; i < args.seeds.size(); ++i) s << (i ? "," : "") << args.seeds[i];
    cfg.set("seeds", s.str());
  }
  if (!args.domains.empty()) {
    std::ostringstream s;
    for (std::size_t i = 0; i < args.domains.size(); ++i) s << (i ? "," : "") << args.domains[i];
    cfg.set("domains", s.str());
  }
  if (args.env_steps >= 0) cfg.set("env_steps", std::to_string(args.env_steps));
  return cfg;
}

void print_outcomes(const std::string& label, const std::vector<wmtl::TrainOutcome>& outcomes,
                    const std::vector<std::uint64_t>& seeds) {
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& eps = outcomes[i].log.episodes;
    double last = eps.empty() ? 0.0 : eps.back().episode_return;
    std::cout << label << " seed " << seeds[i] << ": " << eps.size() << " episodes, last return "
              << last << "\n";
  }
}

std::vector<std::string> expand_run_dirs(const std::vector<std::string>& runs,
                                         const std::string& scan_dir) {
  std::vector<std::string> dirs = runs;
  if (!scan_dir.empty()) {
    for (const auto& entry : std::filesystem::directory_iterator(scan_dir)) {
      if (entry.is_directory() && std::filesystem::exists(entry.path() / "meta.json")) {
        dirs.push_back(entry.path().string());
      }
    }
    std::sort(dirs.begin(), dirs.end());
  }
  if (dirs.empty()) throw wmtl::InputError("no run directories given (use --runs or --scan)");
  return dirs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"world-model transfer laboratory"};
  app.require_subcommand(1);

  CommonArgs train_args, multitask_args, ftl_args, mmtl_args, sweep_args, ablate_args;

  auto* train_cmd = app.add_subcommand("train", "train a single-domain agent from scratch");
  add_common(train_cmd, train_args, true);

  auto* multitask_cmd =
      app.add_subcommand("multitask", "train one agent across several domains");
  add_common(multitask_cmd, multitask_args, true);

  auto* ftl_cmd = app.add_subcommand("ftl", "fractional transfer from a source checkpoint");
  add_common(ftl_cmd, ftl_args, true);
  std::string ftl_source;
  double ftl_omega = -1.0;
  ftl_cmd->add_option("--source", ftl_source, "source agent checkpoint");
  ftl_cmd->add_option("--omega", ftl_omega, "transfer fraction in [0, 1]");

  auto* mmtl_cmd = app.add_subcommand("mmtl", "meta-model transfer with a universal encoder");
  add_common(mmtl_cmd, mmtl_args, true);
  std::string mmtl_uae;
  std::vector<std::string> mmtl_sources;
  std::string mmtl_mode;
  mmtl_cmd->add_option("--uae", mmtl_uae, "universal encoder checkpoint");
  mmtl_cmd->add_option("--sources", mmtl_sources, "source agent checkpoints (repeatable)");
  mmtl_cmd->add_option("--meta-mode", mmtl_mode, "feature|scalar");

  auto* sweep_cmd = app.add_subcommand("sweep", "run ftl across a list of fractions");
  add_common(sweep_cmd, sweep_args, true);
  std::string sweep_source;
  std::vector<double> sweep_omegas;
  sweep_cmd->add_option("--source", sweep_source, "source agent checkpoint");
  sweep_cmd->add_option("--omegas", sweep_omegas, "fractions to sweep (repeatable)");

  auto* ablate_cmd =
      app.add_subcommand("ablate-full", "full transfer vs from-scratch baseline");
  add_common(ablate_cmd, ablate_args, true);
  std::string ablate_source;
  ablate_cmd->add_option("--source", ablate_source, "source agent checkpoint");

  auto* eval_cmd = app.add_subcommand("eval", "run evaluation episodes from a checkpoint");
  std::string eval_ckpt, eval_domain, eval_render_dir;
  std::size_t eval_episodes = 5;
  std::uint64_t eval_seed = 0;
  eval_cmd->add_option("--ckpt", eval_ckpt, "agent checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--domain", eval_domain, "domain to evaluate on (default: first trained)");
  eval_cmd->add_option("--episodes", eval_episodes, "number of evaluation episodes");
  eval_cmd->add_option("--seed", eval_seed, "evaluation rng seed");
  eval_cmd->add_option("--render-dir", eval_render_dir, "dump first-episode frames as PGM here");

  auto* aggregate_cmd = app.add_subcommand("aggregate", "summarize runs into a return table");
  std::vector<std::string> agg_runs;
  std::string agg_scan, agg_csv;
  double agg_final_fraction = 0.1;
  aggregate_cmd->add_option("--runs", agg_runs, "run directories (repeatable)");
  aggregate_cmd->add_option("--scan", agg_scan, "directory whose subdirectories are runs");
  aggregate_cmd->add_option("--csv", agg_csv, "also write the table as CSV here");
  aggregate_cmd->add_option("--final-fraction", agg_final_fraction,
                            "tail fraction of the budget treated as final performance");

  auto* plot_cmd = app.add_subcommand("plot", "render return curves for runs as an SVG");
  std::vector<std::string> plot_runs;
  std::string plot_scan, plot_out = "curves.svg", plot_title = "episode return";
  plot_cmd->add_option("--runs", plot_runs, "run directories (repeatable)");
  plot_cmd->add_option("--scan", plot_scan, "directory whose subdirectories are runs");
  plot_cmd->add_option("--out", plot_out, "output SVG path");
  plot_cmd->add_option("--title", plot_title, "plot title");

  auto* ckpt_cmd = app.add_subcommand("ckpt", "checkpoint utilities");
  ckpt_cmd->require_subcommand(1);
  auto* inspect_cmd = ckpt_cmd->add_subcommand("inspect", "describe a checkpoint file");
  std::string inspect_path;
  inspect_cmd->add_option("path", inspect_path, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      wmtl::ExperimentConfig cfg =
          wmtl::ExperimentConfig::from_config(load_config(train_args, "baseline"));
      if (cfg.domains.size() != 1) {
        throw wmtl::ConfigError("train expects exactly one domain (use multitask for several)");
      }
      print_outcomes(cfg.name(), wmtl::run_training(cfg), cfg.seeds);
    } else if (*multitask_cmd) {
      wmtl::Config raw = load_config(multitask_args, "multitask");
      if (!raw.has("run_name")) raw.set("run_name", "multitask");
      wmtl::ExperimentConfig cfg = wmtl::ExperimentConfig::from_config(raw);
      if (cfg.domains.size() < 2) {
        throw wmtl::ConfigError("multitask expects at least two domains");
      }
      print_outcomes(cfg.name(), wmtl::run_training(cfg), cfg.seeds);
    } else if (*ftl_cmd) {
      wmtl::Config raw = load_config(ftl_args, "ftl");
      if (!raw.has("run_name")) raw.set("run_name", "ftl");
      if (!ftl_source.empty()) raw.set("sources", ftl_source);
      if (ftl_omega >= 0.0) raw.set("omega", std::to_string(ftl_omega));
      wmtl::ExperimentConfig cfg = wmtl::ExperimentConfig::from_config(raw);
      print_outcomes(cfg.name(), wmtl::run_ftl(cfg), cfg.seeds);
    } else if (*mmtl_cmd) {
      wmtl::Config raw = load_config(mmtl_args, "mmtl");
      if (!raw.has("run_name")) raw.set("run_name", "mmtl");
      if (!mmtl_uae.empty()) raw.set("uae", mmtl_uae);
      if (!mmtl_sources.empty()) {
        std::ostringstream s;
        for (std::size_t i = 0; i < mmtl_sources.size(); ++i) s << (i ? "," : "") << mmtl_sources[i];
        raw.set("sources", s.str());
      }
      if (!mmtl_mode.empty()) raw.set("meta_mode", mmtl_mode);
      wmtl::ExperimentConfig cfg = wmtl::ExperimentConfig::from_config(raw);
      print_outcomes(cfg.name(), wmtl::run_mmtl(cfg), cfg.seeds);
    } else if (*sweep_cmd) {
      wmtl::Config raw = load_config(sweep_args, "sweep");
      if (!sweep_source.empty()) raw.set("sources", sweep_source);
      if (!sweep_omegas.empty()) {
        std::ostringstream s;
        for (std::size_t i = 0; i < sweep_omegas.size(); ++i) s << (i ? "," : "") << sweep_omegas[i];
        raw.set("omega_list", s.str());
      }
      wmtl::ExperimentConfig cfg = wmtl::ExperimentConfig::from_config(raw);
      std::vector<wmtl::AggregateRow> rows = wmtl::run_sweep(cfg);
      std::cout << wmtl::render_aggregate_text(rows);
      std::cout << "table written to " << cfg.out_dir << "/sweep.{csv,txt}\n";
    } else if (*ablate_cmd) {
      wmtl::Config raw = load_config(ablate_args, "full_transfer_ablation");
      if (!ablate_source.empty()) raw.set("sources", ablate_source);
      wmtl::ExperimentConfig cfg = wmtl::ExperimentConfig::from_config(raw);
      wmtl::AblationOutcome out = wmtl::run_full_transfer_ablation(cfg);
      if (out.skipped) std::cout << "full-transfer arm skipped: " << out.skip_reason << "\n";
      std::cout << wmtl::render_aggregate_text(wmtl::aggregate(out.runs));
      std::cout << "report written to " << cfg.out_dir << "/ablation_report.txt\n";
    } else if (*eval_cmd) {
      wmtl::AgentCheckpoint ckpt = wmtl::load_checkpoint(eval_ckpt);
      for (const std::string& w : ckpt.load_warnings) std::cerr << "warning: " << w << "\n";
      wmtl::ModelSpec spec = wmtl::spec_from_json(ckpt.metadata.at("model_spec"));
      std::string domain = eval_domain;
      if (domain.empty()) {
        const auto ds = ckpt.metadata.at("domains").get<std::vector<std::string>>();
        if (ds.empty()) throw wmtl::InputError("checkpoint lists no domains; pass --domain");
        domain = ds.front();
      }
      const auto a_max = ckpt.metadata.value("a_max", spec.action_dim);
      wmtl::PaddedEnv env(wmtl::make_env(domain), a_max);
      wmtl::RngStream rng = wmtl::RngStream::root(eval_seed).split("eval");
      double total = 0.0;
      for (std::size_t i = 0; i < eval_episodes; ++i) {
        wmtl::Episode ep = wmtl::detail::run_episode(env, &ckpt.params, &spec, false, 0.0,
                                                     rng.split(i));
        std::cout << "episode " << i << " on " << domain << ": return " << ep.episode_return()
                  << "\n";
        total += ep.episode_return();
        if (i == 0 && !eval_render_dir.empty()) {
          std::filesystem::create_directories(eval_render_dir);
          for (std::size_t t = 0; t < ep.observations.size(); t += 20) {
            wmtl::write_pgm(eval_render_dir + "/frame_" + std::to_string(t) + ".pgm",
                            ep.observations[t]);
          }
        }
      }
      std::cout << "mean return over " << eval_episodes << " episodes: "
                << total / static_cast<double>(eval_episodes) << "\n";
    } else if (*aggregate_cmd) {
      std::vector<wmtl::RunLog> runs =
          wmtl::load_run_dirs(expand_run_dirs(agg_runs, agg_scan));
      std::vector<wmtl::AggregateRow> rows = wmtl::aggregate(runs, agg_final_fraction);
      std::cout << wmtl::render_aggregate_text(rows);
      if (!agg_csv.empty()) {
        std::ofstream f(agg_csv);
        if (!f) throw wmtl::IoError("cannot write '" + agg_csv + "'");
        f << wmtl::render_aggregate_csv(rows);
      }
    } else if (*plot_cmd) {
      std::vector<wmtl::RunLog> runs =
          wmtl::load_run_dirs(expand_run_dirs(plot_runs, plot_scan));
      std::map<std::string, wmtl::PlotSeries> by_method;
      for (const wmtl::RunLog& run : runs) {
        wmtl::PlotSeries& s = by_method[run.method];
        s.label = run.method;
        s.seeds.push_back(run.log);
      }
      std::vector<wmtl::PlotSeries> series;
      for (auto& [label, s] : by_method) series.push_back(std::move(s));
      wmtl::write_svg_plot(plot_out, plot_title, series);
      std::cout << "plot written to " << plot_out << "\n";
    } else if (*inspect_cmd) {
      std::cout << wmtl::inspect_checkpoint(wmtl::load_checkpoint(inspect_path));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
