#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "wmtl/config.hpp"
#include "wmtl/errors.hpp"

namespace wmtl {

struct EpisodeRecord {
  std::uint64_t env_steps = 0;
  std::string domain;
  double episode_return = 0.0;
  double wall_ms = 0.0;
};

struct UpdateRecord {
  std::uint64_t env_steps = 0;
  double loss = 0.0;
  double recon = 0.0;
  double reward_mse = 0.0;
  double kl = 0.0;
  double actor_loss = 0.0;
  double value_loss = 0.0;
};

/// Everything a run reports: per-episode returns and per-update losses.
/// Wall time is informational and excluded from equality.
struct MetricLog {
  std::vector<EpisodeRecord> episodes;
  std::vector<UpdateRecord> updates;

  bool same_results(const MetricLog& other) const {
    if (episodes.size() != other.episodes.size() || updates.size() != other.updates.size()) {
      return false;
    }
    for (std::size_t i = 0; i < episodes.size(); ++i) {
      const auto& a = episodes[i];
      const auto& b = other.episodes[i];
      if (a.env_steps != b.env_steps || a.domain != b.domain ||
          a.episode_return != b.episode_return) {
        return false;
      }
    }
    for (std::size_t i = 0; i < updates.size(); ++i) {
      const auto& a = updates[i];
      const auto& b = other.updates[i];
      if (a.env_steps != b.env_steps || a.loss != b.loss || a.actor_loss != b.actor_loss ||
          a.value_loss != b.value_loss) {
        return false;
      }
    }
    return true;
  }
};

namespace detail {

inline std::string csv_num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

inline void write_metrics_csv(const std::string& path, const MetricLog& log) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "env_steps,domain,episode_return,wall_ms\n";
  for (const EpisodeRecord& r : log.episodes) {
    f << r.env_steps << ',' << r.domain << ',' << detail::csv_num(r.episode_return) << ','
      << detail::csv_num(r.wall_ms) << '\n';
  }
  if (!f) throw IoError("write failed for '" + path + "'");
}

inline void write_losses_csv(const std::string& path, const MetricLog& log) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "env_steps,loss,recon,reward_mse,kl,actor_loss,value_loss\n";
  for (const UpdateRecord& r : log.updates) {
    f << r.env_steps << ',' << detail::csv_num(r.loss) << ',' << detail::csv_num(r.recon) << ','
      << detail::csv_num(r.reward_mse) << ',' << detail::csv_num(r.kl) << ','
      << detail::csv_num(r.actor_loss) << ',' << detail::csv_num(r.value_loss) << '\n';
  }
  if (!f) throw IoError("write failed for '" + path + "'");
}

inline MetricLog read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  MetricLog log;
  std::string line;
  if (!std::getline(f, line)) throw FormatError("'" + path + "': empty metrics file");
  if (line.rfind("env_steps,domain,episode_return", 0) != 0) {
    throw FormatError("'" + path + "': unexpected metrics header: " + line);
  }
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::istringstream is(line);
    std::string steps, domain, ret, wall;
    if (!std::getline(is, steps, ',') || !std::getline(is, domain, ',') ||
        !std::getline(is, ret, ',')) {
      throw FormatError("'" + path + "': bad row at line " + std::to_string(lineno));
    }
    std::getline(is, wall, ',');
    EpisodeRecord r;
    try {
      r.env_steps = std::stoull(steps);
      r.episode_return = std::stod(ret);
      r.wall_ms = wall.empty() ? 0.0 : std::stod(wall);
    } catch (const std::exception&) {
      throw FormatError("'" + path + "': bad number at line " + std::to_string(lineno));
    }
    r.domain = domain;
    log.episodes.push_back(std::move(r));
  }
  return log;
}

/// One run's worth of episode data plus its experiment identity.
struct RunLog {
  std::string method;
  std::string task;
  std::uint64_t seed = 0;
  MetricLog log;
};

/// Aggregated statistics for one (method, task) cell: pooled over every
/// episode of every seed, plus the across-seed spread of per-seed means.
/// All standard deviations are population standard deviations.
struct AggregateRow {
  std::string method;
  std::string task;
  std::size_t seeds = 0;
  std::size_t episodes = 0;
  double overall_mean = 0.0;
  double overall_std = 0.0;
  double across_seed_std = 0.0;
  double final_mean = 0.0;
  double final_std = 0.0;
  double final_across_seed_std = 0.0;
  bool best_overall = false;
  bool best_final = false;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(var)};
}

}  // namespace detail

/// Fold runs into per-(method, task) rows. "Final" statistics cover the
/// last 10% of each run's env steps. The best mean per task is marked.
inline std::vector<AggregateRow> aggregate(const std::vector<RunLog>& runs,
                                           double final_fraction = 0.1) {
  if (runs.empty()) throw InputError("aggregate: no runs given");
  std::map<std::pair<std::string, std::string>, std::vector<const RunLog*>> cells;
  for (const RunLog& run : runs) cells[{run.method, run.task}].push_back(&run);

  std::vector<AggregateRow> rows;
  for (const auto& [key, cell] : cells) {
    AggregateRow row;
    row.method = key.first;
    row.task = key.second;
    row.seeds = cell.size();
    std::vector<double> all, final_all, seed_means, final_seed_means;
    for (const RunLog* run : cell) {
      std::vector<double> mine, final_mine;
      std::uint64_t max_steps = 0;
      for (const EpisodeRecord& e : run->log.episodes) max_steps = std::max(max_steps, e.env_steps);
      const double cutoff = static_cast<double>(max_steps) * (1.0 - final_fraction);
      for (const EpisodeRecord& e : run->log.episodes) {
        mine.push_back(e.episode_return);
        if (static_cast<double>(e.env_steps) > cutoff) final_mine.push_back(e.episode_return);
      }
      all.insert(all.end(), mine.begin(), mine.end());
      final_all.insert(final_all.end(), final_mine.begin(), final_mine.end());
      if (!mine.empty()) seed_means.push_back(detail::mean_std(mine).first);
      if (!final_mine.empty()) final_seed_means.push_back(detail::mean_std(final_mine).first);
    }
    row.episodes = all.size();
    std::tie(row.overall_mean, row.overall_std) = detail::mean_std(all);
    row.across_seed_std = detail::mean_std(seed_means).second;
    std::tie(row.final_mean, row.final_std) = detail::mean_std(final_all);
    row.final_across_seed_std = detail::mean_std(final_seed_means).second;
    rows.push_back(std::move(row));
  }

  std::map<std::string, AggregateRow*> best_overall, best_final;
  for (AggregateRow& row : rows) {
    auto& bo = best_overall[row.task];
    if (!bo || row.overall_mean > bo->overall_mean) bo = &row;
    auto& bf = best_final[row.task];
    if (!bf || row.final_mean > bf->final_mean) bf = &row;
  }
  for (auto& [task, row] : best_overall) row->best_overall = true;
  for (auto& [task, row] : best_final) row->best_final = true;
  return rows;
}

inline std::string render_aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::ostringstream os;
  os << "method,task,seeds,episodes,overall_mean,overall_std,across_seed_std,"
        "final_mean,final_std,final_across_seed_std,best_overall,best_final\n";
  for (const AggregateRow& r : rows) {
    os << r.method << ',' << r.task << ',' << r.seeds << ',' << r.episodes << ','
       << detail::csv_num(r.overall_mean) << ',' << detail::csv_num(r.overall_std) << ','
       << detail::csv_num(r.across_seed_std) << ',' << detail::csv_num(r.final_mean) << ','
       << detail::csv_num(r.final_std) << ',' << detail::csv_num(r.final_across_seed_std) << ','
       << (r.best_overall ? 1 : 0) << ',' << (r.best_final ? 1 : 0) << '\n';
  }
  return os.str();
}

inline std::string render_aggregate_text(const std::vector<AggregateRow>& rows) {
  std::ostringstream os;
  os << "episode returns, mean +- population std (pooled over all episodes of all seeds);\n"
        "'final' covers the last 10% of env steps; * marks the best mean per task\n\n";
  os << std::left << std::setw(18) << "method" << std::setw(16) << "task" << std::right
     << std::setw(8) << "seeds" << std::setw(24) << "overall" << std::setw(24) << "final" << "\n";
  for (const AggregateRow& r : rows) {
    std::ostringstream overall, fin;
    overall << std::fixed << std::setprecision(2) << r.overall_mean << " +- " << r.overall_std
            << (r.best_overall ? " *" : "  ");
    fin << std::fixed << std::setprecision(2) << r.final_mean << " +- " << r.final_std
        << (r.best_final ? " *" : "  ");
    os << std::left << std::setw(18) << r.method << std::setw(16) << r.task << std::right
       << std::setw(8) << r.seeds << std::setw(24) << overall.str() << std::setw(24) << fin.str()
       << "\n";
  }
  return os.str();
}

}  // namespace wmtl
