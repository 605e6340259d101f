#include "assist/harness.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace assist {

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& file, const std::string& schema,
            const std::vector<std::string>& header)
      : file_(file), out_(file) {
    if (!out_) throw RunError(ErrorCategory::kIo, "cannot write " + file.string());
    out_ << "# " << schema << "\n";
    row(header);
  }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << csv_field(fields[i]);
    }
    out_ << '\n';
  }

  ~CsvWriter() noexcept(false) {
    out_.flush();
    if (!out_ && std::uncaught_exceptions() == 0) {
      throw RunError(ErrorCategory::kIo, "write failed for " + file_.string());
    }
  }

 private:
  std::filesystem::path file_;
  std::ofstream out_;
};

std::string fd(double v) { return format_double(v); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file);
  if (!out) throw RunError(ErrorCategory::kIo, "cannot write " + file.string());
  out << text;
  out.flush();
  if (!out) throw RunError(ErrorCategory::kIo, "write failed for " + file.string());
}

std::vector<std::string> ppo_columns(const std::string& who) {
  return {who + "_policy_loss", who + "_value_loss", who + "_entropy", who + "_approx_kl",
          who + "_clip_fraction"};
}

void append_ppo(std::vector<std::string>& row, const PpoStats& s) {
  row.push_back(fd(s.policy_loss));
  row.push_back(fd(s.value_loss));
  row.push_back(fd(s.entropy));
  row.push_back(fd(s.approx_kl));
  row.push_back(fd(s.clip_fraction));
}

}  // namespace

void write_metrics_csv(const std::vector<Metrics>& metrics, const std::filesystem::path& file) {
  CsvWriter w(file, kMetricsSchema,
              {"epoch", "episodes", "human_reward", "task_reward", "robot_reward", "hit",
               "force", "high_force", "success_rate", "gate"});
  for (const auto& m : metrics) {
    w.row({std::to_string(m.epoch), std::to_string(m.episodes), fd(m.human_reward),
           fd(m.task_reward), fd(m.robot_reward), fd(m.hit), fd(m.force), fd(m.high_force),
           fd(m.success_rate), fd(m.gate)});
  }
}

void emit_report(const RunResult& result, const std::filesystem::path& dir) {
  if (result.evaluations.empty()) {
    throw std::invalid_argument("emit_report needs at least one evaluation");
  }
  try {
    std::filesystem::create_directories(dir);
  } catch (const std::exception& e) {
    throw RunError(ErrorCategory::kIo, e.what());
  }

  write_metrics_csv(result.evaluations, dir / "metrics.csv");

  {
    CsvWriter w(dir / "episodes.csv", kEpisodesSchema,
                {"epoch", "episode", "task", "pref_true", "pref_estimated", "gate",
                 "human_total", "robot_total", "hit", "force", "high_force", "success",
                 "length"});
    for (const auto& m : result.evaluations) {
      for (std::size_t i = 0; i < m.logs.size(); ++i) {
        const auto& l = m.logs[i];
        w.row({std::to_string(m.epoch), std::to_string(i), fd(l.breakdown.task),
               fd(l.breakdown.pref_true), fd(l.breakdown.pref_estimated), fd(l.breakdown.gate),
               fd(l.breakdown.human_total), fd(l.breakdown.robot_total), fd(l.features.hit),
               fd(l.features.force), fd(l.features.high_force), l.success ? "1" : "0",
               std::to_string(l.length)});
      }
    }
  }

  {
    std::vector<std::string> header{"epoch", "robot_return", "human_return", "task_return",
                                    "success_rate"};
    for (const auto& c : ppo_columns("robot")) header.push_back(c);
    for (const auto& c : ppo_columns("human")) header.push_back(c);
    header.push_back("anticipation_loss");
    header.push_back("gate");
    CsvWriter w(dir / "curves.csv", kCurvesSchema, header);
    for (const auto& c : result.curves) {
      std::vector<std::string> row{std::to_string(c.epoch), fd(c.robot_return),
                                   fd(c.human_return), fd(c.task_return), fd(c.success_rate)};
      append_ppo(row, c.robot_ppo);
      append_ppo(row, c.human_ppo);
      row.push_back(c.anticipation_loss ? fd(*c.anticipation_loss) : "");
      row.push_back(fd(c.gate));
      w.row(row);
    }
  }

  {
    CsvWriter w(dir / "posterior.csv", kPosteriorSchema,
                {"epoch", "updated", "chain_mean_hit", "chain_mean_force",
                 "chain_mean_high_force", "w_hat_hit", "w_hat_force", "w_hat_high_force",
                 "gate", "acceptance_rate", "effective_samples", "particles", "diagnostic"});
    for (const auto& p : result.posterior) {
      w.row({std::to_string(p.epoch), p.updated ? "1" : "0", fd(p.chain_mean[0]),
             fd(p.chain_mean[1]), fd(p.chain_mean[2]), fd(p.w_hat[0]), fd(p.w_hat[1]),
             fd(p.w_hat[2]), fd(p.gate), fd(p.acceptance_rate), fd(p.effective_samples),
             std::to_string(p.particles), p.diagnostic});
    }
  }

  {
    CsvWriter w(dir / "posterior_particles.csv", kParticlesSchema,
                {"hit", "force", "high_force"});
    for (Eigen::Index i = 0; i < result.last_particles.rows(); ++i) {
      w.row({fd(result.last_particles(i, 0)), fd(result.last_particles(i, 1)),
             fd(result.last_particles(i, 2))});
    }
  }

  write_text(dir / "config.ini", result.config.serialize());

  std::ostringstream s;
  const Metrics& last = result.evaluations.back();
  s << "run summary\n";
  s << "env: " << result.env_spec << "\n";
  s << "seed: " << result.seed << "\n";
  s << "reward_mode: " << to_string(result.config.reward_mode) << "\n";
  s << "epochs: " << result.curves.size() << "\n";
  s << "evaluations: " << result.evaluations.size() << "\n";
  s << "final evaluation (epoch " << last.epoch << ", " << last.episodes << " episodes)\n";
  s << "  human_reward: " << fd(last.human_reward) << "\n";
  s << "  task_reward: " << fd(last.task_reward) << "\n";
  s << "  hit: " << fd(last.hit) << "\n";
  s << "  force: " << fd(last.force) << "\n";
  s << "  high_force: " << fd(last.high_force) << "\n";
  s << "  success_rate: " << fd(last.success_rate) << "\n";
  if (result.config.uses_utility()) {
    const FeatureRow& w = result.estimate.w_hat.w();
    s << "utility estimate: " << fd(w[0]) << "," << fd(w[1]) << "," << fd(w[2])
      << " gate=" << fd(result.estimate.gate) << " cycles=" << result.posterior.size() << "\n";
  }
  s << "schemas: " << kMetricsSchema << " " << kEpisodesSchema << " " << kCurvesSchema << " "
    << kPosteriorSchema << " " << kParticlesSchema << "\n";
  write_text(dir / "summary.txt", s.str());
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  throw std::out_of_range("no column " + name);
}

CsvTable read_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw RunError(ErrorCategory::kIo, "cannot read " + file.string());
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') {
      if (t.version.empty()) t.version = line.size() > 2 ? line.substr(2) : "";
      continue;
    }
    if (!have_header) {
      t.header = split_csv_line(line);
      have_header = true;
    } else {
      t.rows.push_back(split_csv_line(line));
    }
  }
  return t;
}

SweepAxis sweep_axis_from_string(const std::string& name) {
  if (name == "preference_setting") return SweepAxis::kPreferenceSetting;
  if (name == "merge_ratio") return SweepAxis::kMergeRatio;
  if (name == "reward_mode") return SweepAxis::kRewardMode;
  if (name == "module_ablation") return SweepAxis::kModuleAblation;
  throw RunError(ErrorCategory::kConfig, "unknown sweep axis '" + name + "'");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kPreferenceSetting:
      return "preference_setting";
    case SweepAxis::kMergeRatio:
      return "merge_ratio";
    case SweepAxis::kRewardMode:
      return "reward_mode";
    case SweepAxis::kModuleAblation:
      return "module_ablation";
  }
  return "unknown";
}

ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis axis,
                            const std::string& value) {
  ExperimentConfig c = base;
  switch (axis) {
    case SweepAxis::kPreferenceSetting: {
      int id = -1;
      const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), id);
      if (ec != std::errc() || ptr != value.data() + value.size() || id < 0 ||
          id >= kNumPreferenceSettings) {
        throw RunError(ErrorCategory::kConfig, "invalid preference setting '" + value + "'");
      }
      c.preference = PreferenceWeights::from_setting(id);
      break;
    }
    case SweepAxis::kMergeRatio: {
      double r = 0.0;
      std::istringstream is(value);
      if (!(is >> r) || !is.eof() || !(r >= 0.0 && r <= 1.0)) {
        throw RunError(ErrorCategory::kConfig, "invalid merge ratio '" + value + "'");
      }
      c.utility.merge_ratio = r;
      break;
    }
    case SweepAxis::kRewardMode:
      c.reward_mode = reward_mode_from_string(value);
      break;
    case SweepAxis::kModuleAblation:
      if (value == "full") {
        c.reward_mode = RewardMode::kOursFull;
        c.anticipation_enabled = true;
      } else if (value == "no_utility") {
        c.reward_mode = RewardMode::kOursNoUtility;
        c.anticipation_enabled = true;
      } else if (value == "no_anticipation") {
        c.reward_mode = RewardMode::kOursFull;
        c.anticipation_enabled = false;
      } else if (value == "none") {
        c.reward_mode = RewardMode::kMisaligned;
      } else {
        throw RunError(ErrorCategory::kConfig, "unknown module ablation '" + value + "'");
      }
      break;
  }
  c.validate();
  return c;
}

SweepReport sweep(const ExperimentConfig& base, SweepAxis axis,
                  const std::vector<std::string>& values, const RunFn& run) {
  if (values.empty()) throw RunError(ErrorCategory::kConfig, "sweep needs axis values");
  // Validate every value before spending compute.
  std::vector<ExperimentConfig> configs;
  for (const auto& v : values) configs.push_back(apply_axis(base, axis, v));

  const RunFn runner = run ? run : [](const ExperimentConfig& c, std::uint64_t s) {
    return run_training(c, s);
  };
  SweepReport report;
  report.axis = axis;
  for (std::size_t i = 0; i < values.size(); ++i) {
    SweepRow row;
    row.value = values[i];
    for (const auto seed : configs[i].seeds) {
      SweepCell cell;
      cell.value = values[i];
      cell.seed = seed;
      try {
        RunResult r = runner(configs[i], seed);
        if (r.evaluations.empty()) throw std::runtime_error("run produced no evaluation");
        cell.final_metrics = std::move(r.evaluations.back());
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      if (cell.ok) {
        ++row.runs_ok;
        row.human_reward += cell.final_metrics.human_reward;
        row.hit += cell.final_metrics.hit;
        row.force += cell.final_metrics.force;
        row.high_force += cell.final_metrics.high_force;
        row.success_rate += cell.final_metrics.success_rate;
      } else {
        ++row.runs_failed;
      }
      report.cells.push_back(std::move(cell));
    }
    if (row.runs_ok > 0) {
      const double n = row.runs_ok;
      row.human_reward /= n;
      row.hit /= n;
      row.force /= n;
      row.high_force /= n;
      row.success_rate /= n;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

void write_sweep(const SweepReport& report, const std::filesystem::path& dir) {
  try {
    std::filesystem::create_directories(dir);
  } catch (const std::exception& e) {
    throw RunError(ErrorCategory::kIo, e.what());
  }
  const std::string axis = to_string(report.axis);
  {
    CsvWriter w(dir / "sweep.csv", kSweepSchema,
                {axis, "runs_ok", "runs_failed", "human_reward", "hit", "force", "high_force",
                 "success_rate"});
    for (const auto& r : report.rows) {
      if (r.runs_ok == 0) {
        w.row({r.value, "0", std::to_string(r.runs_failed), "", "", "", "", ""});
        continue;
      }
      w.row({r.value, std::to_string(r.runs_ok), std::to_string(r.runs_failed),
             fd(r.human_reward), fd(r.hit), fd(r.force), fd(r.high_force),
             fd(r.success_rate)});
    }
  }
  CsvWriter w(dir / "sweep_cells.csv", kSweepSchema,
              {axis, "seed", "status", "human_reward", "hit", "force", "high_force",
               "success_rate", "error"});
  for (const auto& c : report.cells) {
    if (!c.ok) {
      w.row({c.value, std::to_string(c.seed), "failed", "", "", "", "", "", c.error});
      continue;
    }
    const Metrics& m = c.final_metrics;
    w.row({c.value, std::to_string(c.seed), "ok", fd(m.human_reward), fd(m.hit), fd(m.force),
           fd(m.high_force), fd(m.success_rate), ""});
  }
}

}  // namespace assist
