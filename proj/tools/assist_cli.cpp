// Command-line front end: train, evaluate, sweep, inspect-posterior.

#include "assist/harness.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>

namespace {

using namespace assist;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config file (defaults if omitted)");
  cmd->add_option("--seed", c.seed, "run seed; overrides the config seed list");
  cmd->add_option("--out-dir", c.out_dir, "output directory")->required();
}

ExperimentConfig load_config(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(c.config);
  if (c.seed) cfg.seeds = {*c.seed};
  cfg.validate();
  return cfg;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_train(const Common& c) {
  const ExperimentConfig cfg = load_config(c);
  const std::filesystem::path root(c.out_dir);
  for (const auto seed : cfg.seeds) {
    const auto dir = cfg.seeds.size() == 1 ? root : root / ("seed_" + std::to_string(seed));
    const auto t0 = std::chrono::steady_clock::now();
    RunResult r = run_training(cfg, seed, nullptr, dir);
    emit_report(r, dir);
    save_agents(r.agents, dir);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const Metrics& m = r.evaluations.back();
    std::cerr << "seed " << seed << ": human_reward " << m.human_reward << " high_force "
              << m.high_force << " success " << m.success_rate << " (" << secs << " s) -> "
              << dir.string() << "\n";
  }
  return 0;
}

UtilityEstimate estimate_from_dir(const std::filesystem::path& dir) {
  UtilityEstimate est;
  const auto file = dir / "posterior.csv";
  if (!std::filesystem::exists(file)) return est;
  const CsvTable t = read_csv(file);
  if (t.rows.empty()) return est;
  const auto& row = t.rows.back();
  FeatureRow w(std::stod(row[static_cast<std::size_t>(t.column("w_hat_hit"))]),
               std::stod(row[static_cast<std::size_t>(t.column("w_hat_force"))]),
               std::stod(row[static_cast<std::size_t>(t.column("w_hat_high_force"))]));
  est.w_hat = WeightEstimate::clamped_to_ball(w);
  est.gate = std::stod(row[static_cast<std::size_t>(t.column("gate"))]);
  est.epoch = std::stoi(row[static_cast<std::size_t>(t.column("epoch"))]);
  return est;
}

int cmd_evaluate(const Common& c, int episodes) {
  const ExperimentConfig cfg = load_config(c);
  const std::filesystem::path dir(c.out_dir);
  const std::uint64_t seed = cfg.seeds.front();
  const Agents agents = load_agents(cfg, dir, seed);
  const Environment env = make_environment(cfg);
  RewardRouting routing;
  routing.mode = cfg.reward_mode;
  routing.truth = cfg.preference;
  routing.estimate = estimate_from_dir(dir);
  const Metrics m = evaluate(env, robot_controller(agents, cfg), policy_controller(agents.human),
                             routing, episodes > 0 ? episodes : cfg.eval_episodes, seed);
  std::filesystem::create_directories(dir);
  write_metrics_csv({m}, dir / "evaluate.csv");
  std::cout << "human_reward " << format_double(m.human_reward) << "\n"
            << "task_reward " << format_double(m.task_reward) << "\n"
            << "hit " << format_double(m.hit) << "\n"
            << "force " << format_double(m.force) << "\n"
            << "high_force " << format_double(m.high_force) << "\n"
            << "success_rate " << format_double(m.success_rate) << "\n"
            << "gate_refresh " << format_double(gate_from_success_rate(
                                       m.success_rate, cfg.utility.gate_threshold))
            << "\n";
  return 0;
}

int cmd_sweep(const Common& c, const std::string& axis, const std::string& values) {
  const ExperimentConfig cfg = load_config(c);
  const SweepReport report = sweep(cfg, sweep_axis_from_string(axis), split(values));
  write_sweep(report, c.out_dir);
  int failed = 0;
  for (const auto& row : report.rows) {
    std::cout << axis << "=" << row.value << " ok=" << row.runs_ok
              << " failed=" << row.runs_failed;
    if (row.runs_ok > 0) {
      std::cout << " human_reward=" << format_double(row.human_reward)
                << " high_force=" << format_double(row.high_force)
                << " success_rate=" << format_double(row.success_rate);
    }
    std::cout << "\n";
    failed += row.runs_failed;
  }
  if (failed > 0) std::cerr << failed << " sweep cell(s) failed; see sweep_cells.csv\n";
  return 0;
}

int cmd_inspect(const Common& c) {
  const std::filesystem::path dir(c.out_dir);
  const CsvTable post = read_csv(dir / "posterior.csv");
  std::optional<FeatureRow> truth_dir;
  if (std::filesystem::exists(dir / "config.ini")) {
    const ExperimentConfig cfg = ExperimentConfig::load(dir / "config.ini");
    const FeatureRow w = cfg.preference.as_row();
    if (w.norm() > 0.0) truth_dir = w.normalized();
  }
  std::cout << "# " << post.version << "\n";
  std::cout << "epoch  w_hat(hit,force,high_force)  gate  acceptance  ess";
  if (truth_dir) std::cout << "  cosine_to_truth";
  std::cout << "\n";
  auto col = [&](const std::vector<std::string>& row, const char* name) {
    return row[static_cast<std::size_t>(post.column(name))];
  };
  for (const auto& row : post.rows) {
    std::cout << col(row, "epoch") << "  (" << col(row, "w_hat_hit") << ", "
              << col(row, "w_hat_force") << ", " << col(row, "w_hat_high_force") << ")  "
              << col(row, "gate") << "  " << col(row, "acceptance_rate") << "  "
              << col(row, "effective_samples");
    if (truth_dir) {
      const Eigen::VectorXd w = Eigen::Vector3d(std::stod(col(row, "w_hat_hit")),
                                                std::stod(col(row, "w_hat_force")),
                                                std::stod(col(row, "w_hat_high_force")));
      std::cout << "  " << format_double(cosine_similarity(w, Eigen::VectorXd(*truth_dir)));
    }
    if (!col(row, "diagnostic").empty()) std::cout << "  [" << col(row, "diagnostic") << "]";
    std::cout << "\n";
  }
  const auto pfile = dir / "posterior_particles.csv";
  if (std::filesystem::exists(pfile)) {
    const CsvTable parts = read_csv(pfile);
    if (!parts.rows.empty()) {
      Eigen::MatrixXd x(static_cast<Eigen::Index>(parts.rows.size()), 3);
      for (std::size_t i = 0; i < parts.rows.size(); ++i) {
        for (int j = 0; j < 3; ++j) {
          x(static_cast<Eigen::Index>(i), j) = std::stod(parts.rows[i][static_cast<std::size_t>(j)]);
        }
      }
      const Eigen::RowVectorXd mean = x.colwise().mean();
      const Eigen::RowVectorXd sd =
          ((x.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(x.rows()))
              .sqrt();
      std::cout << "last cycle particles: " << x.rows() << "\n";
      const char* names[3] = {"hit", "force", "high_force"};
      for (int j = 0; j < 3; ++j) {
        std::cout << "  " << names[j] << ": mean " << format_double(mean[j]) << " sd "
                  << format_double(sd[j]) << "\n";
      }
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-agent assistive training harness"};
  app.require_subcommand(1);

  Common train_opts, eval_opts, sweep_opts, inspect_opts;
  auto* train = app.add_subcommand("train", "run training and write run artifacts");
  add_common(train, train_opts);

  int episodes = 0;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "evaluate checkpoints in --out-dir");
  add_common(evaluate_cmd, eval_opts);
  evaluate_cmd->add_option("--episodes", episodes, "episode count (config value if omitted)");

  std::string axis;
  std::string values;
  auto* sweep_cmd = app.add_subcommand("sweep", "one run per axis value and seed");
  add_common(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--axis", axis,
                        "preference_setting | merge_ratio | reward_mode | module_ablation")
      ->required();
  sweep_cmd->add_option("--values", values, "comma-separated axis values")->required();

  auto* inspect = app.add_subcommand("inspect-posterior", "summarize posterior snapshots");
  add_common(inspect, inspect_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(train_opts);
    if (*evaluate_cmd) return cmd_evaluate(eval_opts, episodes);
    if (*sweep_cmd) return cmd_sweep(sweep_opts, axis, values);
    if (*inspect) return cmd_inspect(inspect_opts);
  } catch (const RunError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.category());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorCategory::kIo);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorCategory::kConfig);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorCategory::kInternal);
  }
  return 0;
}
