#include "support.hpp"

#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

using namespace assist;
using namespace assist::testing;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("assist_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string first_line(const std::filesystem::path& file) {
  std::ifstream in(file);
  std::string line;
  std::getline(in, line);
  return line;
}

RunResult fake_run(const ExperimentConfig& c, std::uint64_t seed) {
  RunResult r;
  r.config = c;
  r.seed = seed;
  Metrics m;
  m.epoch = c.epochs;
  m.human_reward = static_cast<double>(seed) + (c.reward_mode == RewardMode::kOursFull ? 10 : 0);
  m.high_force = -static_cast<double>(seed);
  m.success_rate = 0.5;
  r.evaluations.push_back(m);
  return r;
}

}  // namespace

TEST_CASE("config round trip") {
  ExperimentConfig c;
  c.reward_mode = RewardMode::kCoOpt;
  c.seeds = {3, 1, 4};
  c.epochs = 17;
  c.task.task_kind = TaskKind::kDrink;
  c.task.target_tolerance = 0.07;
  c.env.head_sway_amplitude = 0.125;
  c.ppo.lr = 1.0 / 3.0;
  c.anticipation.hidden = 12;
  c.anticipation_enabled = false;
  c.utility.merge_ratio = 0.1;
  c.utility.mcmc.proposal_std = 0.07;
  c.preference = PreferenceWeights::explicit_weights(0.3, 0.2, 0.1);
  const std::string text = c.serialize();
  const ExperimentConfig back = ExperimentConfig::parse(text);
  CHECK(back.serialize() == text);
  CHECK(back.reward_mode == RewardMode::kCoOpt);
  CHECK(back.seeds == std::vector<std::uint64_t>{3, 1, 4});
  CHECK(back.ppo.lr == 1.0 / 3.0);
  CHECK(back.task.task_kind == TaskKind::kDrink);
  CHECK_FALSE(back.anticipation_enabled);
  CHECK(back.preference.hit == 0.3);
  CHECK_FALSE(back.preference.setting_id.has_value());
  const ExperimentConfig def = ExperimentConfig::parse(ExperimentConfig{}.serialize());
  CHECK(def.preference.setting_id == 1);
  CHECK(def.serialize() == ExperimentConfig{}.serialize());
}

TEST_CASE("config parse errors") {
  const auto fails = [](const std::string& text) {
    try {
      ExperimentConfig::parse(text);
    } catch (const RunError& e) {
      return e.category() == ErrorCategory::kConfig;
    }
    return false;
  };
  CHECK(fails("[experiment]\nepochz = 3\n"));
  CHECK(fails("[nonsense]\n"));
  CHECK(fails("epochs = 3\n"));
  CHECK(fails("[experiment]\nepochs = 3\nepochs = 4\n"));
  CHECK(fails("[experiment]\nepochs = three\n"));
  CHECK(fails("[experiment]\nreward_mode = greedy\n"));
  CHECK(fails("[preference]\nsetting = 2\nweights = 1,2,3\n"));
  CHECK(fails("[preference]\nsetting = 9\n"));
  CHECK(fails("[anticipation]\nk_max = 8\n"));
  CHECK(fails("[utility]\nmerge_ratio = 1.5\n"));
  CHECK(fails("[experiment]\nepochs = 0\n"));
  CHECK(fails("[experiment]\nepochs = 5\neval_every = 10\n"));
  const auto ok = ExperimentConfig::parse(
      "# comment\n; another\n[experiment]\nepochs = 20\n[preference]\nsetting = 2\n");
  CHECK(ok.epochs == 20);
  CHECK(ok.preference.setting_id == 2);
  try {
    ExperimentConfig::load("/nonexistent/config.ini");
    CHECK(false);
  } catch (const RunError& e) {
    CHECK(e.category() == ErrorCategory::kIo);
  }
}

TEST_CASE("mode routing flags") {
  ExperimentConfig c;
  c.reward_mode = RewardMode::kMisaligned;
  CHECK_FALSE(c.uses_anticipation());
  CHECK_FALSE(c.uses_utility());
  c.reward_mode = RewardMode::kOursNoUtility;
  CHECK(c.uses_anticipation());
  CHECK_FALSE(c.uses_utility());
  c.reward_mode = RewardMode::kOursFull;
  CHECK(c.uses_anticipation());
  CHECK(c.uses_utility());
  c.anticipation_enabled = false;
  CHECK_FALSE(c.uses_anticipation());
  for (auto m : {RewardMode::kMisaligned, RewardMode::kCoOpt, RewardMode::kOursFull,
                 RewardMode::kOursNoUtility}) {
    CHECK(reward_mode_from_string(to_string(m)) == m);
  }
}

TEST_CASE("evaluate with scripted agents") {
  const Environment env(TaskSpec{}, static_human_params());
  RewardRouting routing;
  routing.truth = PreferenceWeights::from_setting(1);
  const Controller human = zero_controller(2);
  const Metrics zero = evaluate(env, zero_controller(2), human, routing, 5, 1);
  CHECK(zero.success_rate == 0.0);
  CHECK(zero.episodes == 5);
  const Metrics ik = evaluate(env, ik_robot(env), human, routing, 10, 1);
  CHECK(ik.success_rate == 1.0);
  // Evaluation is deterministic.
  const Metrics again = evaluate(env, ik_robot(env), human, routing, 10, 1);
  CHECK(again.human_reward == ik.human_reward);
  CHECK_THROWS_AS(evaluate(env, ik_robot(env), human, routing, 0, 1), std::invalid_argument);
}

TEST_CASE("metrics re-aggregate from episode logs") {
  ExperimentConfig cfg = tiny_config(RewardMode::kOursFull);
  const Environment env = make_environment(cfg);
  const Agents agents = initial_agents(cfg, 4);
  RewardRouting routing;
  routing.mode = RewardMode::kOursFull;
  routing.truth = cfg.preference;
  routing.estimate.w_hat = WeightEstimate(FeatureRow(0.2, 0.3, 0.4));
  routing.estimate.gate = 0.5;
  const Metrics m = evaluate(env, robot_controller(agents, cfg), policy_controller(agents.human),
                             routing, 6, 2, 7);
  REQUIRE(m.logs.size() == 6);
  CHECK(m.epoch == 7);
  CHECK(m.gate == 0.5);
  double h = 0.0, hf = 0.0, s = 0.0;
  for (const auto& l : m.logs) {
    h += l.breakdown.human_total;
    hf += l.features.high_force;
    s += l.success ? 1.0 : 0.0;
    CHECK(l.breakdown.robot_total == l.breakdown.task + 0.5 * l.breakdown.pref_estimated);
  }
  CHECK(m.human_reward == h / 6.0);
  CHECK(m.high_force == hf / 6.0);
  CHECK(m.success_rate == s / 6.0);
  const Metrics re = aggregate_metrics(m.logs, 7, 0.5);
  CHECK(re.human_reward == m.human_reward);
  CHECK(re.task_reward == m.task_reward);
  CHECK(re.robot_reward == m.robot_reward);
}

TEST_CASE("per-step reward routing") {
  ExperimentConfig cfg = tiny_config(RewardMode::kCoOpt);
  cfg.task.horizon = 200;
  const Environment env = make_environment(cfg);
  Rng rng(5);
  Agents agents = initial_agents(cfg, 5);
  RewardRouting routing;
  routing.truth = cfg.preference;
  routing.estimate.w_hat = WeightEstimate(FeatureRow(0.5, 0.5, 0.5));
  routing.estimate.gate = 0.8;
  for (auto mode : {RewardMode::kMisaligned, RewardMode::kCoOpt, RewardMode::kOursFull,
                    RewardMode::kOursNoUtility}) {
    routing.mode = mode;
    for (std::uint64_t ep = 0; ep < 5; ++ep) {
      const auto ro = run_episode(env, ep, policy_controller(agents.robot),
                                  policy_controller(agents.human), routing, &rng);
      REQUIRE(ro.robot.rewards.size() == ro.trajectory.length());
      CHECK(ro.snapshots.human.size() == ro.trajectory.length() + 1);
      for (std::size_t i = 0; i < ro.trajectory.length(); ++i) {
        const Step& st = ro.trajectory.steps[i];
        const double human = ro.human.rewards[i];
        CHECK(human == human_step_reward(st, routing.truth));
        if (mode == RewardMode::kCoOpt) CHECK(ro.robot.rewards[i] == human);
        if (mode == RewardMode::kMisaligned || mode == RewardMode::kOursNoUtility) {
          CHECK(ro.robot.rewards[i] == st.task_reward);
        }
      }
    }
  }
}

TEST_CASE("training runs are reproducible to the byte") {
  const ExperimentConfig cfg = tiny_config(RewardMode::kOursFull);
  const auto a_dir = scratch_dir("repro_a");
  const auto b_dir = scratch_dir("repro_b");
  emit_report(run_training(cfg, 11), a_dir);
  emit_report(run_training(cfg, 11), b_dir);
  for (const char* f : {"metrics.csv", "episodes.csv", "curves.csv", "posterior.csv",
                        "posterior_particles.csv", "config.ini", "summary.txt"}) {
    CHECK_MESSAGE(slurp(a_dir / f) == slurp(b_dir / f), f);
  }
  const auto c_dir = scratch_dir("repro_c");
  emit_report(run_training(cfg, 12), c_dir);
  CHECK(slurp(a_dir / "episodes.csv") != slurp(c_dir / "episodes.csv"));
}

TEST_CASE("module cadence follows e_k") {
  for (auto mode : {RewardMode::kMisaligned, RewardMode::kOursNoUtility, RewardMode::kOursFull}) {
    ExperimentConfig cfg = tiny_config(mode);
    cfg.epochs = 6;
    cfg.e_k = 3;
    std::vector<std::pair<int, std::string>> fired;
    int episodes = 0;
    RunObserver obs;
    obs.on_update = [&](int epoch, const std::string& module) { fired.emplace_back(epoch, module); };
    obs.on_episode = [&](int, const EpisodeRollout&) { ++episodes; };
    const RunResult r = run_training(cfg, 1, &obs);
    CHECK(episodes == cfg.epochs * cfg.episodes_per_epoch);
    CHECK(r.evaluations.size() == 3);
    CHECK(r.curves.size() == 6);
    std::vector<std::pair<int, std::string>> want;
    for (int e : {3, 6}) {
      if (cfg.uses_anticipation()) want.emplace_back(e, "anticipation");
      if (cfg.uses_utility()) want.emplace_back(e, "utility");
    }
    CHECK(fired == want);
    CHECK(r.posterior.size() == (cfg.uses_utility() ? 2u : 0u));
    CHECK(r.agents.anticipation.has_value() == cfg.uses_anticipation());
  }
}

TEST_CASE("utility records and gate") {
  ExperimentConfig cfg = tiny_config(RewardMode::kOursFull);
  cfg.e_k = 2;
  cfg.utility.n_demos = 50;  // more than the buffer holds
  const RunResult r = run_training(cfg, 2);
  REQUIRE(r.posterior.size() == 2);
  for (const auto& p : r.posterior) {
    CHECK_FALSE(p.updated);
    CHECK(p.diagnostic.find("insufficient episodes") != std::string::npos);
    CHECK(p.w_hat == FeatureRow::Zero());
  }
  cfg.utility.n_demos = 3;
  const RunResult ok = run_training(cfg, 2);
  for (const auto& p : ok.posterior) {
    CHECK(p.updated);
    CHECK(p.particles >= cfg.utility.mcmc.min_particles);
    CHECK(p.w_hat.norm() <= 1.0 + kBallTolerance);
  }
  // Gate follows the latest evaluation.
  CHECK(ok.estimate.gate == ok.evaluations.back().success_rate);
}

TEST_CASE("emit_report files re-parse with schema lines") {
  const ExperimentConfig cfg = tiny_config(RewardMode::kOursFull);
  const RunResult r = run_training(cfg, 3);
  const auto dir = scratch_dir("report");
  emit_report(r, dir);
  const std::map<std::string, std::string> schemas{
      {"metrics.csv", kMetricsSchema},     {"episodes.csv", kEpisodesSchema},
      {"curves.csv", kCurvesSchema},       {"posterior.csv", kPosteriorSchema},
      {"posterior_particles.csv", kParticlesSchema}};
  for (const auto& [file, schema] : schemas) {
    CHECK(first_line(dir / file) == std::string("# ") + schema);
    const CsvTable t = read_csv(dir / file);
    CHECK(t.version == schema);
    for (const auto& row : t.rows) CHECK(row.size() == t.header.size());
  }
  const CsvTable metrics = read_csv(dir / "metrics.csv");
  REQUIRE(metrics.rows.size() == r.evaluations.size());
  const int col = metrics.column("human_reward");
  REQUIRE(col >= 0);
  for (std::size_t i = 0; i < r.evaluations.size(); ++i) {
    CHECK(std::stod(metrics.rows[i][static_cast<std::size_t>(col)]) ==
          r.evaluations[i].human_reward);
  }
  const CsvTable episodes = read_csv(dir / "episodes.csv");
  CHECK(episodes.rows.size() == r.evaluations.size() * static_cast<std::size_t>(cfg.eval_episodes));
  CHECK(read_csv(dir / "curves.csv").rows.size() == static_cast<std::size_t>(cfg.epochs));
  CHECK(ExperimentConfig::load(dir / "config.ini").serialize() == cfg.serialize());
  CHECK_THROWS(metrics.column("no_such_column"));
}

TEST_CASE("format_double round trips") {
  Rng rng(1);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng) / (1 + i);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(-2.0) == "-2");
}

TEST_CASE("derive_seed separates streams") {
  CHECK(derive_seed(0, 1) != derive_seed(0, 2));
  CHECK(derive_seed(0, 3, 1, 0) != derive_seed(0, 3, 0, 1));
  CHECK(derive_seed(7, 5, 2) == derive_seed(7, 5, 2));
  CHECK(derive_seed(7, 5, 2) != derive_seed(8, 5, 2));
}

TEST_CASE("agents checkpoint round trip") {
  ExperimentConfig cfg = tiny_config(RewardMode::kOursFull);
  const Agents a = initial_agents(cfg, 9);
  Agents modified = a;
  modified.robot.log_std.array() += 0.25;
  const auto dir = scratch_dir("ckpt");
  save_agents(modified, dir);
  const Agents b = load_agents(cfg, dir, 9);
  CHECK(b.robot.flat() == modified.robot.flat());
  CHECK(b.human.flat() == modified.human.flat());
  REQUIRE(b.anticipation.has_value());
  CHECK(b.anticipation->network().params() == modified.anticipation->network().params());
  ExperimentConfig other = cfg;
  other.reward_mode = RewardMode::kMisaligned;
  try {
    load_agents(other, dir, 9);
    CHECK(false);
  } catch (const RunError& e) {
    CHECK(e.category() == ErrorCategory::kConfig);
  }
  {
    std::ofstream(dir / "robot.ckpt") << "garbage";
  }
  try {
    load_agents(cfg, dir, 9);
    CHECK(false);
  } catch (const RunError& e) {
    CHECK(e.category() == ErrorCategory::kIo);
  }
}

TEST_CASE("sweep rows and failures") {
  ExperimentConfig base;
  base.seeds = {1, 2, 3};
  SUBCASE("one row per value, mean over seeds") {
    const auto rep = sweep(base, SweepAxis::kRewardMode, {"misaligned", "ours_full"}, fake_run);
    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.cells.size() == 6);
    CHECK(rep.rows[0].value == "misaligned");
    CHECK(rep.rows[0].human_reward == 2.0);
    CHECK(rep.rows[1].human_reward == 12.0);
    CHECK(rep.rows[1].high_force == -2.0);
    CHECK(rep.rows[1].runs_ok == 3);
  }
  SUBCASE("single value") {
    const auto rep = sweep(base, SweepAxis::kMergeRatio, {"0.5"}, [](const ExperimentConfig& c,
                                                                   std::uint64_t s) {
      CHECK(c.utility.merge_ratio == 0.5);
      return fake_run(c, s);
    });
    CHECK(rep.rows.size() == 1);
  }
  SUBCASE("a failing cell is recorded and excluded from the mean") {
    const auto rep = sweep(base, SweepAxis::kPreferenceSetting, {"0", "3"},
                           [](const ExperimentConfig& c, std::uint64_t s) {
                             if (s == 2 && c.preference.setting_id == 3) {
                               throw RunError(ErrorCategory::kNumerical, "boom");
                             }
                             return fake_run(c, s);
                           });
    CHECK(rep.rows[0].runs_failed == 0);
    CHECK(rep.rows[1].runs_failed == 1);
    CHECK(rep.rows[1].runs_ok == 2);
    CHECK(rep.rows[1].human_reward == 12.0);  // seeds 1 and 3
    const auto dir = scratch_dir("sweep");
    write_sweep(rep, dir);
    const CsvTable rows = read_csv(dir / "sweep.csv");
    CHECK(rows.version == kSweepSchema);
    CHECK(rows.rows.size() == 2);
    const CsvTable cells = read_csv(dir / "sweep_cells.csv");
    CHECK(cells.rows.size() == 6);
    CHECK(cells.rows[4][static_cast<std::size_t>(cells.column("status"))] == "failed");
    CHECK(cells.rows[4][static_cast<std::size_t>(cells.column("error"))] == "boom");
  }
  SUBCASE("invalid values are rejected before any run") {
    int runs = 0;
    const RunFn counting = [&](const ExperimentConfig& c, std::uint64_t s) {
      ++runs;
      return fake_run(c, s);
    };
    CHECK_THROWS_AS(sweep(base, SweepAxis::kPreferenceSetting, {"1", "7"}, counting), RunError);
    CHECK_THROWS_AS(sweep(base, SweepAxis::kMergeRatio, {"0.2", "x"}, counting), RunError);
    CHECK_THROWS_AS(sweep(base, SweepAxis::kModuleAblation, {"most"}, counting), RunError);
    CHECK_THROWS_AS(sweep(base, SweepAxis::kRewardMode, {}, counting), RunError);
    CHECK(runs == 0);
  }
  const auto abl = apply_axis(base, SweepAxis::kModuleAblation, "no_anticipation");
  CHECK(abl.reward_mode == RewardMode::kOursFull);
  CHECK_FALSE(abl.anticipation_enabled);
  CHECK(sweep_axis_from_string(to_string(SweepAxis::kMergeRatio)) == SweepAxis::kMergeRatio);
}

TEST_CASE("human and robot joint information") {
  const Environment env(TaskSpec{});
  const EnvState s = env.reset(3).state;
  const Eigen::VectorXd h = human_joint_info(s);
  REQUIRE(h.size() == 4);
  CHECK(h[0] == s.human_joints[0]);
  CHECK(h[1] == s.human_joints[1]);
  CHECK(h.tail<2>() == s.mouth_pos);
  const Eigen::VectorXd r = robot_joint_info(s);
  REQUIRE(r.size() == env.robot_joint_dim() + 2);
  CHECK(r.head(env.robot_joint_dim()) == s.robot_joints);
  CHECK(r.tail<2>() == s.tool_tip);
}

TEST_CASE("true weights never reach the robot side") {
  for (auto mode : {RewardMode::kMisaligned, RewardMode::kOursNoUtility, RewardMode::kOursFull}) {
    ExperimentConfig cfg = tiny_config(mode);
    cfg.task.horizon = 120;
    const Environment env = make_environment(cfg);
    const Agents agents = initial_agents(cfg, 6);
    RewardRouting a;
    a.mode = mode;
    a.truth = PreferenceWeights::from_setting(1);
    a.estimate.w_hat = WeightEstimate(FeatureRow(0.1, 0.4, 0.2));
    a.estimate.gate = 0.6;
    RewardRouting b = a;
    b.truth = PreferenceWeights::explicit_weights(123.0, 0.0, 7.5);
    const Controller robot = robot_controller(agents, cfg);
    for (std::uint64_t ep = 0; ep < 4; ++ep) {
      Rng ra(ep), rb(ep);
      const auto x = run_episode(env, ep, robot, policy_controller(agents.human), a, &ra);
      const auto y = run_episode(env, ep, robot, policy_controller(agents.human), b, &rb);
      CHECK(x.robot.rewards == y.robot.rewards);
      CHECK(x.robot.inputs == y.robot.inputs);
      const FeatureVector f = episode_features(x.trajectory);
      if (f.hit != 0.0 || f.high_force != 0.0) CHECK(x.human.rewards != y.human.rewards);
    }
  }
}

TEST_CASE("robot input carries predicted displacement from the current frame") {
  ExperimentConfig cfg = tiny_config(RewardMode::kOursNoUtility);
  const Agents agents = initial_agents(cfg, 8);
  REQUIRE(agents.anticipation.has_value());
  Agents moved = agents;
  Rng rng(3);
  std::normal_distribution<double> n(0.0, 0.2);
  for (Eigen::Index i = 0; i < moved.anticipation->network().num_params(); ++i) {
    moved.anticipation->network().params()[i] += n(rng);
  }
  const Environment env = make_environment(cfg);
  const auto reset = env.reset(1);
  JointSnapshotEpisode history;
  history.human.push_back(human_joint_info(reset.state));
  history.robot.push_back(robot_joint_info(reset.state));
  const AnticipationModel& m = *moved.anticipation;
  const Controller c = policy_controller(moved.robot, &m);
  const Eigen::VectorXd in = c.input(reset.obs_r, history, 0);
  Eigen::MatrixXd pred = m.predict(make_window(history, 0, m.config().k_in));
  pred.rowwise() -= history.human[0].transpose();
  CHECK(in == augment_observation(reset.obs_r, pred, m.config().k_max));
  // A fresh model predicts zeros, so the block holds minus the current frame.
  const Controller fresh = policy_controller(agents.robot, &*agents.anticipation);
  const Eigen::VectorXd f = fresh.input(reset.obs_r, history, 0);
  CHECK(f.segment(reset.obs_r.size(), 4) == -history.human[0]);
}
