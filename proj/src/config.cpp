#include "assist/harness.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace assist {

namespace {

[[noreturn]] void config_error(const std::string& msg) {
  throw RunError(ErrorCategory::kConfig, msg);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& text, const std::string& key) {
  T v{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || text.empty()) {
    config_error("invalid value '" + text + "' for " + key);
  }
  return v;
}

bool parse_bool(const std::string& text, const std::string& key) {
  if (text == "true") return true;
  if (text == "false") return false;
  config_error("invalid boolean '" + text + "' for " + key);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  // Empty result means the key is omitted from the serialized form.
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class T>
Field number(std::string section, std::string key, T& (*ref)(ExperimentConfig&)) {
  const std::string full = section + "." + key;
  return {std::move(section), std::move(key),
          [ref, full](ExperimentConfig& c, const std::string& v) {
            ref(c) = parse_number<T>(v, full);
          },
          [ref](const ExperimentConfig& c) {
            auto copy = c;
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(ref(copy));
            } else {
              return std::to_string(ref(copy));
            }
          }};
}

const std::vector<Field>& schema() {
  using C = ExperimentConfig;
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    f.push_back({"experiment", "reward_mode",
                 [](C& c, const std::string& v) { c.reward_mode = reward_mode_from_string(v); },
                 [](const C& c) { return to_string(c.reward_mode); }});
    f.push_back({"experiment", "seeds",
                 [](C& c, const std::string& v) {
                   c.seeds.clear();
                   for (const auto& s : split_list(v)) {
                     c.seeds.push_back(parse_number<std::uint64_t>(s, "experiment.seeds"));
                   }
                 },
                 [](const C& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.seeds.size(); ++i) {
                     if (i) out += ",";
                     out += std::to_string(c.seeds[i]);
                   }
                   return out;
                 }});
    f.push_back(number<int>("experiment", "epochs", [](C& c) -> int& { return c.epochs; }));
    f.push_back(number<int>("experiment", "episodes_per_epoch",
                            [](C& c) -> int& { return c.episodes_per_epoch; }));
    f.push_back(number<int>("experiment", "eval_every",
                            [](C& c) -> int& { return c.eval_every; }));
    f.push_back(number<int>("experiment", "eval_episodes",
                            [](C& c) -> int& { return c.eval_episodes; }));

    f.push_back({"task", "kind",
                 [](C& c, const std::string& v) {
                   try {
                     c.task.task_kind = task_kind_from_string(v);
                   } catch (const std::invalid_argument& e) {
                     config_error(e.what());
                   }
                 },
                 [](const C& c) { return to_string(c.task.task_kind); }});
    f.push_back(number<double>("task", "target_tolerance",
                               [](C& c) -> double& { return c.task.target_tolerance; }));
    f.push_back(number<int>("task", "hold_steps", [](C& c) -> int& { return c.task.hold_steps; }));
    f.push_back(number<int>("task", "horizon", [](C& c) -> int& { return c.task.horizon; }));

    f.push_back({"preference", "setting",
                 [](C& c, const std::string& v) {
                   const int id = parse_number<int>(v, "preference.setting");
                   if (id < 0 || id >= kNumPreferenceSettings) {
                     config_error("unknown preference setting " + v);
                   }
                   c.preference = PreferenceWeights::from_setting(id);
                 },
                 [](const C& c) {
                   return c.preference.setting_id ? std::to_string(*c.preference.setting_id)
                                                  : std::string();
                 }});
    f.push_back({"preference", "weights",
                 [](C& c, const std::string& v) {
                   const auto parts = split_list(v);
                   if (parts.size() != 3) {
                     config_error("preference.weights needs hit,force,high_force");
                   }
                   try {
                     c.preference = PreferenceWeights::explicit_weights(
                         parse_number<double>(parts[0], "preference.weights"),
                         parse_number<double>(parts[1], "preference.weights"),
                         parse_number<double>(parts[2], "preference.weights"));
                   } catch (const std::invalid_argument& e) {
                     config_error(e.what());
                   }
                 },
                 [](const C& c) {
                   if (c.preference.setting_id) return std::string();
                   return format_double(c.preference.hit) + "," +
                          format_double(c.preference.force) + "," +
                          format_double(c.preference.high_force);
                 }});

    f.push_back(number<double>("env", "head_sway_amplitude",
                               [](C& c) -> double& { return c.env.head_sway_amplitude; }));
    f.push_back(number<int>("env", "head_sway_period",
                            [](C& c) -> int& { return c.env.head_sway_period; }));
    f.push_back(number<double>("env", "initial_head_spread",
                               [](C& c) -> double& { return c.env.initial_head_spread; }));
    f.push_back(number<double>("env", "mouth_inset",
                               [](C& c) -> double& { return c.env.mouth_inset; }));
    f.push_back(number<double>("env", "max_mouth_offset",
                               [](C& c) -> double& { return c.env.max_mouth_offset; }));
    f.push_back(number<double>("env", "mouth_zone_radius",
                               [](C& c) -> double& { return c.env.mouth_zone_radius; }));
    f.push_back(number<double>("env", "high_force_depth",
                               [](C& c) -> double& { return c.env.high_force_depth; }));
    f.push_back(number<double>("env", "flinch_depth",
                               [](C& c) -> double& { return c.env.flinch_depth; }));
    f.push_back(number<double>("env", "tissue_resistance",
                               [](C& c) -> double& { return c.env.tissue_resistance; }));
    f.push_back(number<double>("env", "flinch_angle",
                               [](C& c) -> double& { return c.env.flinch_angle; }));
    f.push_back(number<double>("env", "delivery_bonus",
                               [](C& c) -> double& { return c.env.delivery_bonus; }));

    f.push_back(number<double>("ppo", "discount", [](C& c) -> double& { return c.ppo.discount; }));
    f.push_back(number<double>("ppo", "gae_lambda",
                               [](C& c) -> double& { return c.ppo.gae_lambda; }));
    f.push_back(number<double>("ppo", "clip", [](C& c) -> double& { return c.ppo.clip; }));
    f.push_back(number<double>("ppo", "lr", [](C& c) -> double& { return c.ppo.lr; }));
    f.push_back(number<int>("ppo", "epochs", [](C& c) -> int& { return c.ppo.epochs; }));
    f.push_back(number<int>("ppo", "minibatch", [](C& c) -> int& { return c.ppo.minibatch; }));
    f.push_back(number<double>("ppo", "entropy_coef",
                               [](C& c) -> double& { return c.ppo.entropy_coef; }));
    f.push_back(number<double>("ppo", "value_coef",
                               [](C& c) -> double& { return c.ppo.value_coef; }));
    f.push_back(number<double>("ppo", "max_grad_norm",
                               [](C& c) -> double& { return c.ppo.max_grad_norm; }));
    f.push_back(number<double>("ppo", "adv_eps", [](C& c) -> double& { return c.ppo.adv_eps; }));
    f.push_back(number<int>("ppo", "hidden", [](C& c) -> int& { return c.hidden; }));
    f.push_back(number<double>("ppo", "init_log_std",
                               [](C& c) -> double& { return c.init_log_std; }));

    f.push_back({"anticipation", "enabled",
                 [](C& c, const std::string& v) {
                   c.anticipation_enabled = parse_bool(v, "anticipation.enabled");
                 },
                 [](const C& c) { return std::string(c.anticipation_enabled ? "true" : "false"); }});
    f.push_back(number<int>("anticipation", "k_in",
                            [](C& c) -> int& { return c.anticipation.k_in; }));
    f.push_back(number<int>("anticipation", "k_max",
                            [](C& c) -> int& { return c.anticipation.k_max; }));
    f.push_back(number<int>("anticipation", "hidden",
                            [](C& c) -> int& { return c.anticipation.hidden; }));
    f.push_back(number<int>("anticipation", "e_k", [](C& c) -> int& { return c.e_k; }));
    f.push_back(number<int>("anticipation", "train_steps",
                            [](C& c) -> int& { return c.anticipation_train_steps; }));
    f.push_back(number<double>("anticipation", "lr",
                               [](C& c) -> double& { return c.anticipation_lr; }));

    f.push_back(number<int>("utility", "n_demos", [](C& c) -> int& { return c.utility.n_demos; }));
    f.push_back(number<int>("utility", "n_alternatives",
                            [](C& c) -> int& { return c.utility.n_alternatives; }));
    f.push_back(number<double>("utility", "merge_ratio",
                               [](C& c) -> double& { return c.utility.merge_ratio; }));
    f.push_back(number<double>("utility", "gate_threshold",
                               [](C& c) -> double& { return c.utility.gate_threshold; }));

    f.push_back(number<int>("mcmc", "steps", [](C& c) -> int& { return c.utility.mcmc.steps; }));
    f.push_back(number<int>("mcmc", "burn_in",
                            [](C& c) -> int& { return c.utility.mcmc.burn_in; }));
    f.push_back(number<int>("mcmc", "thin", [](C& c) -> int& { return c.utility.mcmc.thin; }));
    f.push_back(number<double>("mcmc", "proposal_std",
                               [](C& c) -> double& { return c.utility.mcmc.proposal_std; }));
    f.push_back(number<double>("mcmc", "target_acceptance",
                               [](C& c) -> double& { return c.utility.mcmc.target_acceptance; }));
    f.push_back(number<int>("mcmc", "adaptation_window",
                            [](C& c) -> int& { return c.utility.mcmc.adaptation_window; }));
    f.push_back(number<int>("mcmc", "min_particles",
                            [](C& c) -> int& { return c.utility.mcmc.min_particles; }));
    return f;
  }();
  return fields;
}

}  // namespace

std::string to_string(RewardMode mode) {
  switch (mode) {
    case RewardMode::kMisaligned:
      return "misaligned";
    case RewardMode::kCoOpt:
      return "co_opt";
    case RewardMode::kOursFull:
      return "ours_full";
    case RewardMode::kOursNoUtility:
      return "ours_no_utility";
  }
  return "unknown";
}

RewardMode reward_mode_from_string(const std::string& name) {
  if (name == "misaligned") return RewardMode::kMisaligned;
  if (name == "co_opt") return RewardMode::kCoOpt;
  if (name == "ours_full") return RewardMode::kOursFull;
  if (name == "ours_no_utility") return RewardMode::kOursNoUtility;
  config_error("unknown reward mode '" + name + "'");
}

bool ExperimentConfig::uses_anticipation() const {
  return anticipation_enabled && (reward_mode == RewardMode::kOursFull ||
                                  reward_mode == RewardMode::kOursNoUtility);
}

bool ExperimentConfig::uses_utility() const { return reward_mode == RewardMode::kOursFull; }

void ExperimentConfig::validate() const {
  try {
    task.validate();
  } catch (const std::invalid_argument& e) {
    config_error(e.what());
  }
  if (seeds.empty()) config_error("seeds must be non-empty");
  if (epochs < 1 || episodes_per_epoch < 1 || eval_every < 1 || eval_episodes < 1) {
    config_error("epochs, episodes_per_epoch, eval_every and eval_episodes must be >= 1");
  }
  if (eval_every > epochs) config_error("eval_every exceeds epochs, so no evaluation would run");
  if (e_k < 1) config_error("anticipation.e_k must be >= 1");
  if (anticipation.k_in < 1 || anticipation.k_max < 1 || anticipation.hidden < 1 ||
      anticipation_train_steps < 0 || !(anticipation_lr > 0.0)) {
    config_error("invalid anticipation config");
  }
  if (anticipation.k_max < horizon_for(0)) {
    config_error("anticipation.k_max must cover the longest horizon");
  }
  if (utility.n_demos < 1 || utility.n_alternatives < 1) {
    config_error("utility.n_demos and utility.n_alternatives must be >= 1");
  }
  if (!(utility.merge_ratio >= 0.0 && utility.merge_ratio <= 1.0)) {
    config_error("utility.merge_ratio must lie in [0, 1]");
  }
  if (!(utility.gate_threshold >= 0.0 && utility.gate_threshold <= 1.0)) {
    config_error("utility.gate_threshold must lie in [0, 1]");
  }
  const auto& m = utility.mcmc;
  if (m.thin < 1 || m.burn_in < 0 || m.steps <= m.burn_in || !(m.proposal_std > 0.0) ||
      (m.steps - m.burn_in) / m.thin < m.min_particles) {
    config_error("invalid mcmc schedule");
  }
  if (!(ppo.discount > 0.0 && ppo.discount <= 1.0) ||
      !(ppo.gae_lambda >= 0.0 && ppo.gae_lambda <= 1.0) || !(ppo.clip > 0.0) ||
      !(ppo.lr > 0.0) || ppo.epochs < 1 || ppo.minibatch < 1 || hidden < 1) {
    config_error("invalid ppo config");
  }
  if (env.head_sway_period < 1 || !(env.tissue_resistance >= 0.0) ||
      !(env.high_force_depth > 0.0) || env.flinch_depth < env.high_force_depth) {
    config_error("invalid env config");
  }
}

std::string ExperimentConfig::serialize() const {
  std::ostringstream os;
  std::string section;
  for (const auto& f : schema()) {
    const std::string v = f.get(*this);
    if (v.empty()) continue;
    if (f.section != section) {
      if (!section.empty()) os << "\n";
      section = f.section;
      os << "[" << section << "]\n";
    }
    os << f.key << " = " << v << "\n";
  }
  return os.str();
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  std::map<std::pair<std::string, std::string>, const Field*> index;
  std::set<std::string> sections;
  for (const auto& f : schema()) {
    index[{f.section, f.key}] = &f;
    sections.insert(f.section);
  }
  ExperimentConfig c;
  std::set<std::pair<std::string, std::string>> seen;
  std::istringstream is(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') config_error(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!sections.count(section)) config_error(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) config_error(where + "expected key = value");
    if (section.empty()) config_error(where + "key outside any section");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = index.find({section, key});
    if (it == index.end()) config_error(where + "unknown key " + section + "." + key);
    if (!seen.insert({section, key}).second) {
      config_error(where + "duplicate key " + section + "." + key);
    }
    it->second->set(c, value);
  }
  if (seen.count({"preference", "setting"}) && seen.count({"preference", "weights"})) {
    config_error("preference.setting and preference.weights are exclusive");
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RunError(ErrorCategory::kIo, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  h = mix(h ^ a);
  h = mix(h ^ b);
  h = mix(h ^ c);
  return h;
}

}  // namespace assist
