#pragma once

// Experiment orchestration: declarative run configuration, self-describing
// run directories, metric logs and plot tables.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hicogen/bench.hpp"
#include "hicogen/chain.hpp"
#include "hicogen/errors.hpp"
#include "hicogen/grpo.hpp"
#include "hicogen/lyapunov.hpp"
#include "hicogen/remote.hpp"
#include "hicogen/reward.hpp"
#include "hicogen/training.hpp"

#include "json.hpp"

#ifndef HICOGEN_VERSION
#define HICOGEN_VERSION "0.0.0-dev"
#endif

namespace hicogen {

inline constexpr const char* kRunConfigSchema = "hicogen-run/1";

enum class ExperimentKind { Pretrain, RlFinetune, AnalyzeSchedule, ChainEval, Benchgen, Judge };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Pretrain: return "pretrain";
    case ExperimentKind::RlFinetune: return "rl-finetune";
    case ExperimentKind::AnalyzeSchedule: return "analyze-schedule";
    case ExperimentKind::ChainEval: return "chain-eval";
    case ExperimentKind::Benchgen: return "benchgen";
    case ExperimentKind::Judge: return "judge";
  }
  return "?";
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
  for (auto k : {ExperimentKind::Pretrain, ExperimentKind::RlFinetune, ExperimentKind::AnalyzeSchedule,
                 ExperimentKind::ChainEval, ExperimentKind::Benchgen, ExperimentKind::Judge}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown experiment kind '" + s + "'");
}

struct RingDomainSpec {
  std::size_t modes = 8;
  double radius = 4.0;
  double std = 0.5;
  bool operator==(const RingDomainSpec&) const = default;
};

struct PretrainSpec {
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::Tanh;
  std::size_t cond_dim = 8;
  std::size_t steps = 8000;
  double learning_rate = 0.05;
  std::size_t batch_size = 128;
  double p_uncond = 0.3;
  std::uint64_t seed = 3;
  bool operator==(const PretrainSpec&) const = default;
};

struct RlSpec {
  /// Starting checkpoint; empty means pretrain in the same run.
  std::string checkpoint;
  std::size_t target_mode = 0;
  /// "target-mode" (Gaussian bump at the mode) or "hierarchical" (toy scorer).
  std::string reward = "target-mode";
  /// Run once per schedule with the same seeds. Empty means the GRPO schedule
  /// and the constant schedule of equal budget.
  std::vector<StochasticitySchedule> schedules;
  std::size_t diversity_samples = 256;
  SdeForm diversity_form = SdeForm::Literal;
  double gain_factor = 1.5;
  std::size_t window = 10;
  bool operator==(const RlSpec& o) const {
    return checkpoint == o.checkpoint && target_mode == o.target_mode && reward == o.reward &&
           schedules == o.schedules && diversity_samples == o.diversity_samples &&
           diversity_form == o.diversity_form && gain_factor == o.gain_factor && window == o.window;
  }
};

struct AnalysisSpec {
  double budget = 1.0;
  std::size_t bins = 8;
  std::size_t grid = 512;
  std::size_t mc_samples = 20000;
  std::size_t mc_steps = 400;
  bool operator==(const AnalysisSpec&) const = default;
};

struct ChainSpec {
  std::size_t trials = 256;
  std::size_t subjects = 3;
  std::vector<ChainMode> modes{ChainMode::Chain, ChainMode::Folded, ChainMode::Monolithic};
  bool operator==(const ChainSpec&) const = default;
};

struct BenchSpec {
  std::size_t train_size = 12000;
  std::size_t test_size = 3000;
  std::size_t min_subjects = 4;
  std::size_t max_subjects = 12;
  /// "template" or "remote".
  std::string rewriter = "template";
  bool operator==(const BenchSpec&) const = default;
};

struct JudgeSpec {
  /// Directory holding <split>.jsonl; empty means generate the split here.
  std::string dataset;
  std::string split = "test";
  /// Records judged (0 = all).
  std::size_t limit = 300;
  /// chain, folded, monolithic or ideal.
  std::string samples = "chain";
  /// "oracle" or "remote".
  std::string backend = "oracle";
  bool operator==(const JudgeSpec&) const = default;
};

struct RunConfig {
  ExperimentKind kind = ExperimentKind::Pretrain;
  std::uint64_t seed = 1;
  /// 0 means one per hardware thread.
  std::size_t workers = 0;
  std::string output_dir = "runs";
  /// Exit with an acceptance failure when a run's checks do not hold.
  bool enforce_checks = false;
  RingDomainSpec domain;
  PretrainSpec pretrain;
  GRPOConfig grpo;
  RewardWeights reward_weights;
  RlSpec rl;
  AnalysisSpec analysis;
  ChainSpec chain;
  BenchSpec bench;
  JudgeSpec judge;

  std::size_t resolved_workers() const {
    if (workers > 0) return workers;
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
  }

  void validate() const {
    auto check = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError(what);
    };
    check(domain.modes >= 1 && domain.radius > 0.0 && domain.std > 0.0, "domain: need modes >= 1, radius > 0, std > 0");
    check(!pretrain.hidden.empty(), "pretrain.hidden must list at least one layer");
    for (auto w : pretrain.hidden) check(w > 0, "pretrain.hidden widths must be > 0");
    check(pretrain.steps > 0 && pretrain.batch_size > 0, "pretrain.steps and pretrain.batch_size must be > 0");
    check(pretrain.learning_rate > 0.0, "pretrain.learning_rate must be > 0");
    check(pretrain.p_uncond >= 0.0 && pretrain.p_uncond <= 1.0, "pretrain.p_uncond must lie in [0, 1]");
    try {
      grpo.validate();
      reward_weights.validate();
      for (const auto& s : rl.schedules) s.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    check(rl.target_mode < domain.modes, "rl.target_mode out of range");
    check(rl.reward == "target-mode" || rl.reward == "hierarchical", "rl.reward must be target-mode or hierarchical");
    check(rl.diversity_samples >= 2, "rl.diversity_samples must be >= 2");
    check(rl.window >= 1 && rl.window <= grpo.iterations, "rl.window must lie in [1, grpo.iterations]");
    check(analysis.budget > 0.0 && std::isfinite(analysis.budget), "analysis.budget must be > 0");
    check(analysis.bins >= 2 && analysis.bins <= 16, "analysis.bins must lie in [2, 16]");
    check(analysis.grid >= 16, "analysis.grid must be >= 16");
    check(analysis.mc_samples >= 1000 && analysis.mc_steps >= 1, "analysis: need mc_samples >= 1000, mc_steps >= 1");
    check(chain.trials >= 1 && chain.subjects >= 1 && !chain.modes.empty(), "chain: need trials, subjects and modes");
    check(bench.rewriter == "template" || bench.rewriter == "remote", "bench.rewriter must be template or remote");
    check(bench.min_subjects >= 1 && bench.min_subjects <= bench.max_subjects, "bench: need 1 <= min_subjects <= max_subjects");
    check(judge.split == "train" || judge.split == "test", "judge.split must be train or test");
    check(judge.backend == "oracle" || judge.backend == "remote", "judge.backend must be oracle or remote");
    check(judge.samples == "ideal" || judge.samples == "chain" || judge.samples == "folded" || judge.samples == "monolithic",
          "judge.samples must be ideal, chain, folded or monolithic");
  }

  bool operator==(const RunConfig& o) const {
    return kind == o.kind && seed == o.seed && workers == o.workers && output_dir == o.output_dir &&
           enforce_checks == o.enforce_checks && domain == o.domain && pretrain == o.pretrain &&
           grpo.group_size == o.grpo.group_size && grpo.clip_epsilon == o.grpo.clip_epsilon &&
           grpo.learning_rate == o.grpo.learning_rate && grpo.iterations == o.grpo.iterations &&
           grpo.std_guard == o.grpo.std_guard && grpo.num_steps == o.grpo.num_steps && grpo.schedule == o.grpo.schedule &&
           grpo.sampler.form == o.grpo.sampler.form && grpo.max_grad_norm == o.grpo.max_grad_norm &&
           grpo.min_step_std == o.grpo.min_step_std && grpo.max_log_ratio == o.grpo.max_log_ratio &&
           reward_weights == o.reward_weights && rl == o.rl && analysis == o.analysis && chain == o.chain &&
           bench == o.bench && judge == o.judge;
  }
};

// ---- serialization --------------------------------------------------------

inline nlohmann::ordered_json schedule_to_json(const StochasticitySchedule& s) {
  nlohmann::ordered_json j{{"kind", to_string(s.kind)}};
  if (s.kind == ScheduleKind::PiecewiseConstant) {
    nlohmann::ordered_json bins = nlohmann::ordered_json::array();
    for (const auto& b : s.bins) bins.push_back({b.lo, b.hi, b.value});
    j["bins"] = std::move(bins);
  } else if (s.kind == ScheduleKind::Constant) {
    j["eta"] = s.eta_max;
  } else {
    j["eta_min"] = s.eta_min;
    j["eta_max"] = s.eta_max;
  }
  j["t_max"] = s.t_max;
  j["mirrored"] = s.mirrored;
  return j;
}

namespace detail {

/// Reads the keys of one config object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError((path_.empty() ? std::string("config") : path_) + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    if (const auto* v = child(key)) {
      try {
        out = v->get<T>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path(key) + ": " + e.what());
      }
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + path(k) + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
auto convert(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace detail

/// Optional "budget" rescales the schedule to that stochasticity budget.
inline StochasticitySchedule schedule_from_json(const nlohmann::json& j, const std::string& path = "schedule") {
  detail::ObjectReader r(j, path);
  std::string kind = "cosine-decay";
  r.get("kind", kind);
  const auto k = detail::convert(path + ".kind", [&] { return schedule_kind_from_string(kind); });
  StochasticitySchedule s;
  s.kind = k;
  r.get("t_max", s.t_max);
  r.get("mirrored", s.mirrored);
  if (k == ScheduleKind::PiecewiseConstant) {
    std::vector<std::array<double, 3>> bins;
    r.get("bins", bins);
    for (const auto& b : bins) s.bins.push_back({b[0], b[1], b[2]});
    s.eta_min = s.eta_max = 0.0;
    for (const auto& b : s.bins) s.eta_max = std::max(s.eta_max, b.value);
  } else if (k == ScheduleKind::Constant) {
    double eta = 1.0;
    r.get("eta", eta);
    s.eta_min = s.eta_max = eta;
  } else {
    r.get("eta_min", s.eta_min);
    r.get("eta_max", s.eta_max);
  }
  std::optional<double> budget;
  if (const auto* b = r.child("budget")) budget = detail::convert(path + ".budget", [&] { return b->get<double>(); });
  r.finish();
  detail::convert(path, [&] {
    s.validate();
    if (budget) s = scaled_to_budget(s, *budget);
    return 0;
  });
  return s;
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json schedules = nlohmann::ordered_json::array();
  for (const auto& s : c.rl.schedules) schedules.push_back(schedule_to_json(s));
  nlohmann::ordered_json modes = nlohmann::ordered_json::array();
  for (auto m : c.chain.modes) modes.push_back(to_string(m));
  return {{"schema", kRunConfigSchema},
          {"kind", to_string(c.kind)},
          {"seed", c.seed},
          {"workers", c.workers},
          {"output_dir", c.output_dir},
          {"enforce_checks", c.enforce_checks},
          {"domain", {{"modes", c.domain.modes}, {"radius", c.domain.radius}, {"std", c.domain.std}}},
          {"pretrain",
           {{"hidden", c.pretrain.hidden},
            {"activation", to_string(c.pretrain.activation)},
            {"cond_dim", c.pretrain.cond_dim},
            {"steps", c.pretrain.steps},
            {"learning_rate", c.pretrain.learning_rate},
            {"batch_size", c.pretrain.batch_size},
            {"p_uncond", c.pretrain.p_uncond},
            {"seed", c.pretrain.seed}}},
          {"grpo",
           {{"group_size", c.grpo.group_size},
            {"clip_epsilon", c.grpo.clip_epsilon},
            {"learning_rate", c.grpo.learning_rate},
            {"iterations", c.grpo.iterations},
            {"num_steps", c.grpo.num_steps},
            {"schedule", schedule_to_json(c.grpo.schedule)},
            {"sde_form", to_string(c.grpo.sampler.form)},
            {"std_guard", c.grpo.std_guard},
            {"max_grad_norm", c.grpo.max_grad_norm},
            {"min_step_std", c.grpo.min_step_std},
            {"max_log_ratio", c.grpo.max_log_ratio}}},
          {"reward_weights",
           {{"clip", c.reward_weights.clip},
            {"hps", c.reward_weights.hps},
            {"dino", c.reward_weights.dino},
            {"vlm", c.reward_weights.vlm}}},
          {"rl",
           {{"checkpoint", c.rl.checkpoint},
            {"target_mode", c.rl.target_mode},
            {"reward", c.rl.reward},
            {"schedules", std::move(schedules)},
            {"diversity_samples", c.rl.diversity_samples},
            {"diversity_form", to_string(c.rl.diversity_form)},
            {"gain_factor", c.rl.gain_factor},
            {"window", c.rl.window}}},
          {"analysis",
           {{"budget", c.analysis.budget},
            {"bins", c.analysis.bins},
            {"grid", c.analysis.grid},
            {"mc_samples", c.analysis.mc_samples},
            {"mc_steps", c.analysis.mc_steps}}},
          {"chain", {{"trials", c.chain.trials}, {"subjects", c.chain.subjects}, {"modes", std::move(modes)}}},
          {"bench",
           {{"train_size", c.bench.train_size},
            {"test_size", c.bench.test_size},
            {"min_subjects", c.bench.min_subjects},
            {"max_subjects", c.bench.max_subjects},
            {"rewriter", c.bench.rewriter}}},
          {"judge",
           {{"dataset", c.judge.dataset},
            {"split", c.judge.split},
            {"limit", c.judge.limit},
            {"samples", c.judge.samples},
            {"backend", c.judge.backend}}}};
}

/// Missing keys keep their defaults; unknown keys are errors.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::ObjectReader r(j, "");
  if (const auto* s = r.child("schema"); s && *s != kRunConfigSchema) {
    throw ConfigError("config schema must be '" + std::string(kRunConfigSchema) + "', got " + s->dump());
  }
  std::string kind = to_string(c.kind);
  r.get("kind", kind);
  c.kind = experiment_kind_from_string(kind);
  r.get("seed", c.seed);
  r.get("workers", c.workers);
  r.get("output_dir", c.output_dir);
  r.get("enforce_checks", c.enforce_checks);

  if (const auto* d = r.child("domain")) {
    detail::ObjectReader o(*d, "domain");
    o.get("modes", c.domain.modes);
    o.get("radius", c.domain.radius);
    o.get("std", c.domain.std);
    o.finish();
  }
  if (const auto* p = r.child("pretrain")) {
    detail::ObjectReader o(*p, "pretrain");
    o.get("hidden", c.pretrain.hidden);
    std::string act = to_string(c.pretrain.activation);
    o.get("activation", act);
    c.pretrain.activation = detail::convert("pretrain.activation", [&] { return activation_from_string(act); });
    o.get("cond_dim", c.pretrain.cond_dim);
    o.get("steps", c.pretrain.steps);
    o.get("learning_rate", c.pretrain.learning_rate);
    o.get("batch_size", c.pretrain.batch_size);
    o.get("p_uncond", c.pretrain.p_uncond);
    o.get("seed", c.pretrain.seed);
    o.finish();
  }
  if (const auto* g = r.child("grpo")) {
    detail::ObjectReader o(*g, "grpo");
    o.get("group_size", c.grpo.group_size);
    o.get("clip_epsilon", c.grpo.clip_epsilon);
    o.get("learning_rate", c.grpo.learning_rate);
    o.get("iterations", c.grpo.iterations);
    o.get("num_steps", c.grpo.num_steps);
    if (const auto* s = o.child("schedule")) c.grpo.schedule = schedule_from_json(*s, "grpo.schedule");
    std::string form = to_string(c.grpo.sampler.form);
    o.get("sde_form", form);
    c.grpo.sampler.form = detail::convert("grpo.sde_form", [&] { return sde_form_from_string(form); });
    o.get("std_guard", c.grpo.std_guard);
    o.get("max_grad_norm", c.grpo.max_grad_norm);
    o.get("min_step_std", c.grpo.min_step_std);
    o.get("max_log_ratio", c.grpo.max_log_ratio);
    o.finish();
  }
  if (const auto* w = r.child("reward_weights")) {
    detail::ObjectReader o(*w, "reward_weights");
    o.get("clip", c.reward_weights.clip);
    o.get("hps", c.reward_weights.hps);
    o.get("dino", c.reward_weights.dino);
    o.get("vlm", c.reward_weights.vlm);
    o.finish();
  }
  if (const auto* l = r.child("rl")) {
    detail::ObjectReader o(*l, "rl");
    o.get("checkpoint", c.rl.checkpoint);
    o.get("target_mode", c.rl.target_mode);
    o.get("reward", c.rl.reward);
    if (const auto* s = o.child("schedules")) {
      if (!s->is_array()) throw ConfigError("rl.schedules: expected an array");
      c.rl.schedules.clear();
      for (std::size_t i = 0; i < s->size(); ++i) {
        c.rl.schedules.push_back(schedule_from_json((*s)[i], "rl.schedules[" + std::to_string(i) + "]"));
      }
    }
    o.get("diversity_samples", c.rl.diversity_samples);
    std::string form = to_string(c.rl.diversity_form);
    o.get("diversity_form", form);
    c.rl.diversity_form = detail::convert("rl.diversity_form", [&] { return sde_form_from_string(form); });
    o.get("gain_factor", c.rl.gain_factor);
    o.get("window", c.rl.window);
    o.finish();
  }
  if (const auto* a = r.child("analysis")) {
    detail::ObjectReader o(*a, "analysis");
    o.get("budget", c.analysis.budget);
    o.get("bins", c.analysis.bins);
    o.get("grid", c.analysis.grid);
    o.get("mc_samples", c.analysis.mc_samples);
    o.get("mc_steps", c.analysis.mc_steps);
    o.finish();
  }
  if (const auto* ch = r.child("chain")) {
    detail::ObjectReader o(*ch, "chain");
    o.get("trials", c.chain.trials);
    o.get("subjects", c.chain.subjects);
    std::vector<std::string> modes;
    o.get("modes", modes);
    if (o.child("modes")) {
      c.chain.modes.clear();
      for (const auto& m : modes) c.chain.modes.push_back(detail::convert("chain.modes", [&] { return chain_mode_from_string(m); }));
    }
    o.finish();
  }
  if (const auto* b = r.child("bench")) {
    detail::ObjectReader o(*b, "bench");
    o.get("train_size", c.bench.train_size);
    o.get("test_size", c.bench.test_size);
    o.get("min_subjects", c.bench.min_subjects);
    o.get("max_subjects", c.bench.max_subjects);
    o.get("rewriter", c.bench.rewriter);
    o.finish();
  }
  if (const auto* jd = r.child("judge")) {
    detail::ObjectReader o(*jd, "judge");
    o.get("dataset", c.judge.dataset);
    o.get("split", c.judge.split);
    o.get("limit", c.judge.limit);
    o.get("samples", c.judge.samples);
    o.get("backend", c.judge.backend);
    o.finish();
  }
  r.finish();
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  try {
    return run_config_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

/// Applies "a.b.c=value" to a config document. The value is parsed as JSON
/// when possible and taken as a string otherwise.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("empty path component in override '" + assignment + "'");
    if (!node->is_object()) throw ConfigError("override '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

// ---- run directories ------------------------------------------------------

/// Raised after the failure marker has been written.
class RunFailure : public std::runtime_error {
 public:
  RunFailure(std::string stage, std::filesystem::path dir, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)), dir_(std::move(dir)) {}
  const std::string& stage() const { return stage_; }
  const std::filesystem::path& directory() const { return dir_; }

 private:
  std::string stage_;
  std::filesystem::path dir_;
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct RunResult {
  std::filesystem::path directory;
  std::vector<CheckResult> checks;
  bool checks_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
  }
};

namespace detail {

inline std::string utc_stamp(const char* fmt) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, fmt);
  return os.str();
}

inline std::filesystem::path fresh_run_dir(const RunConfig& c) {
  const std::string base = std::string(to_string(c.kind)) + "-" + utc_stamp("%Y%m%dT%H%M%SZ") + "-s" + std::to_string(c.seed);
  std::filesystem::path dir = std::filesystem::path(c.output_dir) / base;
  for (int k = 1; std::filesystem::exists(dir); ++k) dir = std::filesystem::path(c.output_dir) / (base + "-" + std::to_string(k));
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_json(const std::filesystem::path& p, const nlohmann::ordered_json& j) {
  std::ofstream os(p);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("cannot write " + p.string());
}

inline nlohmann::ordered_json read_json(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw std::runtime_error("missing " + p.string());
  return nlohmann::ordered_json::parse(is);
}

class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& p) : os_(p) {
    if (!os_) throw std::runtime_error("cannot write " + p.string());
  }
  void write(const nlohmann::ordered_json& j) { os_ << j.dump() << '\n'; }

 private:
  std::ofstream os_;
};

inline SyntheticDomain ring_domain(const RunConfig& c) {
  return SyntheticDomain::ring(c.domain.modes, c.domain.radius, c.domain.std);
}

inline FieldArchitecture architecture(const RunConfig& c, const SyntheticDomain& d) {
  return {d.dim, c.pretrain.cond_dim, c.pretrain.hidden, c.pretrain.activation};
}

inline TrainingConfig training_config(const RunConfig& c) {
  TrainingConfig t;
  t.steps = c.pretrain.steps;
  t.learning_rate = c.pretrain.learning_rate;
  t.batch_size = c.pretrain.batch_size;
  t.p_uncond = c.pretrain.p_uncond;
  t.seed = c.pretrain.seed;
  t.workers = c.resolved_workers();
  return t;
}

inline std::vector<StochasticitySchedule> rl_schedules(const RunConfig& c) {
  if (!c.rl.schedules.empty()) return c.rl.schedules;
  return {c.grpo.schedule, StochasticitySchedule::constant(std::sqrt(schedule_budget(c.grpo.schedule)), c.grpo.schedule.t_max)};
}

// Stage bodies. Each writes its own files into `dir` and appends checks.

inline VelocityField stage_pretrain(const RunConfig& c, const std::filesystem::path& dir, std::vector<CheckResult>& checks) {
  const auto domain = ring_domain(c);
  auto res = train_velocity_field(domain, architecture(c, domain), training_config(c));
  {
    JsonlWriter log(dir / "loss.jsonl");
    for (const auto& r : res.log) log.write({{"step", r.step}, {"loss", r.loss}});
  }
  save_checkpoint((dir / "model.ckpt").string(), res.field);
  const double first = res.log.front().loss;
  checks.push_back({"pretrain-loss-decreased", res.heldout_loss < first,
                    "held-out " + std::to_string(res.heldout_loss) + " vs first batch " + std::to_string(first)});
  return std::move(res.field);
}

inline void stage_rl(const RunConfig& c, const VelocityField& start, const std::filesystem::path& dir,
                     std::vector<CheckResult>& checks) {
  const auto domain = ring_domain(c);
  const Vec condition(c.pretrain.cond_dim, 0.0);
  RewardFunction reward;
  if (c.rl.reward == "hierarchical") {
    reward = hierarchical_reward(std::make_shared<ToyScorer>(), mode_scoring_task(domain, c.rl.target_mode), c.reward_weights);
  } else {
    reward = target_mode_reward(domain.modes[c.rl.target_mode].mean);
  }
  GRPOConfig g = c.grpo;
  g.workers = c.resolved_workers();
  const auto schedules = rl_schedules(c);
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  JsonlWriter log(dir / "rl.jsonl");
  std::vector<std::optional<std::size_t>> reached;
  std::vector<DiversityMetrics> diversity;
  for (std::size_t k = 0; k < schedules.size(); ++k) {
    g.schedule = schedules[k];
    const std::string name = schedules[k].name();
    const auto run = train_grpo(start, condition, reward, g, c.seed, [&](const IterationRecord& r) {
      auto j = nlohmann::ordered_json{{"schedule", name}};
      j.update(nlohmann::ordered_json(to_json(r)));
      log.write(j);
    });
    save_checkpoint((dir / ("policy-" + std::to_string(k) + ".ckpt")).string(), run.field);
    const std::size_t w = c.rl.window, n = run.records.size();
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < w; ++i) {
      head += run.records[i].mean_reward;
      tail += run.records[n - w + i].mean_reward;
    }
    head /= static_cast<double>(w);
    tail /= static_cast<double>(w);
    reached.push_back(iterations_to_threshold(run.records, c.rl.gain_factor, w));

    std::vector<Vec> samples(c.rl.diversity_samples);
    SamplerOptions opt;
    opt.form = c.rl.diversity_form;
    parallel_for(samples.size(), g.workers, [&](std::size_t i) {
      samples[i] = sample_trajectory(start, condition, schedules[k], g.num_steps, derive_seed(c.seed, i), opt).terminal;
    });
    diversity.push_back(diversity_metrics(samples));
    runs.push_back({{"schedule", name},
                    {"spec", schedule_to_json(schedules[k])},
                    {"budget", schedule_budget(schedules[k])},
                    {"initial_mean_reward", head},
                    {"final_mean_reward", tail},
                    {"gain", head > 0.0 ? tail / head : 0.0},
                    {"iterations_to_threshold", reached.back() ? nlohmann::ordered_json(*reached.back()) : nlohmann::ordered_json()},
                    {"diversity",
                     {{"samples", samples.size()},
                      {"form", to_string(opt.form)},
                      {"mean_pairwise_distance", diversity.back().mean_pairwise_distance},
                      {"covariance_trace", diversity.back().covariance_trace}}}});
    checks.push_back({"rl-gain[" + name + "]", head > 0.0 && tail >= c.rl.gain_factor * head,
                      "final/initial = " + std::to_string(head > 0.0 ? tail / head : 0.0)});
  }
  write_json(dir / "rl_summary.json", {{"target_mode", c.rl.target_mode}, {"reward", c.rl.reward}, {"runs", runs}});
  if (schedules.size() >= 2) {
    const bool more_diverse = diversity[0].mean_pairwise_distance > diversity[1].mean_pairwise_distance &&
                              diversity[0].covariance_trace > diversity[1].covariance_trace;
    checks.push_back({"diversity[" + schedules[0].name() + " > " + schedules[1].name() + "]", more_diverse, ""});
    const bool faster = reached[0] && (!reached[1] || *reached[0] <= *reached[1]);
    checks.push_back({"rl-speed[" + schedules[0].name() + " <= " + schedules[1].name() + "]", faster, ""});
  }
}

inline void stage_analyze(const RunConfig& c, const std::filesystem::path& dir, std::vector<CheckResult>& checks) {
  const auto model = LinearSDEModel::shipped();
  const double C = c.analysis.budget, T = model.horizon;
  const auto wt = weight_function(model, c.analysis.grid);
  const auto rep = verify_decreasing_optimality(model, C, c.analysis.bins, c.seed);
  const auto two_bin = optimize_allocation(model, C, 2, AllocationFamily::FreeBins);
  const auto k_bin = optimize_allocation(model, C, c.analysis.bins, AllocationFamily::FreeBins);
  const auto cosine = scaled_to_budget(StochasticitySchedule::cosine_decay(0.0, 1.0, T), C);
  const std::vector<StochasticitySchedule> rows{
      StochasticitySchedule::constant(std::sqrt(C / T), T), cosine, mirrored(cosine),
      scaled_to_budget(StochasticitySchedule::linear_decay(0.0, 1.0, T), C), two_bin.best, k_bin.best};

  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& s = rows[i];
    const double tr = propagate_lyapunov(model, s, c.analysis.grid).Sigma0_trace;
    nlohmann::ordered_json row{{"schedule", s.name()}, {"budget", schedule_budget(s)}, {"trace", tr}};
    if (i < 2) {
      const auto mc = monte_carlo_variance(model, s, c.analysis.mc_samples, c.analysis.mc_steps, derive_seed(c.seed, i),
                                           {.workers = c.resolved_workers()});
      row["monte_carlo"] = {{"trace", mc.trace}, {"standard_error", mc.standard_error}, {"bias", mc.discretization_bias}};
      checks.push_back({"monte-carlo[" + s.name() + "]", std::abs(mc.trace - tr) <= 0.05 * tr,
                        std::to_string(mc.trace) + " vs " + std::to_string(tr)});
    }
    table.push_back(std::move(row));
  }
  write_json(dir / "analysis.json",
             {{"model", model.name},
              {"budget", C},
              {"weights", {{"s", wt.s}, {"W", wt.W}, {"shape", to_string(wt.monotonicity)}}},
              {"schedules", table},
              {"optimality",
               {{"status", to_string(rep.status)},
                {"message", rep.message},
                {"optimum_decreasing", rep.optimum_decreasing},
                {"optimum_eta_sq", rep.optimum_eta_sq},
                {"decreasing_beats_mirror", rep.decreasing_beats_mirror},
                {"cosine_ordering", rep.cosine_ordering}}}});
  checks.push_back({"decreasing-optimality", rep.status == OptimalityStatus::Holds, rep.message});
}

inline void stage_chain(const RunConfig& c, const std::filesystem::path& dir, std::vector<CheckResult>& checks) {
  SceneDomain d = hard_scene_domain();
  d.subjects = c.chain.subjects;
  const auto cmp = compare_chain_modes(d, c.chain.trials, c.seed, c.chain.modes, c.resolved_workers());
  nlohmann::ordered_json modes;
  for (const auto& [m, cov] : cmp.coverage) modes[to_string(m)] = to_json(cov);
  write_json(dir / "coverage.json", {{"trials", cmp.trials}, {"subjects", d.subjects}, {"modes", modes}});
  if (cmp.coverage.count(ChainMode::Chain) && cmp.coverage.count(ChainMode::Monolithic)) {
    const auto& a = cmp.coverage.at(ChainMode::Chain);
    const auto& b = cmp.coverage.at(ChainMode::Monolithic);
    checks.push_back({"chain>=monolithic",
                      a.exist() >= b.exist() && a.attribute() > b.attribute() && a.relationship() >= b.relationship(),
                      ""});
  }
}

inline std::unique_ptr<AttributeRewriter> make_rewriter(const RunConfig& c, const ConceptPools& pools) {
  if (c.bench.rewriter == "remote") return std::make_unique<RemoteAttributeRewriter>(RemoteConfig::from_env());
  return std::make_unique<TemplateAttributeRewriter>(pools);
}

inline BenchConfig bench_config(const RunConfig& c) {
  BenchConfig b;
  b.train_size = c.bench.train_size;
  b.test_size = c.bench.test_size;
  b.min_subjects = c.bench.min_subjects;
  b.max_subjects = c.bench.max_subjects;
  b.seed = c.seed;
  b.workers = c.resolved_workers();
  return b;
}

inline void stage_benchgen(const RunConfig& c, const std::filesystem::path& dir, std::vector<CheckResult>& checks) {
  const auto pools = default_pools();
  const auto rewriter = make_rewriter(c, pools);
  const auto data = generate_dataset(pools, *rewriter, detail::bench_config(c), c.bench.rewriter);
  write_dataset(dir / "dataset", data);
  const double dup = data.manifest.at("duplicate_rate").get<double>();
  checks.push_back({"duplicate-rate<1%", dup < 0.01, std::to_string(dup)});
  std::size_t invalid = 0;
  for (const auto* split : {&data.train, &data.test}) {
    for (const auto& r : *split) invalid += validate_tree(r.tree).empty() ? 0 : 1;
  }
  checks.push_back({"records-valid", invalid == 0, std::to_string(invalid) + " invalid"});
}

inline void stage_judge(const RunConfig& c, const std::filesystem::path& dir, std::vector<CheckResult>& checks) {
  const auto pools = default_pools();
  const Split split = split_from_string(c.judge.split);
  std::vector<DatasetRecord> records;
  if (!c.judge.dataset.empty()) {
    records = read_records(std::filesystem::path(c.judge.dataset) / (c.judge.split + ".jsonl"));
  } else {
    auto b = bench_config(c);
    const std::size_t want = c.judge.limit > 0 ? c.judge.limit : (split == Split::Train ? b.train_size : b.test_size);
    (split == Split::Train ? b.train_size : b.test_size) = want;
    const TemplateAttributeRewriter rewriter(pools);
    records = generate_split(pools, rewriter, b, split);
  }
  if (c.judge.limit > 0 && records.size() > c.judge.limit) records.resize(c.judge.limit);

  const SceneConfig scfg{};
  const SceneLexicon lex(pools, scfg);
  const ToySceneGenerator gen(lex);
  const SceneOracle oracle(lex);
  std::vector<EvalItem> items(records.size());
  parallel_for(records.size(), c.resolved_workers(), [&](std::size_t i) {
    const auto& r = records[i];
    items[i].record = &r;
    if (c.judge.samples == "ideal") {
      items[i].sample = oracle.ideal_scene(r.tree);
    } else {
      items[i].sample = run_chain(plan_for(r.tree, chain_mode_from_string(c.judge.samples)), r.tree, gen, r.seed).composite;
    }
  });
  std::unique_ptr<JudgeBackend> judge;
  if (c.judge.backend == "remote") {
    judge = std::make_unique<RemoteJudge>(RemoteConfig::from_env());
  } else {
    judge = std::make_unique<OracleJudge>(lex);
  }
  const auto rep = evaluate_accuracy(items, *judge, c.resolved_workers());
  auto summary = summary_json(rep);
  summary["samples"] = c.judge.samples;
  summary["backend"] = c.judge.backend;
  write_json(dir / "accuracy.json", summary);
  std::ofstream os(dir / "verdicts.jsonl");
  write_verdicts(os, rep);
  checks.push_back({"no-skipped-records", rep.skipped.empty(), std::to_string(rep.skipped.size()) + " skipped"});
}

}  // namespace detail

inline std::vector<std::string> available_plot_views(const std::filesystem::path& dir);
inline std::filesystem::path emit_plot_data(const std::filesystem::path& dir, const std::string& view);

/// Creates a fresh run directory under config.output_dir and runs the
/// experiment. Invalid configs throw ConfigError before anything is written.
inline RunResult run_experiment(const RunConfig& c) {
  c.validate();
  if ((c.kind == ExperimentKind::Benchgen && c.bench.rewriter == "remote") ||
      (c.kind == ExperimentKind::Judge && c.judge.backend == "remote")) {
    RemoteConfig::from_env();
  }
  RunResult res;
  res.directory = detail::fresh_run_dir(c);
  const auto& dir = res.directory;
  detail::write_json(dir / "config.json", to_json(c));
  detail::write_json(dir / "manifest.json", {{"code_version", HICOGEN_VERSION},
                                             {"kind", to_string(c.kind)},
                                             {"started_utc", detail::utc_stamp("%Y-%m-%dT%H:%M:%SZ")},
                                             {"seeds",
                                              {{"run", c.seed},
                                               {"pretrain", c.pretrain.seed},
                                               {"derivation", "derive_seed(run, stream index)"}}},
                                             {"workers", c.resolved_workers()}});
  std::string stage = "setup";
  try {
    switch (c.kind) {
      case ExperimentKind::Pretrain:
        stage = "pretrain";
        detail::stage_pretrain(c, dir, res.checks);
        break;
      case ExperimentKind::RlFinetune: {
        stage = c.rl.checkpoint.empty() ? "pretrain" : "load-policy";
        const VelocityField start =
            c.rl.checkpoint.empty() ? detail::stage_pretrain(c, dir, res.checks) : load_checkpoint(c.rl.checkpoint);
        stage = "rl-finetune";
        detail::stage_rl(c, start, dir, res.checks);
        break;
      }
      case ExperimentKind::AnalyzeSchedule:
        stage = "analyze-schedule";
        detail::stage_analyze(c, dir, res.checks);
        break;
      case ExperimentKind::ChainEval:
        stage = "chain-eval";
        detail::stage_chain(c, dir, res.checks);
        break;
      case ExperimentKind::Benchgen:
        stage = "benchgen";
        detail::stage_benchgen(c, dir, res.checks);
        break;
      case ExperimentKind::Judge:
        stage = "judge";
        detail::stage_judge(c, dir, res.checks);
        break;
    }
    stage = "emit-plots";
    for (const auto& view : available_plot_views(dir)) emit_plot_data(dir, view);
    nlohmann::ordered_json checks = nlohmann::ordered_json::array();
    for (const auto& ck : res.checks) checks.push_back({{"name", ck.name}, {"passed", ck.passed}, {"detail", ck.detail}});
    detail::write_json(dir / "checks.json", checks);
  } catch (const std::exception& e) {
    detail::write_json(dir / "FAILED", {{"stage", stage}, {"error", e.what()}});
    throw RunFailure(stage, dir, e.what());
  }
  return res;
}

// ---- plot tables ----------------------------------------------------------

inline const std::vector<std::string>& plot_views() {
  static const std::vector<std::string> v{"reward-curve", "diversity", "weights", "schedules"};
  return v;
}

/// Writes <dir>/plots/<view>.tsv from the run's logs and returns its path.
inline std::filesystem::path emit_plot_data(const std::filesystem::path& dir, const std::string& view) {
  if (std::find(plot_views().begin(), plot_views().end(), view) == plot_views().end()) {
    throw ConfigError("unknown plot view '" + view + "'");
  }
  if (std::filesystem::exists(dir / "FAILED")) throw std::runtime_error("run " + dir.string() + " did not complete");
  std::filesystem::create_directories(dir / "plots");
  const auto out_path = dir / "plots" / (view + ".tsv");
  std::ostringstream os;
  os << std::setprecision(17);
  if (view == "reward-curve" || view == "diversity") {
    std::ifstream is(dir / "rl.jsonl");
    if (!is) throw std::runtime_error("view '" + view + "' needs an rl-finetune run");
    std::string line, first_schedule;
    os << (view == "reward-curve" ? "iteration\tmean_reward\tclip_fraction\n"
                                  : "schedule\titeration\tmean_pairwise_distance\tcovariance_trace\n");
    while (std::getline(is, line)) {
      const auto j = nlohmann::json::parse(line);
      const auto sched = j.at("schedule").get<std::string>();
      if (view == "reward-curve") {
        if (first_schedule.empty()) first_schedule = sched;
        if (sched != first_schedule) continue;
        os << j.at("iteration").get<std::size_t>() << '\t' << j.at("mean_reward").get<double>() << '\t'
           << j.at("clip_fraction").get<double>() << '\n';
      } else {
        os << sched << '\t' << j.at("iteration").get<std::size_t>() << '\t'
           << j.at("mean_pairwise_distance").get<double>() << '\t' << j.at("covariance_trace").get<double>() << '\n';
      }
    }
  } else {
    const auto a = detail::read_json(dir / "analysis.json");
    if (view == "weights") {
      WeightTable t;
      t.s = a.at("weights").at("s").get<std::vector<double>>();
      t.W = a.at("weights").at("W").get<std::vector<double>>();
      write_weight_table(os, t);
    } else {
      os << "schedule\tbudget\ttrace\n";
      for (const auto& r : a.at("schedules")) {
        os << r.at("schedule").get<std::string>() << '\t' << r.at("budget").get<double>() << '\t'
           << r.at("trace").get<double>() << '\n';
      }
    }
  }
  std::ofstream out(out_path);
  out << os.str();
  if (!out) throw std::runtime_error("cannot write " + out_path.string());
  return out_path;
}

/// Views that a finished run has data for.
inline std::vector<std::string> available_plot_views(const std::filesystem::path& dir) {
  std::vector<std::string> v;
  if (std::filesystem::exists(dir / "rl.jsonl")) v.insert(v.end(), {"reward-curve", "diversity"});
  if (std::filesystem::exists(dir / "analysis.json")) v.insert(v.end(), {"weights", "schedules"});
  return v;
}

}  // namespace hicogen
