#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hicogen/runner.hpp"

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kRuntimeFailure = 2, kAcceptanceFailure = 3 };

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> out;
  bool enforce = false;
  bool dump = false;
};

void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("-c,--config", o.config, "JSON run configuration");
  sub->add_option("-s,--set", o.sets, "Override a config key, e.g. --set grpo.iterations=50")->take_all();
  sub->add_option("--seed", o.seed, "Run seed");
  sub->add_option("-j,--workers", o.workers, "Worker threads (0 = all cores)");
  sub->add_option("-o,--out", o.out, "Parent directory for run directories");
  sub->add_flag("--enforce-checks", o.enforce, "Exit with status 3 when a run check fails");
  sub->add_flag("--print-config", o.dump, "Print the resolved configuration and exit");
}

hicogen::RunConfig resolve(const std::string& kind, const CommonOptions& o) {
  nlohmann::json doc = nlohmann::json::object();
  if (!o.config.empty()) {
    std::ifstream is(o.config);
    if (!is) throw hicogen::ConfigError("cannot open config " + o.config);
    try {
      doc = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
      throw hicogen::ConfigError("config " + o.config + " is not valid JSON: " + e.what());
    }
    if (doc.contains("kind") && doc["kind"] != kind) {
      throw hicogen::ConfigError("config is for '" + doc["kind"].dump() + "', not '" + kind + "'");
    }
  }
  doc["kind"] = kind;
  for (const auto& s : o.sets) hicogen::apply_override(doc, s);
  if (o.seed) doc["seed"] = *o.seed;
  if (o.workers) doc["workers"] = *o.workers;
  if (o.out) doc["output_dir"] = *o.out;
  if (o.enforce) doc["enforce_checks"] = true;
  return hicogen::run_config_from_json(doc);
}

int run(const hicogen::RunConfig& cfg) {
  const auto res = hicogen::run_experiment(cfg);
  std::cout << "run directory: " << res.directory.string() << '\n';
  for (const auto& c : res.checks) {
    std::cout << (c.passed ? "  ok    " : "  FAIL  ") << c.name;
    if (!c.detail.empty()) std::cout << "  (" << c.detail << ')';
    std::cout << '\n';
  }
  if (cfg.enforce_checks && !res.checks_passed()) return kAcceptanceFailure;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hicogen: hierarchical compositional generation experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", HICOGEN_VERSION);

  const std::vector<std::string> kinds{"pretrain", "rl-finetune", "analyze-schedule", "chain-eval", "benchgen", "judge"};
  const std::map<std::string, std::string> blurbs{
      {"pretrain", "Train the flow-matching velocity field on the ring domain"},
      {"rl-finetune", "GRPO fine-tuning under one or more stochasticity schedules"},
      {"analyze-schedule", "Lyapunov weight function, schedule comparison and Monte Carlo check"},
      {"chain-eval", "Concept coverage of chained vs monolithic synthesis"},
      {"benchgen", "Generate the structured prompt benchmark"},
      {"judge", "Judge generated scenes against benchmark questions"}};
  std::map<std::string, CommonOptions> opts;
  std::map<std::string, CLI::App*> subs;
  for (const auto& k : kinds) {
    subs[k] = app.add_subcommand(k, blurbs.at(k));
    add_common(subs[k], opts[k]);
  }

  std::string plot_run;
  std::vector<std::string> plot_views;
  auto* plots = app.add_subcommand("emit-plots", "Write tab-separated plot tables for a finished run");
  plots->add_option("run", plot_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  plots->add_option("-v,--view", plot_views, "reward-curve, diversity, weights or schedules (default: all available)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  try {
    if (plots->parsed()) {
      if (plot_views.empty()) plot_views = hicogen::available_plot_views(plot_run);
      if (plot_views.empty()) throw hicogen::ConfigError("run " + plot_run + " has no plottable data");
      for (const auto& v : plot_views) std::cout << hicogen::emit_plot_data(plot_run, v).string() << '\n';
      return kOk;
    }
    for (const auto& k : kinds) {
      if (!subs[k]->parsed()) continue;
      const auto cfg = resolve(k, opts[k]);
      if (opts[k].dump) {
        std::cout << hicogen::to_json(cfg).dump(2) << '\n';
        return kOk;
      }
      return run(cfg);
    }
  } catch (const hicogen::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const hicogen::RunFailure& e) {
    std::cerr << "run failed: " << e.what() << "\n  see " << (e.directory() / "FAILED").string() << '\n';
    return kRuntimeFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kConfigError;
}
