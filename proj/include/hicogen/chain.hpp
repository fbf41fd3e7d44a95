#pragma once

// Chain-of-Synthesis executor: runs a synthesis plan step by step, feeding
// each step's output into the contexts of the steps that depend on it.

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hicogen/parallel.hpp"
#include "hicogen/pools.hpp"
#include "hicogen/prompt_tree.hpp"
#include "hicogen/rng.hpp"
#include "hicogen/scene.hpp"

namespace hicogen {

inline Canvas canvas_for(const PlanStep& step, const PromptTree& tree) {
  switch (step.level) {
    case NodeLevel::Attribute:
      return {CanvasKind::Attribute, slot_of(tree.subjects.at(step.subject).attributes.at(step.attribute).kind), 1};
    case NodeLevel::Subject: return {CanvasKind::Subject, SceneSlot::Identity, 1};
    case NodeLevel::Root: return {CanvasKind::Scene, SceneSlot::Identity, tree.subjects.size()};
  }
  throw std::logic_error("unknown node level");
}

class MissingDependencyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// References follow the step's dependency order.
inline ConditionContext assemble_context(const PlanStep& step, const Canvas& canvas, Vec embedding,
                                         const std::map<std::string, Vec>& outputs) {
  ConditionContext ctx{canvas, std::move(embedding), {}};
  for (const auto& dep : step.dependencies) {
    auto it = outputs.find(dep);
    if (it == outputs.end()) throw MissingDependencyError("step '" + step.node + "' is missing output of '" + dep + "'");
    if (!all_finite(it->second)) throw MissingDependencyError("output of '" + dep + "' is not finite");
    ctx.references.push_back(it->second);
  }
  return ctx;
}

struct ChainOptions {
  bool keep_trajectories = false;
};

struct ChainResult {
  /// Plan order; outputs[k] belongs to nodes[k].
  std::vector<std::string> nodes;
  std::vector<Vec> outputs;
  std::vector<std::optional<Trajectory>> trajectories;
  /// Empty unless every step succeeded.
  Vec composite;
  bool complete = false;
  std::optional<std::size_t> failed_step;
  std::string error;

  const Vec& output(const std::string& node) const {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k] == node) return outputs[k];
    }
    throw std::out_of_range("no output for node '" + node + "'");
  }
};

/// Step k draws its noise from derive_seed(seed, k). A failing step stops
/// the chain; earlier outputs stay in the result.
inline ChainResult run_chain(const SynthesisPlan& plan, const PromptTree& tree, const GeneratorBackend& generator,
                             std::uint64_t seed, const ChainOptions& opt = {}) {
  if (auto v = plan.violations(); !v.empty()) throw std::invalid_argument("run_chain: " + v.front());
  ChainResult res;
  std::map<std::string, Vec> produced;
  for (std::size_t k = 0; k < plan.steps.size(); ++k) {
    const auto& step = plan.steps[k];
    try {
      auto ctx = assemble_context(step, canvas_for(step, tree), generator.embed(step.prompt), produced);
      Generation g = generator.generate(ctx, derive_seed(seed, k));
      if (!all_finite(g.latent)) throw std::runtime_error("non-finite output");
      produced[step.node] = g.latent;
      res.nodes.push_back(step.node);
      res.outputs.push_back(std::move(g.latent));
      res.trajectories.push_back(opt.keep_trajectories ? std::move(g.trajectory) : std::nullopt);
    } catch (const std::exception& e) {
      res.failed_step = k;
      res.error = "step " + std::to_string(k) + " (" + step.node + "): " + e.what();
      return res;
    }
  }
  res.composite = res.outputs.back();
  res.complete = true;
  return res;
}

inline CoverageReport concept_coverage(const ChainResult& result, const PromptTree& tree, const SceneOracle& oracle) {
  if (!result.complete) throw std::invalid_argument("concept_coverage: chain did not complete: " + result.error);
  return oracle.evaluate(result.composite, tree);
}

inline nlohmann::ordered_json to_json(const CoverageReport& c) {
  return {{"exist", c.exist()},
          {"attribute", c.attribute()},
          {"relationship", c.relationship()},
          {"counts",
           {{"exist", {c.exist_hits, c.exist_total}},
            {"attribute", {c.attribute_hits, c.attribute_total}},
            {"relationship", {c.relationship_hits, c.relationship_total}}}}};
}

inline nlohmann::ordered_json to_json(const ChainResult& r) {
  nlohmann::ordered_json steps = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < r.nodes.size(); ++k) steps.push_back({{"node", r.nodes[k]}, {"latent", r.outputs[k]}});
  nlohmann::ordered_json j{{"complete", r.complete}, {"steps", std::move(steps)}, {"composite", r.composite}};
  if (r.failed_step) {
    j["failed_step"] = *r.failed_step;
    j["error"] = r.error;
  }
  return j;
}

// ---- paired experiments ---------------------------------------------------

struct SceneDomain {
  ConceptPools pools = default_pools();
  SceneConfig config{};
  std::size_t subjects = 3;
};

/// Three subjects with three detailed attributes each.
inline SceneDomain hard_scene_domain() { return SceneDomain{}; }

/// Prompt for trial `seed`: sampled subjects, template-rewritten attributes,
/// sampled connectors, template level prompts.
inline PromptTree scene_prompt(const SceneDomain& d, std::uint64_t seed) {
  const auto specs = generate_subjects(d.pools, d.subjects, derive_seed(seed, 1));
  const TemplateAttributeRewriter rewriter(d.pools);
  std::vector<SubjectNode> detailed;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    detailed.push_back(rewrite_attributes(specs[i], rewriter, derive_seed(seed, 100 + i)));
  }
  return reframe_prompt(detailed, d.pools.connectors, derive_seed(seed, 2)).tree;
}

enum class ChainMode { Chain, Folded, Monolithic };

inline const char* to_string(ChainMode m) {
  switch (m) {
    case ChainMode::Chain: return "chain";
    case ChainMode::Folded: return "folded";
    case ChainMode::Monolithic: return "monolithic";
  }
  return "?";
}

inline ChainMode chain_mode_from_string(const std::string& s) {
  if (s == "chain") return ChainMode::Chain;
  if (s == "folded") return ChainMode::Folded;
  if (s == "monolithic") return ChainMode::Monolithic;
  throw std::invalid_argument("unknown chain mode '" + s + "'");
}

inline SynthesisPlan plan_for(const PromptTree& tree, ChainMode mode) {
  switch (mode) {
    case ChainMode::Chain: return synthesis_plan(tree);
    case ChainMode::Folded: return synthesis_plan(tree, {.fold_attributes = true});
    case ChainMode::Monolithic: return monolithic_plan(tree);
  }
  throw std::logic_error("unknown chain mode");
}

struct ChainComparison {
  std::size_t trials = 0;
  std::map<ChainMode, CoverageReport> coverage;
};

/// Every mode sees the same prompts and the same sampling seeds; trial i
/// uses scene_prompt(derive_seed(seed, i)).
inline ChainComparison compare_chain_modes(const SceneDomain& domain, std::size_t trials, std::uint64_t seed,
                                           const std::vector<ChainMode>& modes = {ChainMode::Chain, ChainMode::Folded,
                                                                                  ChainMode::Monolithic},
                                           std::size_t workers = 1) {
  const SceneLexicon lex(domain.pools, domain.config);
  const ToySceneGenerator gen(lex);
  const SceneOracle oracle(lex);
  std::vector<std::vector<CoverageReport>> per(trials, std::vector<CoverageReport>(modes.size()));
  parallel_for(trials, workers, [&](std::size_t i) {
    const std::uint64_t s = derive_seed(seed, i);
    const PromptTree tree = scene_prompt(domain, s);
    for (std::size_t m = 0; m < modes.size(); ++m) {
      const auto res = run_chain(plan_for(tree, modes[m]), tree, gen, derive_seed(s, 7));
      per[i][m] = concept_coverage(res, tree, oracle);
    }
  });
  ChainComparison out;
  out.trials = trials;
  for (std::size_t m = 0; m < modes.size(); ++m) {
    CoverageReport total;
    for (std::size_t i = 0; i < trials; ++i) total += per[i][m];
    out.coverage[modes[m]] = total;
  }
  return out;
}

}  // namespace hicogen
