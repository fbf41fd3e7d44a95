#include <catch_amalgamated.hpp>

#include "hicogen/chain.hpp"

using namespace hicogen;

namespace {

ConceptPools tiny_pools() {
  ConceptPools p = default_pools();
  p.subjects = {"dog"};
  p.clothing = {"superman's costume"};
  p.holding = {"sign"};
  p.accessory = {"goggles"};
  return p;
}

const SceneLexicon& lexicon() {
  static const SceneLexicon lex(default_pools(), SceneConfig{});
  return lex;
}

std::set<std::string> tokens_of(const std::vector<std::string>& phrases) {
  std::set<std::string> out;
  for (const auto& p : phrases) {
    for (auto& t : tokenize(p)) out.insert(t);
  }
  return out;
}

}  // namespace

TEST_CASE("pools are consistent") {
  const auto p = default_pools();
  REQUIRE_NOTHROW(p.validate());
  CHECK(p.subjects.size() >= 40);
  const auto subject_tokens = tokens_of(p.subjects);
  const auto connector_tokens = tokens_of(p.connectors);
  std::vector<std::string> cats = p.clothing;
  cats.insert(cats.end(), p.holding.begin(), p.holding.end());
  cats.insert(cats.end(), p.accessory.begin(), p.accessory.end());
  const auto category_tokens = tokens_of(cats);
  std::vector<std::string> qual = p.adjectives;
  qual.insert(qual.end(), p.details.begin(), p.details.end());
  for (const auto& [k, v] : TemplateAttributeRewriter::exemplars()) qual.push_back(v);
  for (const auto& t : tokens_of(qual)) {
    if (stopwords().count(t)) continue;
    INFO(t);
    CHECK_FALSE(subject_tokens.count(t));
    CHECK_FALSE(connector_tokens.count(t));
  }
  for (const auto& t : tokens_of(p.adjectives)) CHECK_FALSE(category_tokens.count(t));
}

TEST_CASE("generate_subjects") {
  const auto one = generate_subjects(tiny_pools(), 1, 3);
  REQUIRE(one.size() == 1);
  CHECK(render_clause(one[0], false) == "a dog wearing a superman's costume with goggles, holding a sign");
  CHECK_THROWS_AS(generate_subjects(tiny_pools(), 2, 3), PoolExhaustedError);

  const auto p = default_pools();
  const auto a = generate_subjects(p, 12, 11);
  CHECK(a == generate_subjects(p, 12, 11));
  std::set<std::string> labels;
  for (const auto& s : a) {
    labels.insert(s.label);
    for (const auto& at : s.attributes) labels.insert(strip_article(at.category));
  }
  CHECK(labels.size() == 12 * 4);
  // Two seeds agree on a single-subject assignment with probability
  // 1 / (48^4); over 500 seeds the expected number of agreeing pairs is ~2e-2.
  std::set<std::string> seen;
  for (std::uint64_t s = 0; s < 500; ++s) seen.insert(render_clause(generate_subjects(p, 1, s)[0], false));
  CHECK(seen.size() >= 499);
}

TEST_CASE("attribute rewriting") {
  const auto p = default_pools();
  const TemplateAttributeRewriter rw(p);
  SubjectNode woman{"woman", "a woman", "", {}};
  woman.attributes = {{AttributeKind::Clothing, "a lab coat", "a lab coat", {}, ""},
                      {AttributeKind::Accessory, "a necklace", "a necklace", {}, ""},
                      {AttributeKind::Holding, "a book", "a book", {}, ""}};
  const auto out = rewrite_attributes(woman, rw, 1);
  CHECK(out.attributes[2].text ==
        "an open ancient magic book with a thick dark brown tanned leather cover, adorned with hand-embossed golden "
        "runes and intricate patterns");
  CHECK(out.attributes[0].text == "a crisp white lab coat with embroidered name and pen-stained pocket");
  CHECK(out.attributes[1].text == "a whimsical necklace with animal-shaped pendants");
  CHECK_FALSE(out.attributes[2].qualifiers.empty());

  SubjectNode bare{"cat", "a cat", "", {}};
  CHECK(rewrite_attributes(bare, rw, 1) == bare);

  for (std::uint64_t s = 0; s < 300; ++s) {
    for (const auto& spec : generate_subjects(p, 4, s)) {
      const auto r = rewrite_attributes(spec, rw, s);
      for (const auto& a : r.attributes) {
        CHECK(word_count(a.text) <= kMaxAttributeWords);
        CHECK(check_attribute_text(a.text, a, spec).empty());
      }
    }
  }

  struct Bad final : AttributeRewriter {
    std::string describe(const AttributeNode&, const SubjectNode&, std::uint64_t, std::size_t) const override {
      return "something unrelated";
    }
  };
  try {
    rewrite_attributes(woman, Bad{}, 1);
    FAIL("expected rejection");
  } catch (const AttributeRewriteError& e) {
    CHECK(std::string(e.what()).find("woman/lab coat") != std::string::npos);
  }
}

TEST_CASE("reframe_prompt") {
  const auto p = default_pools();
  const auto specs = generate_subjects(p, 4, 5);
  const auto rec = reframe_prompt(specs, p.connectors, 9);
  CHECK(rec.stats.subjects == 4);
  CHECK(rec.stats.attributes == 12);
  CHECK(rec.stats.nodes == 17);
  CHECK(validate_tree(rec.tree).empty());
  CHECK(rec.flat == render_flat(rec.tree));
  CHECK(rec == reframe_prompt(specs, p.connectors, 9));

  const auto single = reframe_prompt({specs[0]}, p.connectors, 9);
  CHECK(single.flat == render_clause(specs[0], true));
  CHECK_THROWS(reframe_prompt({}, p.connectors, 9));
}

TEST_CASE("holographic binding") {
  const auto& lex = lexicon();
  const Vec r = lex.role(0, 1), f = lex.concept_filler("dog");
  const Vec back = circular_correlate(r, circular_convolve(r, f));
  CHECK(dot(back, f) == Catch::Approx(1.0).margin(0.35));
  CHECK(std::abs(dot(back, lex.concept_filler("cat"))) < 0.35);
}

TEST_CASE("text bindings follow the grammar") {
  const auto b = text_bindings(lexicon(), "a dog wearing a crimson lab coat, holding a book, standing next to a cat");
  const std::vector<Binding> want{{0, 0, "dog", true},
                                  {0, 1, "crimson", false},
                                  {0, 1, "lab coat", true},
                                  {0, 2, "book", true},
                                  {1, 4, "standing next to", true},
                                  {1, 0, "cat", true}};
  CHECK(b == want);
}

TEST_CASE("gaussian velocity transports noise to the target") {
  const Vec mean{2.0, -1.0};
  auto field = [&](std::span<const double> z, double t) { return gaussian_velocity(mean, 0.3, z, t); };
  const auto u1 = field(Vec{0.5, 0.5}, 1.0);
  CHECK(u1[0] == Catch::Approx(0.5 - 2.0));
  Rng rng(4);
  double m0 = 0, v0 = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const Vec z = sample_ode(field, rng.normal_vector(2), 200);
    m0 += z[0];
    v0 += (z[0] - 2.0) * (z[0] - 2.0);
  }
  CHECK(m0 / n == Catch::Approx(2.0).margin(0.02));
  CHECK(std::sqrt(v0 / n) == Catch::Approx(0.3).epsilon(0.05));
}

TEST_CASE("assemble_context") {
  const auto t = parse_prompt_text("a dog, facing a cat");
  const auto plan = synthesis_plan(t);
  const Canvas root = canvas_for(plan.steps.back(), t);
  std::map<std::string, Vec> out{{"subject:dog", Vec{1, 2}}, {"subject:cat", Vec{3, 4}}};
  const auto ctx = assemble_context(plan.steps.back(), root, Vec{0}, out);
  REQUIRE(ctx.references.size() == 2);
  CHECK(ctx.references[0] == Vec{1, 2});
  CHECK(ctx.references[1] == Vec{3, 4});
  CHECK(assemble_context(plan.steps[0], canvas_for(plan.steps[0], t), Vec{0}, out).references.empty());
  auto swapped = plan.steps.back();
  std::swap(swapped.dependencies[0], swapped.dependencies[1]);
  CHECK(assemble_context(swapped, root, Vec{0}, out).references != ctx.references);
  out.erase("subject:cat");
  CHECK_THROWS_AS(assemble_context(plan.steps.back(), root, Vec{0}, out), MissingDependencyError);
  out["subject:cat"] = Vec{NAN, 0};
  CHECK_THROWS_AS(assemble_context(plan.steps.back(), root, Vec{0}, out), MissingDependencyError);
}

TEST_CASE("coverage oracle counts exactly") {
  const auto& lex = lexicon();
  const SceneOracle oracle(lex);
  const auto tree = scene_prompt(hard_scene_domain(), 3);
  Vec ideal = oracle.ideal_scene(tree);
  const auto full = oracle.evaluate(ideal, tree);
  CHECK(full.exist() == 1.0);
  CHECK(full.attribute() == 1.0);
  CHECK(full.relationship() == 1.0);
  CHECK(full.attribute_total == 9);
  CHECK(full.relationship_total == 2);
  // Move subject 1's identity far from every ring.
  ideal[lex.config().block_dim()] += 100.0;
  const auto moved = oracle.evaluate(ideal, tree);
  CHECK(moved.exist_hits == full.exist_hits - 1);
  CHECK(moved.attribute_hits == full.attribute_hits);

  auto unknown = tree;
  unknown.subjects[0].label = "dragon";
  CHECK_THROWS_AS(oracle.evaluate(oracle.ideal_scene(tree), unknown), std::out_of_range);
}

TEST_CASE("run_chain") {
  const auto& lex = lexicon();
  const ToySceneGenerator gen(lex);
  const auto tree = scene_prompt(hard_scene_domain(), 8);
  const auto plan = synthesis_plan(tree);
  const auto a = run_chain(plan, tree, gen, 21, {.keep_trajectories = true});
  REQUIRE(a.complete);
  CHECK(a.outputs.size() == plan.steps.size());
  CHECK(a.composite.size() == 3 * lex.config().block_dim());
  CHECK(a.trajectories.front().has_value());
  const auto b = run_chain(plan, tree, gen, 21);
  CHECK(a.outputs == b.outputs);

  // A single-step plan is the generator's direct call.
  const auto mono = monolithic_plan(tree);
  const auto m = run_chain(mono, tree, gen, 21);
  const ConditionContext ctx{canvas_for(mono.steps[0], tree), gen.embed(mono.steps[0].prompt), {}};
  CHECK(m.composite == gen.generate(ctx, derive_seed(21, 0)).latent);

  struct Flaky final : GeneratorBackend {
    const ToySceneGenerator* inner;
    explicit Flaky(const ToySceneGenerator* g) : inner(g) {}
    Vec embed(std::string_view t) const override { return inner->embed(t); }
    Generation generate(const ConditionContext& c, std::uint64_t s) const override {
      if (c.canvas.kind == CanvasKind::Subject) throw std::runtime_error("backend down");
      return inner->generate(c, s);
    }
  };
  const Flaky flaky(&gen);
  const auto f = run_chain(plan, tree, flaky, 21);
  CHECK_FALSE(f.complete);
  CHECK(f.composite.empty());
  REQUIRE(f.failed_step.has_value());
  CHECK(*f.failed_step == 3);
  CHECK(f.outputs.size() == 3);
  CHECK(f.error.find("backend down") != std::string::npos);
  CHECK_THROWS(concept_coverage(f, tree, SceneOracle(lex)));
}

TEST_CASE("chained generation covers more than a single pass") {
  const auto cmp = compare_chain_modes(hard_scene_domain(), 24, 99);
  const auto& chain = cmp.coverage.at(ChainMode::Chain);
  const auto& mono = cmp.coverage.at(ChainMode::Monolithic);
  CHECK(chain.attribute() > mono.attribute());
  CHECK(chain.exist() >= mono.exist());
  CHECK(chain.relationship() >= mono.relationship());
}
