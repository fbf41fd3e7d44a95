#include <catch_amalgamated.hpp>

#include "hicogen/prompt_tree.hpp"
#include "hicogen/rng.hpp"

using namespace hicogen;

namespace {

PromptTree three_by_three() {
  PromptTree t;
  const char* subjects[] = {"dog", "cat", "robot"};
  const char* clothing[] = {"a superman's costume", "a lab coat", "a raincoat"};
  const char* holding[] = {"a sign", "a book", "a lantern"};
  const char* accessory[] = {"goggles", "a necklace", "a scarf"};
  for (int i = 0; i < 3; ++i) {
    SubjectNode s{subjects[i], std::string("a ") + subjects[i], "", {}};
    s.attributes.push_back({AttributeKind::Clothing, clothing[i], std::string("a bright ") + strip_article(clothing[i]),
                            {"bright"}, ""});
    s.attributes.push_back({AttributeKind::Holding, holding[i], holding[i], {}, ""});
    s.attributes.push_back({AttributeKind::Accessory, accessory[i], accessory[i], {}, ""});
    t.subjects.push_back(std::move(s));
  }
  t.connectors = {"standing next to", "chasing"};
  t.root_text = render_flat(t);
  return t;
}

PromptTree random_tree(Rng& rng) {
  PromptTree t;
  const std::size_t n = 1 + rng.index(6);
  for (std::size_t i = 0; i < n; ++i) {
    SubjectNode s;
    s.label = "subject" + std::to_string(i);
    s.text = "a " + s.label;
    const AttributeKind kinds[] = {AttributeKind::Clothing, AttributeKind::Accessory, AttributeKind::Holding};
    for (auto k : kinds) {
      if (rng.uniform() < 0.5) continue;
      const std::string cat = std::string(to_string(k)) + std::to_string(i);
      s.attributes.push_back({k, cat, cat, {}, ""});
    }
    t.subjects.push_back(std::move(s));
    if (i > 0) t.connectors.push_back(default_connectors()[rng.index(default_connectors().size())]);
  }
  t.root_text = render_flat(t);
  return t;
}

}  // namespace

TEST_CASE("parse template text") {
  const auto t = parse_prompt_text("a dog wearing a superman's costume with goggles, holding a sign");
  REQUIRE(t.subjects.size() == 1);
  const auto& s = t.subjects[0];
  CHECK(s.label == "dog");
  REQUIRE(s.attributes.size() == 3);
  CHECK(s.attributes[0].kind == AttributeKind::Clothing);
  CHECK(strip_article(s.attributes[0].category) == "superman's costume");
  CHECK(s.attributes[1].kind == AttributeKind::Accessory);
  CHECK(s.attributes[1].category == "goggles");
  CHECK(s.attributes[2].kind == AttributeKind::Holding);
  CHECK(strip_article(s.attributes[2].category) == "sign");
  CHECK(render_flat(t) == t.root_text);
}

TEST_CASE("parse bare subject and multi-subject text") {
  const auto bare = parse_prompt_text("a cat");
  REQUIRE(bare.subjects.size() == 1);
  CHECK(bare.subjects[0].attributes.empty());
  CHECK(bare.connectors.empty());

  const std::string text = "a dog wearing a raincoat, holding a sign, standing next to  a cat with a scarf";
  const auto t = parse_prompt_text(text);
  REQUIRE(t.subjects.size() == 2);
  CHECK(t.connectors == std::vector<std::string>{"standing next to"});
  CHECK(t.subjects[1].label == "cat");
  CHECK(normalize_whitespace(render_flat(t)) == normalize_whitespace(text));
  CHECK(parse_prompt_text(text) == t);
}

TEST_CASE("parse errors name the offending span") {
  CHECK_THROWS_AS(parse_prompt_text(""), PromptTreeError);
  try {
    parse_prompt_text("a dog, holding a sign wearing a hat");
    FAIL("expected a parse error");
  } catch (const PromptTreeError& e) {
    CHECK(std::string(e.what()).find("out of order") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_prompt_text("a dog wearing a hat wearing a coat"), PromptTreeError);
  CHECK_THROWS_AS(parse_prompt_text("a dog, chasing a dog"), PromptTreeError);
}

TEST_CASE("structured record round-trip") {
  const auto t = three_by_three();
  CHECK(t.attribute_count() == 9);
  const auto j = to_json(t);
  const std::string dumped = j.dump(2);
  const auto back = parse_prompt_record(nlohmann::ordered_json::parse(dumped));
  CHECK(back == t);
  CHECK(to_json(back).dump(2) == dumped);
  auto bad = j;
  bad["schema"] = "hicoprompt-tree/0";
  CHECK_THROWS_AS(parse_prompt_record(bad), PromptTreeError);
}

TEST_CASE("validate_tree reports every violation") {
  CHECK(validate_tree(three_by_three()).empty());
  auto t = three_by_three();
  t.subjects[2].label = "dog";
  t.subjects[1].attributes[0].text = "";
  const auto errs = validate_tree(t);
  REQUIRE(errs.size() >= 2);
  bool dup = false, empty = false;
  for (const auto& e : errs) {
    if (e.find("subjects[0]") != std::string::npos && e.find("subjects[2]") != std::string::npos) dup = true;
    if (e.find("subjects[1].attributes[0]: empty text") != std::string::npos) empty = true;
  }
  CHECK(dup);
  CHECK(empty);
  CHECK_FALSE(validate_tree(PromptTree{}).empty());
}

TEST_CASE("template rewriter") {
  auto t = parse_prompt_text("a dog wearing a lab coat with a necklace, holding a book");
  const std::string book = "an open ancient magic book with a thick dark brown tanned leather cover";
  t.subjects[0].attributes[2].text = book;
  t.subjects[0].attributes[2].qualifiers = extract_qualifiers(book, "a book");
  t.root_text = render_flat(t);
  const auto r = rewrite_levels(t, TemplateRewriter{});
  CHECK(r.subjects[0].attributes[2].level_prompt == book);
  CHECK(r.subjects[0].level_prompt == "a dog wearing a lab coat with a necklace, holding a book");
  CHECK(r.root_level_prompt == "a dog");
  CHECK(validate_tree(r).empty());

  const auto bare = rewrite_levels(parse_prompt_text("a cat, chasing a mouse"), TemplateRewriter{});
  CHECK(bare.subjects[0].level_prompt == "cat");
  CHECK(bare.subjects[1].level_prompt == "mouse");
}

TEST_CASE("containment violations are rejected") {
  struct Leaky final : LevelRewriter {
    PromptTree rewrite(const PromptTree& t) const override {
      PromptTree out = TemplateRewriter{}.rewrite(t);
      out.subjects[0].level_prompt = "a dog holding an ancient book";
      return out;
    }
  };
  auto t = parse_prompt_text("a dog, holding a book");
  t.subjects[0].attributes[0].text = "an ancient book";
  t.subjects[0].attributes[0].qualifiers = {"ancient"};
  t.root_text = render_flat(t);
  try {
    rewrite_levels(t, Leaky{});
    FAIL("expected rejection");
  } catch (const PromptTreeError& e) {
    CHECK(std::string(e.what()).find("'ancient'") != std::string::npos);
  }
}

TEST_CASE("synthesis plans") {
  const auto t = parse_prompt_text("a dog with goggles, facing a cat, holding a sign");
  const auto plan = synthesis_plan(t);
  REQUIRE(plan.steps.size() == 5);
  CHECK(plan.steps[0].level == NodeLevel::Attribute);
  CHECK(plan.steps[1].node == "subject:dog");
  CHECK(plan.steps[1].dependencies == std::vector<std::string>{plan.steps[0].node});
  CHECK(plan.steps[2].level == NodeLevel::Attribute);
  CHECK(plan.steps[3].node == "subject:cat");
  CHECK(plan.steps[4].node == kRootNodeId);
  CHECK(plan.steps[4].dependencies == std::vector<std::string>{"subject:dog", "subject:cat"});

  const auto single = synthesis_plan(parse_prompt_text("a cat"));
  REQUIRE(single.steps.size() == 2);
  CHECK(single.steps[0].level == NodeLevel::Subject);

  const auto folded = synthesis_plan(t, {.fold_attributes = true});
  REQUIRE(folded.steps.size() == 3);
  CHECK(folded.steps[0].prompt == "a dog with goggles");
  CHECK(folded.steps[0].dependencies.empty());

  CHECK(monolithic_plan(t).steps.size() == 1);
}

TEST_CASE("plans are topological over random trees") {
  Rng rng(42);
  for (int i = 0; i < 1000; ++i) {
    const auto t = random_tree(rng);
    REQUIRE(validate_tree(t).empty());
    const auto plan = synthesis_plan(t);
    CHECK(plan.violations().empty());
    CHECK(plan.steps.size() == t.node_count());
    CHECK(synthesis_plan(t, {.fold_attributes = true}).steps.size() == t.subjects.size() + 1);
    const auto r = rewrite_levels(t, TemplateRewriter{});
    CHECK(same_topology(t, r));
    CHECK(parse_prompt_text(t.root_text) == t);
  }
}

TEST_CASE("other attributes keep their order") {
  const auto t = parse_prompt_text("a fox with a scarf, and a red kite, and a tiny drum");
  REQUIRE(t.subjects[0].attributes.size() == 3);
  CHECK(t.subjects[0].attributes[1].category == "a red kite");
  CHECK(t.subjects[0].attributes[2].category == "a tiny drum");
  CHECK(render_flat(t) == t.root_text);
}
