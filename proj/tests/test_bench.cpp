#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hicogen/bench.hpp"
#include "hicogen/chain.hpp"

using namespace hicogen;

namespace {

BenchConfig small_config() {
  BenchConfig c;
  c.train_size = 120;
  c.test_size = 30;
  c.seed = 17;
  return c;
}

const SceneLexicon& lexicon() {
  static const SceneLexicon lex(default_pools(), SceneConfig{});
  return lex;
}

}  // namespace

TEST_CASE("splits are deterministic, disjoint and valid") {
  const auto pools = default_pools();
  const TemplateAttributeRewriter rw(pools);
  const auto cfg = small_config();
  const auto d = generate_dataset(pools, rw, cfg);
  REQUIRE(d.train.size() == 120);
  REQUIRE(d.test.size() == 30);
  CHECK(d.train.front().id == 0);
  CHECK(d.test.front().id == 120);
  std::set<std::uint64_t> ids, seeds;
  for (const auto* split : {&d.train, &d.test}) {
    for (const auto& r : *split) {
      ids.insert(r.id);
      seeds.insert(r.seed);
      CHECK(r.stats.subjects >= 4);
      CHECK(r.stats.subjects <= 12);
      CHECK(validate_tree(r.tree).empty());
      CHECK(r.stats == compute_statistics(r.tree));
    }
  }
  CHECK(ids.size() == 150);
  CHECK(seeds.size() == 150);

  auto cfg4 = cfg;
  cfg4.workers = 4;
  const auto again = generate_dataset(pools, rw, cfg4);
  CHECK(again.train == d.train);
  CHECK(again.test == d.test);
  CHECK(again.manifest == d.manifest);

  auto other = cfg;
  other.seed = 18;
  CHECK(generate_split(pools, rw, other, Split::Test) != d.test);
}

TEST_CASE("records round-trip through line-delimited text") {
  const auto pools = default_pools();
  const auto d = generate_dataset(pools, TemplateAttributeRewriter(pools), small_config());
  std::stringstream ss;
  write_records(ss, d.test);
  const auto back = read_records(ss);
  CHECK(back == d.test);

  auto j = to_json(d.test[0]);
  j["stats"]["subjects"] = 99;
  std::stringstream bad(j.dump() + "\n");
  CHECK_THROWS_AS(read_records(bad), RecordError);
  auto k = to_json(d.test[0]);
  k["flat"] = "a cat";
  std::stringstream bad2(k.dump() + "\n");
  CHECK_THROWS_AS(read_records(bad2), RecordError);
}

TEST_CASE("pool arithmetic bounds the duplicate rate") {
  const auto p = default_pools();
  // Distinct 4-subject prompts: ordered subject choices times ordered
  // choices per attribute kind times connector choices.
  auto log_perm = [](double n, double k) { return std::lgamma(n + 1) - std::lgamma(n - k + 1); };
  const double log_m = log_perm(static_cast<double>(p.subjects.size()), 4) +
                       log_perm(static_cast<double>(p.clothing.size()), 4) +
                       log_perm(static_cast<double>(p.holding.size()), 4) +
                       log_perm(static_cast<double>(p.accessory.size()), 4) +
                       3 * std::log(static_cast<double>(p.connectors.size()));
  // Birthday bound for 15000 records restricted to the smallest subject count.
  const double bound = std::exp(2 * std::log(15000.0) - std::log(2.0) - log_m);
  CHECK(bound < 0.01);
}

TEST_CASE("answers parse from judge replies") {
  CHECK(parse_answer("Description: a dog\nReason: visible\nOutput: Yes") == Answer::Yes);
  CHECK(parse_answer("Output: [No]") == Answer::No);
  CHECK(parse_answer("Unclear") == Answer::Unclear);
  CHECK_FALSE(parse_answer("Output: maybe").has_value());
}

TEST_CASE("oracle judge accuracies") {
  const auto& lex = lexicon();
  const SceneOracle oracle(lex);
  const OracleJudge judge(lex);
  const auto pools = default_pools();
  const auto d = generate_dataset(pools, TemplateAttributeRewriter(pools), small_config());
  std::vector<EvalItem> ideal;
  for (const auto& r : d.test) ideal.push_back({&r, oracle.ideal_scene(r.tree)});
  const auto rep = evaluate_accuracy(ideal, judge);
  CHECK(rep.exist.accuracy() == 1.0);
  CHECK(rep.attribute.accuracy() == 1.0);
  CHECK(rep.relationship.accuracy() == 1.0);
  CHECK(rep.skipped.empty());

  // Shift every position so no relative offset matches.
  auto broken = ideal;
  const std::size_t bd = lex.config().block_dim(), sd = lex.config().slot_dim;
  for (auto& item : broken) {
    for (std::size_t i = 0; i < item.record->tree.subjects.size(); ++i) {
      item.sample[i * bd + 4 * sd] += 10.0 * static_cast<double>(i);
    }
  }
  const auto rb = evaluate_accuracy(broken, judge);
  CHECK(rb.relationship.accuracy() == 0.0);
  CHECK(rb.exist == rep.exist);
  CHECK(rb.attribute == rep.attribute);

  // Permutation leaves the counts unchanged.
  auto shuffled = ideal;
  std::reverse(shuffled.begin(), shuffled.end());
  const auto rs = evaluate_accuracy(shuffled, judge, 3);
  CHECK(rs.exist == rep.exist);
  CHECK(rs.attribute == rep.attribute);

  // Unclear stays in the denominator.
  auto unclear = ideal;
  unclear[0].sample[0] = NAN;
  const auto ru = evaluate_accuracy(unclear, judge);
  CHECK(ru.exist.unclear == 1);
  CHECK(ru.exist.total() == rep.exist.total());
  CHECK(ru.exist.accuracy() < 1.0);

  // A failing judge skips the record rather than scoring it.
  auto wrong = ideal;
  wrong[1].sample.resize(3);
  const auto rw = evaluate_accuracy(wrong, judge);
  REQUIRE(rw.skipped.size() == 1);
  CHECK(rw.skipped[0].first == ideal[1].record->id);
  CHECK(rw.records.size() == ideal.size() - 1);
}

TEST_CASE("chained results judge at least as well as a single pass") {
  const auto& lex = lexicon();
  const ToySceneGenerator gen(lex);
  const OracleJudge judge(lex);
  const auto pools = default_pools();
  auto cfg = small_config();
  cfg.test_size = 12;
  const auto test = generate_split(pools, TemplateAttributeRewriter(pools), cfg, Split::Test);
  std::vector<EvalItem> chain, mono;
  for (const auto& r : test) {
    chain.push_back({&r, run_chain(synthesis_plan(r.tree), r.tree, gen, r.seed).composite});
    mono.push_back({&r, run_chain(monolithic_plan(r.tree), r.tree, gen, r.seed).composite});
  }
  const auto a = evaluate_accuracy(chain, judge);
  const auto b = evaluate_accuracy(mono, judge);
  CHECK(a.exist.accuracy() >= b.exist.accuracy());
  CHECK(a.attribute.accuracy() >= b.attribute.accuracy());
  CHECK(a.relationship.accuracy() >= b.relationship.accuracy());
}
