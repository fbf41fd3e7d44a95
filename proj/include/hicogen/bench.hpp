#pragma once

// Benchmark datasets of hierarchical prompts and the three-family accuracy
// harness (existence, attribute, relationship) over pluggable judges.

#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "hicogen/parallel.hpp"
#include "hicogen/pools.hpp"
#include "hicogen/prompt_tree.hpp"
#include "hicogen/rng.hpp"
#include "hicogen/scene.hpp"

#include "json.hpp"

namespace hicogen {

inline constexpr const char* kDatasetRecordSchema = "hicoprompt-record/1";
inline constexpr const char* kDatasetManifestSchema = "hicoprompt-dataset/1";

struct BenchConfig {
  std::size_t train_size = 12000;
  std::size_t test_size = 3000;
  std::size_t min_subjects = 4;
  std::size_t max_subjects = 12;
  std::uint64_t seed = 1;
  std::size_t workers = 1;

  void validate(const ConceptPools& pools) const {
    if (min_subjects == 0 || min_subjects > max_subjects) {
      throw std::invalid_argument("BenchConfig: need 1 <= min_subjects <= max_subjects");
    }
    const std::size_t smallest =
        std::min({pools.subjects.size(), pools.clothing.size(), pools.holding.size(), pools.accessory.size()});
    if (max_subjects > smallest) {
      throw std::invalid_argument("BenchConfig: max_subjects exceeds the smallest pool (" + std::to_string(smallest) + ")");
    }
  }
};

inline std::uint64_t split_seed(std::uint64_t seed, Split split) { return derive_seed(seed, hash_label(to_string(split))); }

/// First id of a split; train ids precede test ids.
inline std::uint64_t split_base_id(const BenchConfig& cfg, Split split) {
  return split == Split::Train ? 0 : cfg.train_size;
}

/// One record from its own seed: subject count, subjects, detailed
/// attributes and connectors all derive from `seed`.
inline DatasetRecord generate_record(const ConceptPools& pools, const AttributeRewriter& rewriter, std::uint64_t id,
                                     Split split, std::uint64_t seed, std::size_t min_subjects,
                                     std::size_t max_subjects) {
  Rng rng(seed);
  const std::size_t n = min_subjects + rng.index(max_subjects - min_subjects + 1);
  const auto specs = generate_subjects(pools, n, derive_seed(seed, 1));
  std::vector<SubjectNode> detailed;
  detailed.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    detailed.push_back(rewrite_attributes(specs[i], rewriter, derive_seed(seed, 100 + i)));
  }
  DatasetRecord rec = reframe_prompt(detailed, pools.connectors, derive_seed(seed, 2));
  rec.id = id;
  rec.split = split;
  rec.seed = seed;
  return rec;
}

inline std::vector<DatasetRecord> generate_split(const ConceptPools& pools, const AttributeRewriter& rewriter,
                                                 const BenchConfig& cfg, Split split) {
  cfg.validate(pools);
  const std::size_t n = split == Split::Train ? cfg.train_size : cfg.test_size;
  const std::uint64_t base = split_base_id(cfg, split);
  const std::uint64_t root = split_seed(cfg.seed, split);
  std::vector<DatasetRecord> out(n);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    out[i] = generate_record(pools, rewriter, base + i, split, derive_seed(root, i), cfg.min_subjects,
                             cfg.max_subjects);
  });
  return out;
}

/// Fraction of records whose flat prompt repeats an earlier one.
inline double duplicate_rate(const std::vector<DatasetRecord>& records) {
  if (records.empty()) return 0.0;
  std::unordered_set<std::string> seen;
  std::size_t dup = 0;
  for (const auto& r : records) {
    if (!seen.insert(r.flat).second) ++dup;
  }
  return static_cast<double>(dup) / static_cast<double>(records.size());
}

// ---- serialization --------------------------------------------------------

inline nlohmann::ordered_json to_json(const RecordStatistics& s) {
  return {{"subjects", s.subjects}, {"attributes", s.attributes}, {"nodes", s.nodes}, {"approx_tokens", s.approx_tokens}};
}

inline nlohmann::ordered_json to_json(const DatasetRecord& r) {
  return {{"schema", kDatasetRecordSchema}, {"id", r.id},       {"split", to_string(r.split)},
          {"seed", r.seed},                 {"flat", r.flat},   {"stats", to_json(r.stats)},
          {"tree", to_json(r.tree)}};
}

class RecordError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Parses and checks one record: schema, tree validity, flat text and
/// statistics recomputed from the tree.
inline DatasetRecord dataset_record_from_json(const nlohmann::ordered_json& j) {
  DatasetRecord r;
  try {
    if (j.at("schema").get<std::string>() != kDatasetRecordSchema) {
      throw RecordError("unsupported record schema '" + j.at("schema").get<std::string>() + "'");
    }
    r.id = j.at("id").get<std::uint64_t>();
    r.split = split_from_string(j.at("split").get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    r.flat = j.at("flat").get<std::string>();
    const auto& s = j.at("stats");
    r.stats = {s.at("subjects").get<std::size_t>(), s.at("attributes").get<std::size_t>(),
               s.at("nodes").get<std::size_t>(), s.at("approx_tokens").get<std::size_t>()};
    r.tree = parse_prompt_record(j.at("tree"));
  } catch (const nlohmann::json::exception& e) {
    throw RecordError(std::string("malformed record: ") + e.what());
  } catch (const PromptTreeError& e) {
    throw RecordError(std::string("record ") + std::to_string(r.id) + ": " + e.what());
  }
  if (normalize_whitespace(r.flat) != normalize_whitespace(render_flat(r.tree))) {
    throw RecordError("record " + std::to_string(r.id) + ": flat text does not match the tree");
  }
  if (!(r.stats == compute_statistics(r.tree))) {
    throw RecordError("record " + std::to_string(r.id) + ": stored statistics do not match the tree");
  }
  return r;
}

inline void write_records(std::ostream& os, const std::vector<DatasetRecord>& records) {
  for (const auto& r : records) os << to_json(r).dump() << '\n';
}

inline std::vector<DatasetRecord> read_records(std::istream& is) {
  std::vector<DatasetRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(dataset_record_from_json(nlohmann::ordered_json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw RecordError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const RecordError& e) {
      throw RecordError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<DatasetRecord> read_records(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_records(is);
}

struct SplitSummary {
  std::size_t size = 0;
  std::uint64_t first_id = 0;
  std::uint64_t seed = 0;
  std::size_t min_subjects = 0;
  std::size_t max_subjects = 0;
  double mean_subjects = 0.0;
  double mean_attributes = 0.0;
  double mean_tokens = 0.0;
  double duplicate_rate = 0.0;
};

inline SplitSummary summarize(const std::vector<DatasetRecord>& recs, std::uint64_t seed) {
  SplitSummary s;
  s.size = recs.size();
  s.seed = seed;
  if (recs.empty()) return s;
  s.first_id = recs.front().id;
  s.min_subjects = recs.front().stats.subjects;
  for (const auto& r : recs) {
    s.min_subjects = std::min(s.min_subjects, r.stats.subjects);
    s.max_subjects = std::max(s.max_subjects, r.stats.subjects);
    s.mean_subjects += static_cast<double>(r.stats.subjects);
    s.mean_attributes += static_cast<double>(r.stats.attributes);
    s.mean_tokens += static_cast<double>(r.stats.approx_tokens);
  }
  const double n = static_cast<double>(recs.size());
  s.mean_subjects /= n;
  s.mean_attributes /= n;
  s.mean_tokens /= n;
  s.duplicate_rate = duplicate_rate(recs);
  return s;
}

inline nlohmann::ordered_json to_json(const SplitSummary& s) {
  return {{"size", s.size},
          {"first_id", s.first_id},
          {"seed", s.seed},
          {"subjects", {{"min", s.min_subjects}, {"max", s.max_subjects}, {"mean", s.mean_subjects}}},
          {"mean_attributes", s.mean_attributes},
          {"mean_approx_tokens", s.mean_tokens},
          {"duplicate_rate", s.duplicate_rate}};
}

struct Dataset {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> test;
  nlohmann::ordered_json manifest;
};

inline Dataset generate_dataset(const ConceptPools& pools, const AttributeRewriter& rewriter, const BenchConfig& cfg,
                                const std::string& rewriter_name = "template") {
  Dataset d;
  d.train = generate_split(pools, rewriter, cfg, Split::Train);
  d.test = generate_split(pools, rewriter, cfg, Split::Test);
  std::vector<DatasetRecord> all(d.train);
  all.insert(all.end(), d.test.begin(), d.test.end());
  d.manifest = {{"schema", kDatasetManifestSchema},
                {"record_schema", kDatasetRecordSchema},
                {"tree_schema", kPromptTreeSchema},
                {"pools_version", pools.version},
                {"rewriter", rewriter_name},
                {"seed", cfg.seed},
                {"subject_range", {cfg.min_subjects, cfg.max_subjects}},
                {"splits",
                 {{"train", to_json(summarize(d.train, split_seed(cfg.seed, Split::Train)))},
                  {"test", to_json(summarize(d.test, split_seed(cfg.seed, Split::Test)))}}},
                {"duplicate_rate", duplicate_rate(all)}};
  return d;
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& d) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "train.jsonl");
    write_records(os, d.train);
  }
  {
    std::ofstream os(dir / "test.jsonl");
    write_records(os, d.test);
  }
  std::ofstream os(dir / "manifest.json");
  os << d.manifest.dump(2) << '\n';
  if (!os) throw std::runtime_error("failed writing dataset to " + dir.string());
}

// ---- judging --------------------------------------------------------------

enum class Answer { Yes, No, Unclear };

inline const char* to_string(Answer a) {
  switch (a) {
    case Answer::Yes: return "Yes";
    case Answer::No: return "No";
    case Answer::Unclear: return "Unclear";
  }
  return "?";
}

/// Reads the answer from a judge reply: the text after the last "Output:"
/// if present, else the whole reply.
inline std::optional<Answer> parse_answer(std::string_view reply) {
  std::string_view tail = reply;
  if (auto p = reply.rfind("Output:"); p != std::string_view::npos) tail = reply.substr(p + 7);
  const auto toks = tokenize(tail);
  for (const auto& t : toks) {
    if (t == "yes") return Answer::Yes;
    if (t == "no") return Answer::No;
    if (t == "unclear") return Answer::Unclear;
  }
  return std::nullopt;
}

enum class QuestionFamily { Exist, Attribute, Relationship };

inline const char* to_string(QuestionFamily f) {
  switch (f) {
    case QuestionFamily::Exist: return "exist";
    case QuestionFamily::Attribute: return "attribute";
    case QuestionFamily::Relationship: return "relationship";
  }
  return "?";
}

struct Question {
  QuestionFamily family = QuestionFamily::Exist;
  /// Subject index; for relationships the later subject of the pair.
  std::size_t subject = 0;
  std::size_t attribute = 0;
  /// Object text put to the judge.
  std::string text;
};

/// One existence question per subject, one attribute question per
/// attribute, one relationship question per connector.
inline std::vector<Question> questions_for(const PromptTree& tree) {
  std::vector<Question> qs;
  for (std::size_t i = 0; i < tree.subjects.size(); ++i) {
    const auto& s = tree.subjects[i];
    qs.push_back({QuestionFamily::Exist, i, 0, s.text});
    for (std::size_t j = 0; j < s.attributes.size(); ++j) {
      qs.push_back({QuestionFamily::Attribute, i, j, s.attributes[j].text});
    }
    if (i > 0) {
      qs.push_back({QuestionFamily::Relationship, i, 0,
                    tree.subjects[i - 1].text + " " + tree.connectors[i - 1] + " " + s.text});
    }
  }
  return qs;
}

struct Verdict {
  Answer answer = Answer::Unclear;
  /// Raw backend reply, kept for audit.
  std::string raw;
};

enum class JudgeKind { Oracle, Remote };

class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;
  virtual JudgeKind kind() const = 0;
  virtual Verdict judge(const Question& q, const PromptTree& tree, std::span<const double> sample) const = 0;
};

/// Answers from the scene geometry. A non-finite slot is Unclear.
class OracleJudge final : public JudgeBackend {
 public:
  explicit OracleJudge(const SceneLexicon& lex) : lex_(&lex), oracle_(lex) {}

  JudgeKind kind() const override { return JudgeKind::Oracle; }

  Verdict judge(const Question& q, const PromptTree& tree, std::span<const double> sample) const override {
    const auto& cfg = lex_->config();
    if (sample.size() != tree.subjects.size() * cfg.block_dim()) {
      throw std::invalid_argument("OracleJudge: sample does not match the scene layout");
    }
    auto block = [&](std::size_t i) { return sample.subspan(i * cfg.block_dim(), cfg.block_dim()); };
    auto slot = [&](std::size_t i, SceneSlot s) { return detail::slot_view(block(i), s, cfg.slot_dim); };
    auto verdict = [](bool ok) { return Verdict{ok ? Answer::Yes : Answer::No, ok ? "Yes" : "No"}; };
    switch (q.family) {
      case QuestionFamily::Exist: {
        const auto v = slot(q.subject, SceneSlot::Identity);
        if (!all_finite(v)) return {Answer::Unclear, "Unclear"};
        return verdict(oracle_.in_any_region(v, SceneSlot::Identity));
      }
      case QuestionFamily::Attribute: {
        const auto& a = tree.subjects.at(q.subject).attributes.at(q.attribute);
        const auto v = slot(q.subject, slot_of(a.kind));
        if (!all_finite(v)) return {Answer::Unclear, "Unclear"};
        return verdict(oracle_.in_region(v, slot_of(a.kind), strip_article(a.category)));
      }
      case QuestionFamily::Relationship: {
        const auto a = slot(q.subject - 1, SceneSlot::Position);
        const auto b = slot(q.subject, SceneSlot::Position);
        if (!all_finite(a) || !all_finite(b)) return {Answer::Unclear, "Unclear"};
        Vec rel(b.begin(), b.end());
        axpy(-1.0, a, rel);
        return verdict(distance(rel, lex_->prototype(SceneSlot::Position, tree.connectors.at(q.subject - 1))) <=
                       oracle_.relation_tolerance());
      }
    }
    throw std::logic_error("unknown question family");
  }

 private:
  const SceneLexicon* lex_;
  SceneOracle oracle_;
};

struct FamilyCounts {
  std::size_t yes = 0, no = 0, unclear = 0;
  std::size_t total() const { return yes + no + unclear; }
  /// Unclear answers stay in the denominator.
  double accuracy() const { return total() == 0 ? 1.0 : static_cast<double>(yes) / static_cast<double>(total()); }
  bool operator==(const FamilyCounts&) const = default;
};

struct RecordVerdicts {
  std::uint64_t id = 0;
  std::vector<Question> questions;
  std::vector<Verdict> verdicts;
};

struct AccuracyReport {
  FamilyCounts exist, attribute, relationship;
  std::vector<RecordVerdicts> records;
  /// (record id, reason) for records the judge could not score.
  std::vector<std::pair<std::uint64_t, std::string>> skipped;

  FamilyCounts& family(QuestionFamily f) {
    return f == QuestionFamily::Exist ? exist : f == QuestionFamily::Attribute ? attribute : relationship;
  }
};

struct EvalItem {
  const DatasetRecord* record = nullptr;
  Vec sample;
};

/// Judges every question of every item. A record whose judge call fails is
/// skipped as a whole and listed; it never contributes partial counts.
inline AccuracyReport evaluate_accuracy(const std::vector<EvalItem>& items, const JudgeBackend& judge,
                                        std::size_t workers = 1) {
  std::vector<std::optional<RecordVerdicts>> per(items.size());
  std::vector<std::string> errors(items.size());
  parallel_for(items.size(), workers, [&](std::size_t k) {
    const auto& item = items[k];
    RecordVerdicts rv;
    rv.id = item.record->id;
    rv.questions = questions_for(item.record->tree);
    try {
      for (const auto& q : rv.questions) rv.verdicts.push_back(judge.judge(q, item.record->tree, item.sample));
      per[k] = std::move(rv);
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  });
  AccuracyReport rep;
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (!per[k]) {
      rep.skipped.emplace_back(items[k].record->id, errors[k]);
      continue;
    }
    for (std::size_t q = 0; q < per[k]->questions.size(); ++q) {
      auto& c = rep.family(per[k]->questions[q].family);
      switch (per[k]->verdicts[q].answer) {
        case Answer::Yes: ++c.yes; break;
        case Answer::No: ++c.no; break;
        case Answer::Unclear: ++c.unclear; break;
      }
    }
    rep.records.push_back(std::move(*per[k]));
  }
  return rep;
}

inline nlohmann::ordered_json to_json(const FamilyCounts& c) {
  return {{"accuracy", c.accuracy()}, {"yes", c.yes}, {"no", c.no}, {"unclear", c.unclear}, {"total", c.total()}};
}

inline nlohmann::ordered_json summary_json(const AccuracyReport& r) {
  nlohmann::ordered_json skipped = nlohmann::ordered_json::array();
  for (const auto& [id, why] : r.skipped) skipped.push_back({{"id", id}, {"reason", why}});
  return {{"exist", to_json(r.exist)},
          {"attribute", to_json(r.attribute)},
          {"relationship", to_json(r.relationship)},
          {"records", r.records.size()},
          {"skipped", std::move(skipped)}};
}

inline void write_verdicts(std::ostream& os, const AccuracyReport& r) {
  for (const auto& rv : r.records) {
    nlohmann::ordered_json qs = nlohmann::ordered_json::array();
    for (std::size_t q = 0; q < rv.questions.size(); ++q) {
      qs.push_back({{"family", to_string(rv.questions[q].family)},
                    {"subject", rv.questions[q].subject},
                    {"object", rv.questions[q].text},
                    {"answer", to_string(rv.verdicts[q].answer)},
                    {"raw", rv.verdicts[q].raw}});
    }
    os << nlohmann::ordered_json{{"id", rv.id}, {"questions", std::move(qs)}}.dump() << '\n';
  }
}

}  // namespace hicogen
