#pragma once

// Hierarchical prompt model: root prompt -> subjects -> attributes.
//
// Template grammar for flat text (one subject clause per subject):
//
//   prompt  := clause { ", " CONNECTOR " " clause }
//   clause  := SUBJECT [" wearing " CLOTHING] [" with " ACCESSORY]
//              [", holding " HOLDING] { ", and " OTHER }
//
// Attribute phrases must not contain the markers above. Detailed prompts
// whose attribute texts do contain them are exchanged as structured records.

#include <algorithm>
#include <cctype>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace hicogen {

enum class AttributeKind { Clothing, Holding, Accessory, Other };

inline const char* to_string(AttributeKind k) {
  switch (k) {
    case AttributeKind::Clothing: return "clothing";
    case AttributeKind::Holding: return "holding";
    case AttributeKind::Accessory: return "accessory";
    case AttributeKind::Other: return "other";
  }
  return "?";
}

inline AttributeKind attribute_kind_from_string(const std::string& s) {
  if (s == "clothing") return AttributeKind::Clothing;
  if (s == "holding") return AttributeKind::Holding;
  if (s == "accessory") return AttributeKind::Accessory;
  if (s == "other") return AttributeKind::Other;
  throw std::invalid_argument("unknown attribute kind '" + s + "'");
}

/// Rendering order of attribute kinds inside a clause.
inline int kind_rank(AttributeKind k) {
  switch (k) {
    case AttributeKind::Clothing: return 0;
    case AttributeKind::Accessory: return 1;
    case AttributeKind::Holding: return 2;
    case AttributeKind::Other: return 3;
  }
  return 4;
}

struct AttributeNode {
  AttributeKind kind = AttributeKind::Other;
  /// Brief category phrase as written, e.g. "a superman's costume".
  std::string category;
  /// Detailed description; equals the category when not rewritten.
  std::string text;
  std::vector<std::string> qualifiers;
  std::string level_prompt;
  bool operator==(const AttributeNode&) const = default;
};

struct SubjectNode {
  std::string label;
  /// Noun phrase as written, e.g. "a dog".
  std::string text;
  std::string level_prompt;
  std::vector<AttributeNode> attributes;
  bool operator==(const SubjectNode&) const = default;
};

struct PromptTree {
  std::string root_text;
  std::string root_level_prompt;
  std::vector<SubjectNode> subjects;
  /// connectors[i] joins subject i and subject i + 1.
  std::vector<std::string> connectors;
  bool operator==(const PromptTree&) const = default;

  std::size_t attribute_count() const {
    std::size_t n = 0;
    for (const auto& s : subjects) n += s.attributes.size();
    return n;
  }
  std::size_t node_count() const { return 1 + subjects.size() + attribute_count(); }
};

inline const std::vector<std::string>& default_connectors() {
  static const std::vector<std::string> c{
      "standing next to",    "sitting beside",     "walking behind",   "facing",
      "talking to",          "standing in front of", "looking at",     "chasing",
      "following",           "waving at",          "dancing with",     "standing behind",
      "leaning against",     "playing with",       "sitting across from", "walking alongside",
      "pointing at",         "smiling at",         "racing",           "greeting"};
  return c;
}

// ---- text utilities -------------------------------------------------------

inline std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

inline std::string normalize_whitespace(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(c);
  }
  return out;
}

inline std::string strip_article(std::string_view phrase) {
  std::string p = trim(phrase);
  for (std::string_view art : {"a ", "an ", "the ", "A ", "An ", "The "}) {
    if (p.size() > art.size() && p.compare(0, art.size(), art) == 0) return trim(std::string_view(p).substr(art.size()));
  }
  return p;
}

/// Lower-case word tokens; apostrophes and hyphens stay inside words.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc) || ((c == '\'' || c == '-') && !cur.empty())) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  for (auto& t : out) {
    while (!t.empty() && (t.back() == '\'' || t.back() == '-')) t.pop_back();
  }
  std::erase_if(out, [](const std::string& t) { return t.empty(); });
  return out;
}

inline const std::set<std::string>& stopwords() {
  static const std::set<std::string> s{"a",    "an",   "the",  "with", "and",  "of",   "in",  "on",
                                       "at",   "to",   "for",  "by",   "its",  "it",   "from", "into",
                                       "onto", "over", "under", "wearing", "holding", "is", "that"};
  return s;
}

/// Descriptive tokens of a detailed text beyond its category.
inline std::vector<std::string> extract_qualifiers(std::string_view text, std::string_view category) {
  std::set<std::string> skip(stopwords());
  for (auto& t : tokenize(category)) skip.insert(t);
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (auto& t : tokenize(text)) {
    if (skip.count(t) || !seen.insert(t).second) continue;
    out.push_back(t);
  }
  return out;
}

// ---- rendering ------------------------------------------------------------

inline std::vector<const AttributeNode*> attributes_in_render_order(const SubjectNode& s) {
  std::vector<const AttributeNode*> out;
  for (const auto& a : s.attributes) out.push_back(&a);
  std::stable_sort(out.begin(), out.end(),
                   [](const AttributeNode* x, const AttributeNode* y) { return kind_rank(x->kind) < kind_rank(y->kind); });
  return out;
}

/// One subject clause; `detailed` selects attribute texts over categories.
inline std::string render_clause(const SubjectNode& s, bool detailed) {
  std::string out = s.text;
  for (const AttributeNode* a : attributes_in_render_order(s)) {
    const std::string& phrase = detailed ? a->text : a->category;
    switch (a->kind) {
      case AttributeKind::Clothing: out += " wearing " + phrase; break;
      case AttributeKind::Accessory: out += " with " + phrase; break;
      case AttributeKind::Holding: out += ", holding " + phrase; break;
      case AttributeKind::Other: out += ", and " + phrase; break;
    }
  }
  return out;
}

inline std::string join_clauses(const std::vector<std::string>& clauses, const std::vector<std::string>& connectors) {
  std::string out;
  for (std::size_t i = 0; i < clauses.size(); ++i) {
    if (i > 0) out += ", " + connectors.at(i - 1) + " ";
    out += clauses[i];
  }
  return out;
}

inline std::string render_flat(const PromptTree& tree, bool detailed = true) {
  std::vector<std::string> clauses;
  for (const auto& s : tree.subjects) clauses.push_back(render_clause(s, detailed));
  return join_clauses(clauses, tree.connectors);
}

/// Subject noun phrases joined by connectors.
inline std::string render_skeleton(const PromptTree& tree) {
  std::vector<std::string> clauses;
  for (const auto& s : tree.subjects) clauses.push_back(s.text);
  return join_clauses(clauses, tree.connectors);
}

// ---- identifiers ----------------------------------------------------------

inline std::string subject_path(std::size_t i) { return "subjects[" + std::to_string(i) + "]"; }
inline std::string attribute_path(std::size_t i, std::size_t j) {
  return subject_path(i) + ".attributes[" + std::to_string(j) + "]";
}

inline std::string subject_node_id(const PromptTree& t, std::size_t i) { return "subject:" + t.subjects.at(i).label; }
inline std::string attribute_node_id(const PromptTree& t, std::size_t i, std::size_t j) {
  const auto& a = t.subjects.at(i).attributes.at(j);
  return "attribute:" + t.subjects[i].label + "/" + to_string(a.kind) + ":" + strip_article(a.category);
}
inline constexpr const char* kRootNodeId = "root";

// ---- validation -----------------------------------------------------------

/// Tokens of `prompt` that also occur in the given qualifier lists.
inline std::vector<std::string> containment_violations(std::string_view prompt,
                                                       const std::vector<const AttributeNode*>& below) {
  std::set<std::string> qual;
  for (const auto* a : below) qual.insert(a->qualifiers.begin(), a->qualifiers.end());
  std::vector<std::string> bad;
  std::set<std::string> seen;
  for (auto& t : tokenize(prompt)) {
    if (qual.count(t) && seen.insert(t).second) bad.push_back(t);
  }
  return bad;
}

inline std::vector<std::string> validate_tree(const PromptTree& tree) {
  std::vector<std::string> errors;
  if (tree.subjects.empty()) errors.push_back("tree has no subjects");
  if (!tree.subjects.empty() && tree.connectors.size() + 1 != tree.subjects.size()) {
    errors.push_back("expected " + std::to_string(tree.subjects.size() - 1) + " connectors, found " +
                     std::to_string(tree.connectors.size()));
  }
  for (std::size_t i = 0; i < tree.connectors.size(); ++i) {
    if (trim(tree.connectors[i]).empty()) errors.push_back("connectors[" + std::to_string(i) + "] is empty");
  }
  std::map<std::string, std::string> label_owner;
  auto claim = [&](const std::string& label, const std::string& path) {
    auto [it, fresh] = label_owner.emplace(label, path);
    if (!fresh) errors.push_back("duplicate label '" + label + "' at " + it->second + " and " + path);
  };
  for (std::size_t i = 0; i < tree.subjects.size(); ++i) {
    const auto& s = tree.subjects[i];
    const std::string sp = subject_path(i);
    if (trim(s.label).empty()) errors.push_back(sp + ": empty label");
    if (trim(s.text).empty()) errors.push_back(sp + ": empty text");
    claim(s.label, sp);
    std::set<AttributeKind> kinds;
    std::vector<const AttributeNode*> below;
    for (std::size_t j = 0; j < s.attributes.size(); ++j) {
      const auto& a = s.attributes[j];
      const std::string ap = attribute_path(i, j);
      if (trim(a.text).empty()) errors.push_back(ap + ": empty text");
      if (trim(a.category).empty()) errors.push_back(ap + ": empty category");
      if (a.kind != AttributeKind::Other && !kinds.insert(a.kind).second) {
        errors.push_back(ap + ": second " + std::string(to_string(a.kind)) + " attribute");
      }
      if (!trim(a.category).empty()) claim(strip_article(a.category), ap);
      below.push_back(&a);
    }
    if (!s.level_prompt.empty()) {
      for (auto& t : containment_violations(s.level_prompt, below)) {
        errors.push_back(sp + ": level prompt contains qualifier '" + t + "'");
      }
    }
  }
  if (!tree.subjects.empty() && tree.connectors.size() + 1 == tree.subjects.size() &&
      normalize_whitespace(render_flat(tree)) != normalize_whitespace(tree.root_text)) {
    errors.push_back("root text does not match the subject and attribute texts");
  }
  if (!tree.root_level_prompt.empty()) {
    std::vector<const AttributeNode*> all;
    for (const auto& s : tree.subjects) {
      for (const auto& a : s.attributes) all.push_back(&a);
    }
    for (auto& t : containment_violations(tree.root_level_prompt, all)) {
      errors.push_back("root: level prompt contains qualifier '" + t + "'");
    }
  }
  return errors;
}

class PromptTreeError : public std::invalid_argument {
 public:
  PromptTreeError(const std::string& msg, std::vector<std::string> details = {})
      : std::invalid_argument(msg), details_(std::move(details)) {}
  const std::vector<std::string>& details() const noexcept { return details_; }

 private:
  std::vector<std::string> details_;
};

inline void require_valid(const PromptTree& tree) {
  auto errs = validate_tree(tree);
  if (!errs.empty()) {
    const std::string first = errs.front();
    throw PromptTreeError("invalid prompt tree: " + first, std::move(errs));
  }
}

// ---- parsing --------------------------------------------------------------

namespace detail {

struct Cursor {
  std::string_view text;
  std::size_t base = 0;  // offset of text within the full prompt
};

[[noreturn]] inline void parse_fail(const std::string& what, std::size_t pos, std::string_view span) {
  throw PromptTreeError("parse error at offset " + std::to_string(pos) + ": " + what + " near '" +
                        std::string(span.substr(0, 40)) + "'");
}

inline std::optional<std::size_t> find_marker(std::string_view s, std::string_view marker, std::size_t from = 0) {
  const auto p = s.find(marker, from);
  if (p == std::string_view::npos) return std::nullopt;
  return p;
}

inline AttributeNode brief_attribute(AttributeKind kind, std::string_view phrase) {
  AttributeNode a;
  a.kind = kind;
  a.category = trim(phrase);
  a.text = a.category;
  return a;
}

inline SubjectNode parse_clause(Cursor c) {
  const std::string_view s = c.text;
  // Split off ", and " others, then ", holding ", then " with ", then " wearing ".
  std::vector<std::string_view> others;
  std::string_view head = s;
  for (auto p = head.rfind(", and "); p != std::string_view::npos; p = head.rfind(", and ")) {
    others.insert(others.begin(), head.substr(p + 6));
    head = head.substr(0, p);
  }
  // Markers must appear in grammar order and at most once.
  auto once = [&](std::string_view marker) -> std::optional<std::size_t> {
    auto p = find_marker(head, marker);
    if (p && find_marker(head, marker, *p + 1)) parse_fail("repeated '" + trim(marker) + "'", c.base + *p, head.substr(*p));
    return p;
  };
  const auto pw = once(" wearing ");
  const auto pa = once(" with ");
  const auto ph = once(", holding ");
  std::vector<std::pair<std::size_t, AttributeKind>> marks;
  if (pw) marks.push_back({*pw, AttributeKind::Clothing});
  if (pa) marks.push_back({*pa, AttributeKind::Accessory});
  if (ph) marks.push_back({*ph, AttributeKind::Holding});
  for (std::size_t k = 1; k < marks.size(); ++k) {
    if (marks[k].first < marks[k - 1].first) {
      parse_fail("attribute markers out of order", c.base + marks[k].first, head.substr(marks[k].first));
    }
  }
  SubjectNode subj;
  const std::size_t subject_end = marks.empty() ? head.size() : marks.front().first;
  subj.text = trim(head.substr(0, subject_end));
  if (subj.text.empty()) parse_fail("missing subject", c.base, s);
  subj.label = strip_article(subj.text);
  static constexpr std::string_view kMarkerText[] = {" wearing ", " with ", ", holding "};
  for (std::size_t k = 0; k < marks.size(); ++k) {
    const auto kind = marks[k].second;
    const std::size_t mlen = kMarkerText[kind == AttributeKind::Clothing ? 0 : kind == AttributeKind::Accessory ? 1 : 2].size();
    const std::size_t start = marks[k].first + mlen;
    const std::size_t end = k + 1 < marks.size() ? marks[k + 1].first : head.size();
    auto phrase = trim(head.substr(start, end - start));
    if (phrase.empty()) parse_fail(std::string("empty ") + to_string(kind) + " phrase", c.base + marks[k].first, head.substr(marks[k].first));
    if (phrase.find(',') != std::string::npos) {
      parse_fail("unexpected ',' inside attribute phrase", c.base + start, head.substr(start));
    }
    subj.attributes.push_back(brief_attribute(kind, phrase));
  }
  for (auto o : others) {
    auto phrase = trim(o);
    if (phrase.empty()) parse_fail("empty attribute after ', and'", c.base + s.size(), s);
    subj.attributes.push_back(brief_attribute(AttributeKind::Other, phrase));
  }
  return subj;
}

}  // namespace detail

/// Parses template-grammar text. Connectors are recognised from `connectors`
/// (longest match first).
inline PromptTree parse_prompt_text(std::string_view text,
                                    const std::vector<std::string>& connectors = default_connectors()) {
  const std::string flat = normalize_whitespace(text);
  if (flat.empty()) throw PromptTreeError("parse error at offset 0: empty prompt");
  std::vector<std::string> sorted(connectors);
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });

  PromptTree tree;
  tree.root_text = flat;
  std::string_view rest(flat);
  std::size_t base = 0;
  while (true) {
    // Earliest ", <connector> " boundary.
    std::size_t best = std::string_view::npos;
    std::string best_conn;
    for (const auto& conn : sorted) {
      const std::string marker = ", " + conn + " ";
      const auto p = rest.find(marker);
      if (p != std::string_view::npos && p < best) {
        best = p;
        best_conn = conn;
      }
    }
    const auto clause = rest.substr(0, best == std::string_view::npos ? rest.size() : best);
    tree.subjects.push_back(detail::parse_clause({clause, base}));
    if (best == std::string_view::npos) break;
    tree.connectors.push_back(best_conn);
    const std::size_t skip = best + best_conn.size() + 3;
    rest = rest.substr(skip);
    base += skip;
  }
  auto errs = validate_tree(tree);
  if (!errs.empty()) {
    const std::string first = errs.front();
    throw PromptTreeError("parse error: " + first, std::move(errs));
  }
  return tree;
}

// ---- structured records ---------------------------------------------------

inline constexpr const char* kPromptTreeSchema = "hicoprompt-tree/1";

inline nlohmann::ordered_json to_json(const PromptTree& t) {
  nlohmann::ordered_json subjects = nlohmann::ordered_json::array();
  for (const auto& s : t.subjects) {
    nlohmann::ordered_json attrs = nlohmann::ordered_json::array();
    for (const auto& a : s.attributes) {
      attrs.push_back({{"kind", to_string(a.kind)},
                       {"category", a.category},
                       {"text", a.text},
                       {"qualifiers", a.qualifiers},
                       {"level_prompt", a.level_prompt}});
    }
    subjects.push_back(
        {{"label", s.label}, {"text", s.text}, {"level_prompt", s.level_prompt}, {"attributes", std::move(attrs)}});
  }
  return {{"schema", kPromptTreeSchema},
          {"root", {{"text", t.root_text}, {"level_prompt", t.root_level_prompt}}},
          {"subjects", std::move(subjects)},
          {"connectors", t.connectors}};
}

/// Reads a structured record; missing optional fields default to empty.
inline PromptTree prompt_tree_from_json(const nlohmann::ordered_json& j) {
  if (j.value("schema", std::string()) != kPromptTreeSchema) {
    throw PromptTreeError("unsupported prompt-tree schema '" + j.value("schema", std::string()) + "'");
  }
  PromptTree t;
  try {
    const auto& root = j.at("root");
    t.root_text = root.at("text").get<std::string>();
    t.root_level_prompt = root.value("level_prompt", std::string());
    for (const auto& js : j.at("subjects")) {
      SubjectNode s;
      s.label = js.at("label").get<std::string>();
      s.text = js.value("text", s.label);
      s.level_prompt = js.value("level_prompt", std::string());
      for (const auto& ja : js.value("attributes", nlohmann::ordered_json::array())) {
        AttributeNode a;
        a.kind = attribute_kind_from_string(ja.at("kind").get<std::string>());
        a.category = ja.at("category").get<std::string>();
        a.text = ja.value("text", a.category);
        a.qualifiers = ja.value("qualifiers", std::vector<std::string>{});
        a.level_prompt = ja.value("level_prompt", std::string());
        s.attributes.push_back(std::move(a));
      }
      t.subjects.push_back(std::move(s));
    }
    t.connectors = j.value("connectors", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw PromptTreeError(std::string("malformed prompt-tree record: ") + e.what());
  }
  return t;
}

inline PromptTree parse_prompt_record(const nlohmann::ordered_json& j) {
  PromptTree t = prompt_tree_from_json(j);
  require_valid(t);
  return t;
}

// ---- level rewriting ------------------------------------------------------

class LevelRewriter {
 public:
  virtual ~LevelRewriter() = default;
  /// Returns the tree with level prompts filled in; must not change topology.
  virtual PromptTree rewrite(const PromptTree& tree) const = 0;
};

/// Attribute level: its detailed text. Subject level: the clause built from
/// attribute categories. Root level: subjects joined by connectors. Without
/// attributes every level prompt is the node's own phrase.
class TemplateRewriter final : public LevelRewriter {
 public:
  PromptTree rewrite(const PromptTree& tree) const override {
    PromptTree out = tree;
    for (auto& s : out.subjects) {
      for (auto& a : s.attributes) a.level_prompt = a.text;
      s.level_prompt = s.attributes.empty() ? s.label : render_clause(s, false);
    }
    out.root_level_prompt = out.subjects.size() == 1 && out.subjects[0].attributes.empty()
                                ? out.subjects[0].label
                                : render_skeleton(out);
    return out;
  }
};

inline bool same_topology(const PromptTree& a, const PromptTree& b) {
  if (a.subjects.size() != b.subjects.size() || a.connectors != b.connectors) return false;
  for (std::size_t i = 0; i < a.subjects.size(); ++i) {
    const auto& x = a.subjects[i];
    const auto& y = b.subjects[i];
    if (x.label != y.label || x.attributes.size() != y.attributes.size()) return false;
    for (std::size_t j = 0; j < x.attributes.size(); ++j) {
      if (x.attributes[j].kind != y.attributes[j].kind || x.attributes[j].category != y.attributes[j].category) {
        return false;
      }
    }
  }
  return true;
}

/// Runs a rewriter and enforces that higher levels carry no qualifier of the
/// attributes below them.
inline PromptTree rewrite_levels(const PromptTree& tree, const LevelRewriter& rewriter) {
  PromptTree out = rewriter.rewrite(tree);
  if (!same_topology(tree, out)) throw PromptTreeError("rewrite changed the tree topology");
  std::vector<std::string> bad;
  std::vector<const AttributeNode*> all;
  for (std::size_t i = 0; i < out.subjects.size(); ++i) {
    std::vector<const AttributeNode*> below;
    for (const auto& a : out.subjects[i].attributes) {
      below.push_back(&a);
      all.push_back(&a);
    }
    for (auto& t : containment_violations(out.subjects[i].level_prompt, below)) {
      bad.push_back(subject_path(i) + ": '" + t + "'");
    }
  }
  for (auto& t : containment_violations(out.root_level_prompt, all)) bad.push_back("root: '" + t + "'");
  if (!bad.empty()) {
    const std::string first = bad.front();
    throw PromptTreeError("rewrite rejected: level prompt contains qualifier " + first, std::move(bad));
  }
  return out;
}

// ---- synthesis plans ------------------------------------------------------

enum class NodeLevel { Attribute, Subject, Root };

inline const char* to_string(NodeLevel l) {
  switch (l) {
    case NodeLevel::Attribute: return "attribute";
    case NodeLevel::Subject: return "subject";
    case NodeLevel::Root: return "root";
  }
  return "?";
}

struct PlanStep {
  std::string node;
  NodeLevel level = NodeLevel::Root;
  std::size_t subject = 0;
  std::size_t attribute = 0;
  std::vector<std::string> dependencies;
  std::string prompt;
  bool operator==(const PlanStep&) const = default;
};

struct SynthesisPlan {
  std::vector<PlanStep> steps;
  bool operator==(const SynthesisPlan&) const = default;

  /// Empty when every dependency precedes its use and the root comes last.
  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    std::set<std::string> done;
    for (std::size_t k = 0; k < steps.size(); ++k) {
      for (const auto& d : steps[k].dependencies) {
        if (!done.count(d)) out.push_back("step " + std::to_string(k) + " (" + steps[k].node + ") depends on '" + d + "' before it is produced");
      }
      if (!done.insert(steps[k].node).second) out.push_back("node '" + steps[k].node + "' appears twice");
    }
    if (steps.empty() || steps.back().level != NodeLevel::Root) out.push_back("final step is not the root");
    return out;
  }
};

struct PlanOptions {
  /// Merge attributes into their subject's step instead of generating them.
  bool fold_attributes = false;
};

inline SynthesisPlan synthesis_plan(const PromptTree& tree, const PlanOptions& opt = {}) {
  require_valid(tree);
  SynthesisPlan plan;
  std::vector<std::string> subject_ids;
  for (std::size_t i = 0; i < tree.subjects.size(); ++i) {
    const auto& s = tree.subjects[i];
    PlanStep sub{subject_node_id(tree, i), NodeLevel::Subject, i, 0, {}, {}};
    if (opt.fold_attributes) {
      sub.prompt = render_clause(s, true);
    } else {
      for (std::size_t j = 0; j < s.attributes.size(); ++j) {
        const auto& a = s.attributes[j];
        PlanStep st{attribute_node_id(tree, i, j), NodeLevel::Attribute, i, j, {},
                    a.level_prompt.empty() ? a.text : a.level_prompt};
        sub.dependencies.push_back(st.node);
        plan.steps.push_back(std::move(st));
      }
      sub.prompt = s.level_prompt.empty() ? render_clause(s, false) : s.level_prompt;
    }
    subject_ids.push_back(sub.node);
    plan.steps.push_back(std::move(sub));
  }
  plan.steps.push_back({kRootNodeId, NodeLevel::Root, 0, 0, subject_ids,
                        tree.root_level_prompt.empty() ? render_skeleton(tree) : tree.root_level_prompt});
  auto v = plan.violations();
  if (!v.empty()) throw std::logic_error("synthesis_plan: " + v.front());
  return plan;
}

/// Single step conditioned on the full detailed prompt.
inline SynthesisPlan monolithic_plan(const PromptTree& tree) {
  require_valid(tree);
  return {{{kRootNodeId, NodeLevel::Root, 0, 0, {}, render_flat(tree, true)}}};
}

inline nlohmann::ordered_json to_json(const SynthesisPlan& p) {
  nlohmann::ordered_json steps = nlohmann::ordered_json::array();
  for (const auto& s : p.steps) {
    steps.push_back({{"node", s.node},
                     {"level", to_string(s.level)},
                     {"subject", s.subject},
                     {"attribute", s.attribute},
                     {"dependencies", s.dependencies},
                     {"prompt", s.prompt}});
  }
  return {{"steps", std::move(steps)}};
}

}  // namespace hicogen
