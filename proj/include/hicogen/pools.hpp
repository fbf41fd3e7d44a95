#pragma once

// Word pools and the template stages of prompt construction: subject
// generation, attribute rewriting and prompt reframing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "hicogen/prompt_tree.hpp"
#include "hicogen/rng.hpp"

namespace hicogen {

struct ConceptPools {
  std::string version;
  std::vector<std::string> subjects;
  std::vector<std::string> clothing;
  std::vector<std::string> holding;
  std::vector<std::string> accessory;
  std::vector<std::string> connectors;
  /// Entries written without an article ("goggles", not "a goggles").
  std::set<std::string> plurals;
  std::vector<std::string> adjectives;
  /// Noun phrases appended as "with <detail>".
  std::vector<std::string> details;

  const std::vector<std::string>& pool(AttributeKind k) const {
    switch (k) {
      case AttributeKind::Clothing: return clothing;
      case AttributeKind::Holding: return holding;
      case AttributeKind::Accessory: return accessory;
      case AttributeKind::Other: break;
    }
    throw std::invalid_argument("no pool for attribute kind 'other'");
  }

  void validate() const {
    auto distinct = [](const std::vector<std::string>& v, const char* name) {
      if (v.empty()) throw std::invalid_argument(std::string("ConceptPools: empty ") + name + " pool");
      if (std::set<std::string>(v.begin(), v.end()).size() != v.size()) {
        throw std::invalid_argument(std::string("ConceptPools: repeated entry in ") + name + " pool");
      }
    };
    distinct(subjects, "subject");
    distinct(clothing, "clothing");
    distinct(holding, "holding");
    distinct(accessory, "accessory");
    distinct(connectors, "connector");
    distinct(adjectives, "adjective");
    distinct(details, "detail");
    std::set<std::string> labels;
    for (const auto* v : {&subjects, &clothing, &holding, &accessory}) {
      for (const auto& l : *v) {
        if (!labels.insert(l).second) throw std::invalid_argument("ConceptPools: label '" + l + "' in two pools");
      }
    }
  }
};

inline ConceptPools default_pools() {
  ConceptPools p;
  p.version = "pools/1";
  p.subjects = {"dog",       "cat",       "fox",       "rabbit",   "bear",       "owl",        "penguin",
                "robot",     "astronaut", "knight",    "chef",     "pirate",     "wizard",     "farmer",
                "ballerina", "gentleman", "young girl", "dalmatian", "old man", "panda", "koala",
                "raccoon",   "tiger",     "lion",      "giraffe",  "elephant",   "monkey",     "squirrel",
                "hedgehog",  "otter",     "parrot",    "frog",     "turtle",     "kangaroo",   "zebra",
                "deer",      "wolf",      "horse",     "goat",     "sheep",      "pig",        "swan",
                "flamingo",  "sloth",     "beaver",    "snowman",  "scarecrow",  "grandmother"};
  p.clothing = {"superman's costume", "space suit",    "lab coat",      "raincoat",      "tuxedo",
                "kimono",             "hoodie",        "overalls",      "trench coat",   "denim jacket",
                "leather jacket",     "poncho",        "sweater",       "cardigan",      "tracksuit",
                "pajamas",            "wetsuit",       "apron",         "cape",          "vest",
                "ski suit",           "sailor suit",   "police uniform", "firefighter gear", "scrubs",
                "toga",               "robe",          "tunic",         "parka",         "blazer",
                "bathrobe",           "jumpsuit",      "dungarees",     "kilt",          "sari",
                "puffer coat",        "hanfu",         "dashiki",       "flannel shirt", "hawaiian shirt",
                "polo shirt",         "karate gi",     "tutu",          "lederhosen",    "windbreaker",
                "peacoat",            "ball gown",     "sundress"};
  p.holding = {"sign",        "book",        "umbrella",     "lantern",        "guitar",      "balloon",
               "teacup",      "map",         "camera",       "flashlight",     "bouquet",     "basket",
               "violin",      "trumpet",     "skateboard",   "surfboard",      "fishing rod", "paintbrush",
               "telescope",   "compass",     "trophy",       "pizza",          "ice cream",   "kite",
               "shovel",      "broom",       "tennis racket", "baseball bat",  "football",    "microphone",
               "banner",      "newspaper",   "smartphone",   "coffee mug",     "lunchbox",    "watering can",
               "hammer",      "wrench",      "globe",        "clipboard",      "hourglass",   "magnifying glass",
               "frying pan",  "rolling pin", "megaphone",    "accordion",      "ukulele",     "briefcase"};
  p.accessory = {"goggles",     "glasses",    "necklace",   "scarf",        "bow tie",      "wristwatch",
                 "earrings",    "bracelet",   "headband",   "bandana",      "top hat",      "beret",
                 "crown",       "tiara",      "monocle",    "backpack",     "satchel",      "belt",
                 "gloves",      "mittens",    "sunglasses", "headphones",   "brooch",       "pendant",
                 "anklet",      "cufflinks",  "pocket watch", "hair clip",  "cowboy hat",   "baseball cap",
                 "beanie",      "fedora",     "sombrero",   "helmet",       "earmuffs",     "lanyard",
                 "name tag",    "medal",      "suspenders", "shoulder bag", "fanny pack",   "wristband",
                 "armband",     "choker",     "veil",       "eye patch",    "feather boa",  "ring"};
  p.connectors = default_connectors();
  p.plurals = {"goggles", "glasses",  "earrings", "gloves",     "mittens", "sunglasses", "headphones",
               "cufflinks", "earmuffs", "suspenders", "overalls", "pajamas", "scrubs", "dungarees",
               "lederhosen"};
  p.adjectives = {"crimson",   "emerald",   "cobalt",     "ivory",      "amber",     "charcoal",  "turquoise",
                  "mustard",   "lavender",  "scarlet",    "teal",       "copper",    "velvet",    "tweed",
                  "corduroy",  "satin",     "linen",      "woolen",     "quilted",   "glossy",    "matte",
                  "faded",     "vintage",   "handmade",   "oversized",  "miniature", "sleek",     "rugged",
                  "polished",  "weathered", "embroidered", "striped",   "checkered", "sequined",  "knitted",
                  "pleated",   "hand-painted", "glittering", "patched", "rustic",    "ornate",    "minimalist",
                  "iridescent", "neon",     "pastel",     "burgundy",   "olive",     "indigo"};
  p.details = {"brass buttons",     "gold stitching",     "a frayed hem",       "tiny star motifs",
               "contrast piping",   "carved initials",    "a braided trim",     "reflective stripes",
               "hand-stitched seams", "a plaid lining",   "chrome rivets",      "floral motifs",
               "a zigzag border",   "engraved swirls",    "wooden toggles",     "a tassel fringe",
               "geometric inlays",  "scalloped edges",    "enamel studs",       "a faint monogram",
               "beaded accents",    "lacquered panels",   "woven patterns",     "a chevron band"};
  return p;
}

/// Brief phrase for a pool entry: "a sign", "an umbrella", "goggles".
inline std::string with_article(const std::string& label, const std::set<std::string>& plurals = {}) {
  if (plurals.count(label)) return label;
  const char c = label.empty() ? 'x' : static_cast<char>(std::tolower(static_cast<unsigned char>(label[0])));
  const bool vowel = c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
  return (vowel ? "an " : "a ") + label;
}

class PoolExhaustedError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

/// n distinct indices from [0, size), in draw order.
inline std::vector<std::size_t> draw_distinct(Rng& rng, std::size_t size, std::size_t n) {
  std::vector<std::size_t> idx(size);
  for (std::size_t i = 0; i < size; ++i) idx[i] = i;
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.index(size - i)]);
  idx.resize(n);
  return idx;
}

}  // namespace detail

/// n subjects, each with one clothing, holding and accessory item. No label
/// repeats within the returned set.
inline std::vector<SubjectNode> generate_subjects(const ConceptPools& pools, std::size_t n, std::uint64_t seed) {
  const AttributeKind kinds[] = {AttributeKind::Clothing, AttributeKind::Accessory, AttributeKind::Holding};
  if (n > pools.subjects.size()) {
    throw PoolExhaustedError("generate_subjects: " + std::to_string(n) + " subjects requested, pool has " +
                             std::to_string(pools.subjects.size()));
  }
  for (auto k : kinds) {
    if (n > pools.pool(k).size()) {
      throw PoolExhaustedError(std::string("generate_subjects: ") + to_string(k) + " pool has " +
                               std::to_string(pools.pool(k).size()) + " entries, need " + std::to_string(n));
    }
  }
  Rng rng(seed);
  const auto who = detail::draw_distinct(rng, pools.subjects.size(), n);
  std::map<AttributeKind, std::vector<std::size_t>> what;
  for (auto k : kinds) what[k] = detail::draw_distinct(rng, pools.pool(k).size(), n);
  std::vector<SubjectNode> out;
  for (std::size_t i = 0; i < n; ++i) {
    SubjectNode s;
    s.label = pools.subjects[who[i]];
    s.text = with_article(s.label);
    for (auto k : kinds) {
      const std::string brief = with_article(pools.pool(k)[what[k][i]], pools.plurals);
      s.attributes.push_back({k, brief, brief, {}, ""});
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline constexpr std::size_t kMaxAttributeWords = 40;

class AttributeRewriter {
 public:
  virtual ~AttributeRewriter() = default;
  /// Detailed description of `attr`; `attempt` increments when an earlier
  /// candidate failed validation.
  virtual std::string describe(const AttributeNode& attr, const SubjectNode& owner, std::uint64_t seed,
                               std::size_t attempt) const = 0;
  virtual std::size_t max_attempts() const { return 1; }
};

/// "<adjective> <adjective> <category> with <detail>". A few categories carry
/// fixed exemplar descriptions, used on the first attempt.
class TemplateAttributeRewriter final : public AttributeRewriter {
 public:
  explicit TemplateAttributeRewriter(ConceptPools pools, bool use_exemplars = true)
      : pools_(std::move(pools)), use_exemplars_(use_exemplars) {}

  static const std::map<std::string, std::string>& exemplars() {
    static const std::map<std::string, std::string> e{
        {"book",
         "an open ancient magic book with a thick dark brown tanned leather cover, adorned with hand-embossed golden "
         "runes and intricate patterns"},
        {"lab coat", "a crisp white lab coat with embroidered name and pen-stained pocket"},
        {"necklace", "a whimsical necklace with animal-shaped pendants"}};
    return e;
  }

  std::string describe(const AttributeNode& attr, const SubjectNode&, std::uint64_t seed,
                       std::size_t attempt) const override {
    const std::string label = strip_article(attr.category);
    if (use_exemplars_ && attempt == 0) {
      if (auto it = exemplars().find(label); it != exemplars().end()) return it->second;
    }
    Rng rng(derive_seed(seed, attempt));
    const auto adj = detail::draw_distinct(rng, pools_.adjectives.size(), 2);
    const auto& det = pools_.details[rng.index(pools_.details.size())];
    const std::string head = pools_.adjectives[adj[0]] + " " + pools_.adjectives[adj[1]] + " " + label;
    return (pools_.plurals.count(label) ? head : with_article(head)) + " with " + det;
  }

  std::size_t max_attempts() const override { return 8; }

 private:
  ConceptPools pools_;
  bool use_exemplars_;
};

inline std::size_t word_count(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::size_t n = 0;
  for (std::string w; is >> w;) ++n;
  return n;
}

/// Problems with a detailed description; empty when acceptable.
inline std::vector<std::string> check_attribute_text(const std::string& text, const AttributeNode& attr,
                                                     const SubjectNode& owner) {
  std::vector<std::string> errs;
  if (word_count(text) > kMaxAttributeWords) errs.push_back("more than 40 words");
  const auto have = tokenize(text);
  const std::set<std::string> have_set(have.begin(), have.end());
  for (const auto& t : tokenize(strip_article(attr.category))) {
    if (!have_set.count(t)) errs.push_back("missing category token '" + t + "'");
  }
  std::set<std::string> level(stopwords());
  for (auto& t : tokenize(owner.label)) level.insert(t);
  for (const auto& a : owner.attributes) {
    for (auto& t : tokenize(a.category)) level.insert(t);
  }
  std::set<std::string> cat_tokens;
  for (auto& t : tokenize(attr.category)) cat_tokens.insert(t);
  for (const auto& t : have) {
    if (!cat_tokens.count(t) && level.count(t) && !stopwords().count(t)) {
      errs.push_back("token '" + t + "' also names the subject or a sibling attribute");
    }
  }
  return errs;
}

class AttributeRewriteError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Fills each attribute's detailed text and qualifiers.
inline SubjectNode rewrite_attributes(const SubjectNode& spec, const AttributeRewriter& rewriter, std::uint64_t seed) {
  SubjectNode out = spec;
  for (std::size_t j = 0; j < out.attributes.size(); ++j) {
    auto& a = out.attributes[j];
    std::vector<std::string> last;
    bool ok = false;
    for (std::size_t attempt = 0; attempt < std::max<std::size_t>(1, rewriter.max_attempts()); ++attempt) {
      const std::string text = trim(rewriter.describe(a, spec, derive_seed(seed, j), attempt));
      last = check_attribute_text(text, a, spec);
      if (last.empty()) {
        a.text = text;
        a.qualifiers = extract_qualifiers(text, a.category);
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw AttributeRewriteError("rewrite of " + spec.label + "/" + strip_article(a.category) + " rejected: " +
                                  last.front());
    }
  }
  return out;
}

struct RecordStatistics {
  std::size_t subjects = 0;
  std::size_t attributes = 0;
  std::size_t nodes = 0;
  /// Whitespace word count x 1.3, rounded.
  std::size_t approx_tokens = 0;
  bool operator==(const RecordStatistics&) const = default;
};

inline RecordStatistics compute_statistics(const PromptTree& tree) {
  return {tree.subjects.size(), tree.attribute_count(), tree.node_count(),
          static_cast<std::size_t>(std::llround(1.3 * static_cast<double>(word_count(tree.root_text))))};
}

enum class Split { Train, Test };

inline const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

struct DatasetRecord {
  std::uint64_t id = 0;
  PromptTree tree;
  std::string flat;
  RecordStatistics stats;
  Split split = Split::Train;
  std::uint64_t seed = 0;
  bool operator==(const DatasetRecord&) const = default;
};

/// Joins subject clauses with sampled connectors and fills level prompts.
inline DatasetRecord reframe_prompt(const std::vector<SubjectNode>& specs, const std::vector<std::string>& connectors,
                                    std::uint64_t seed) {
  if (specs.empty()) throw std::invalid_argument("reframe_prompt: no subjects");
  if (specs.size() > 1 && connectors.empty()) throw std::invalid_argument("reframe_prompt: empty connector pool");
  Rng rng(seed);
  PromptTree tree;
  tree.subjects = specs;
  for (std::size_t i = 1; i < specs.size(); ++i) tree.connectors.push_back(connectors[rng.index(connectors.size())]);
  tree.root_text = render_flat(tree);
  tree = rewrite_levels(tree, TemplateRewriter{});
  require_valid(tree);
  DatasetRecord r;
  r.flat = tree.root_text;
  r.stats = compute_statistics(tree);
  r.tree = std::move(tree);
  r.seed = seed;
  return r;
}

}  // namespace hicogen
