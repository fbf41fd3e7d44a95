#pragma once

// Toy scene domain for chained generation.
//
// A scene latent is a concatenation of per-subject blocks. Each block holds
// five slots of `slot_dim` values: identity, clothing, holding, accessory and
// position. Every concept in the pools owns a prototype point in its slot;
// concepts of one slot sit evenly on a ring, one ring radius per slot.
//
// Text is embedded by binding word fillers to (subject, slot) roles with
// circular convolution and summing the bindings. The generator unbinds each
// role, reads a soft nearest concept, and samples a Gaussian around the
// resulting slot means. Long prompts carry more bindings and so more
// crosstalk in every readout.

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hicogen/embedding.hpp"
#include "hicogen/linalg.hpp"
#include "hicogen/pools.hpp"
#include "hicogen/prompt_tree.hpp"
#include "hicogen/sampler.hpp"
#include "hicogen/schedule.hpp"

namespace hicogen {

enum class SceneSlot : std::size_t { Identity = 0, Clothing = 1, Holding = 2, Accessory = 3, Position = 4 };
inline constexpr std::size_t kSlotsPerBlock = 5;
/// Role code for words after ", and"; never read back.
inline constexpr std::size_t kOtherRole = 5;

inline const char* to_string(SceneSlot s) {
  switch (s) {
    case SceneSlot::Identity: return "identity";
    case SceneSlot::Clothing: return "clothing";
    case SceneSlot::Holding: return "holding";
    case SceneSlot::Accessory: return "accessory";
    case SceneSlot::Position: return "position";
  }
  return "?";
}

inline SceneSlot slot_of(AttributeKind k) {
  switch (k) {
    case AttributeKind::Clothing: return SceneSlot::Clothing;
    case AttributeKind::Holding: return SceneSlot::Holding;
    case AttributeKind::Accessory: return SceneSlot::Accessory;
    case AttributeKind::Other: break;
  }
  throw std::invalid_argument("attributes of kind 'other' have no scene slot");
}

struct SceneConfig {
  std::size_t slot_dim = 2;
  std::size_t embed_dim = 256;
  /// Ring radius of identity prototypes; each later slot adds ring_gap.
  double ring_radius = 4.0;
  double ring_gap = 2.0;
  double offset_radius = 3.0;
  double sample_std = 0.1;
  double readout_sharpness = 30.0;
  /// A reference recognised as a concept (within reference_cutoff widths
  /// of its prototype) adds reference_gain to that concept's readout logit.
  double reference_width = 0.2;
  double reference_cutoff = 3.0;
  double reference_gain = 30.0;
  double region_sigmas = 3.0;
  std::size_t num_steps = 16;
  StochasticitySchedule schedule = StochasticitySchedule::cosine_decay(0.0, 1.0);
  SamplerOptions sampler{};
  std::uint64_t embedding_seed = kDefaultEmbeddingSeed;

  std::size_t block_dim() const { return kSlotsPerBlock * slot_dim; }

  void validate() const {
    if (slot_dim < 2) throw std::invalid_argument("SceneConfig: slot_dim must be >= 2");
    if (embed_dim < 8) throw std::invalid_argument("SceneConfig: embed_dim must be >= 8");
    if (!(ring_radius > 0) || !(ring_gap > 0) || !(offset_radius > 0)) {
      throw std::invalid_argument("SceneConfig: radii must be positive");
    }
    if (!(sample_std > 0) || !(readout_sharpness > 0) || !(reference_width > 0) || !(reference_cutoff > 0) ||
        !(reference_gain >= 0) ||
        !(region_sigmas > 0)) {
      throw std::invalid_argument("SceneConfig: widths must be positive");
    }
    if (num_steps == 0) throw std::invalid_argument("SceneConfig: num_steps must be positive");
    schedule.validate();
  }
};

// ---- holographic binding --------------------------------------------------

inline Vec circular_convolve(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a, b, "circular_convolve");
  const std::size_t n = a.size();
  Vec out(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    if (a[j] == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) out[(i + j) % n] += a[j] * b[i];
  }
  return out;
}

/// Approximate inverse of circular_convolve(a, .).
inline Vec circular_correlate(std::span<const double> a, std::span<const double> c) {
  require_same_dim(a, c, "circular_correlate");
  const std::size_t n = a.size();
  Vec out(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    if (a[j] == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) out[i] += a[j] * c[(i + j) % n];
  }
  return out;
}

// ---- lexicon --------------------------------------------------------------

class SceneLexicon {
 public:
  SceneLexicon(const ConceptPools& pools, SceneConfig cfg) : cfg_(std::move(cfg)) {
    pools.validate();
    cfg_.validate();
    const std::array<const std::vector<std::string>*, kSlotsPerBlock> src{
        &pools.subjects, &pools.clothing, &pools.holding, &pools.accessory, &pools.connectors};
    for (std::size_t s = 0; s < kSlotsPerBlock; ++s) {
      const auto& labels = *src[s];
      const double radius = s == 4 ? cfg_.offset_radius : cfg_.ring_radius + cfg_.ring_gap * static_cast<double>(s);
      const double phase = 0.37 * static_cast<double>(s);
      for (std::size_t k = 0; k < labels.size(); ++k) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(labels.size()) + phase;
        Vec p(cfg_.slot_dim, 0.0);
        p[0] = radius * std::cos(angle);
        p[1] = radius * std::sin(angle);
        labels_[s].push_back(labels[k]);
        prototypes_[s].push_back(std::move(p));
        fillers_[s].push_back(concept_filler(labels[k]));
        index_[s][labels[k]] = k;
        phrases_.push_back({tokenize(labels[k]), labels[k], s});
      }
    }
    std::stable_sort(phrases_.begin(), phrases_.end(),
                     [](const Phrase& a, const Phrase& b) { return a.tokens.size() > b.tokens.size(); });
  }

  struct Phrase {
    std::vector<std::string> tokens;
    std::string label;
    std::size_t slot;
  };

  const SceneConfig& config() const { return cfg_; }
  const std::vector<std::string>& labels(SceneSlot s) const { return labels_[idx(s)]; }
  const std::vector<Vec>& prototypes(SceneSlot s) const { return prototypes_[idx(s)]; }
  const std::vector<Vec>& fillers(SceneSlot s) const { return fillers_[idx(s)]; }
  const std::vector<Phrase>& phrases() const { return phrases_; }

  std::optional<std::size_t> find(SceneSlot s, const std::string& label) const {
    const auto& m = index_[idx(s)];
    auto it = m.find(label);
    if (it == m.end()) return std::nullopt;
    return it->second;
  }

  const Vec& prototype(SceneSlot s, const std::string& label) const {
    auto k = find(s, label);
    if (!k) throw std::out_of_range(std::string("no ") + to_string(s) + " concept '" + label + "' in the lexicon");
    return prototypes_[idx(s)][*k];
  }

  Vec concept_filler(const std::string& label) const {
    return label_embedding("concept:" + label, cfg_.embed_dim, cfg_.embedding_seed);
  }
  Vec word_filler(const std::string& word) const {
    return label_embedding("word:" + word, cfg_.embed_dim, cfg_.embedding_seed);
  }
  Vec role(std::size_t subject, std::size_t slot) const {
    return label_embedding("role:" + std::to_string(subject) + ":" + std::to_string(slot), cfg_.embed_dim,
                           cfg_.embedding_seed);
  }

 private:
  static std::size_t idx(SceneSlot s) { return static_cast<std::size_t>(s); }

  SceneConfig cfg_;
  std::array<std::vector<std::string>, kSlotsPerBlock> labels_;
  std::array<std::vector<Vec>, kSlotsPerBlock> prototypes_;
  std::array<std::vector<Vec>, kSlotsPerBlock> fillers_;
  std::array<std::map<std::string, std::size_t>, kSlotsPerBlock> index_;
  std::vector<Phrase> phrases_;
};

// ---- text encoder ---------------------------------------------------------

struct Binding {
  std::size_t subject = 0;
  std::size_t role = 0;
  /// Lexicon label, or the raw word for tokens outside the lexicon.
  std::string filler;
  bool in_lexicon = false;
  bool operator==(const Binding&) const = default;
};

/// Role assignment: the clause head binds to identity; "wearing", "with",
/// "holding" and "and" switch the role; a connector phrase opens the next
/// subject and binds to that subject's position role.
inline std::vector<Binding> text_bindings(const SceneLexicon& lex, std::string_view text) {
  const auto tokens = tokenize(text);
  std::vector<Binding> out;
  std::size_t subject = 0;
  std::size_t role = static_cast<std::size_t>(SceneSlot::Identity);
  auto match = [&](std::size_t i, const std::vector<std::string>& phrase) {
    if (phrase.empty() || i + phrase.size() > tokens.size()) return false;
    return std::equal(phrase.begin(), phrase.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i));
  };
  for (std::size_t i = 0; i < tokens.size();) {
    const SceneLexicon::Phrase* hit = nullptr;
    for (const auto& p : lex.phrases()) {
      if (match(i, p.tokens)) {
        hit = &p;
        break;
      }
    }
    if (hit && hit->slot == static_cast<std::size_t>(SceneSlot::Position)) {
      ++subject;
      out.push_back({subject, hit->slot, hit->label, true});
      role = static_cast<std::size_t>(SceneSlot::Identity);
      i += hit->tokens.size();
      continue;
    }
    if (hit) {
      out.push_back({subject, role, hit->label, true});
      i += hit->tokens.size();
      continue;
    }
    const auto& t = tokens[i++];
    if (t == "wearing") role = static_cast<std::size_t>(SceneSlot::Clothing);
    else if (t == "with") role = static_cast<std::size_t>(SceneSlot::Accessory);
    else if (t == "holding") role = static_cast<std::size_t>(SceneSlot::Holding);
    else if (t == "and") role = kOtherRole;
    else if (!stopwords().count(t)) out.push_back({subject, role, t, false});
  }
  return out;
}

inline Vec encode_text(const SceneLexicon& lex, std::string_view text) {
  Vec e(lex.config().embed_dim, 0.0);
  for (const auto& b : text_bindings(lex, text)) {
    const Vec f = b.in_lexicon ? lex.concept_filler(b.filler) : lex.word_filler(b.filler);
    axpy(1.0, circular_convolve(lex.role(b.subject, b.role), f), e);
  }
  return e;
}

struct SlotReadout {
  Vec mean;
  std::vector<double> weights;
  std::size_t best = 0;
};

/// Soft nearest concept of `slot` for the filler bound to (subject, role).
/// `bonus`, when given, adds per-concept logits (evidence from references).
inline SlotReadout read_role(const SceneLexicon& lex, std::span<const double> embedding, std::size_t subject,
                             std::size_t role, SceneSlot slot, std::span<const double> bonus = {}) {
  const Vec probe = circular_correlate(lex.role(subject, role), embedding);
  const auto& fill = lex.fillers(slot);
  const auto& proto = lex.prototypes(slot);
  if (!bonus.empty() && bonus.size() != fill.size()) throw std::invalid_argument("read_slot: bonus size");
  SlotReadout r;
  r.weights.resize(fill.size());
  double top = -INFINITY;
  for (std::size_t c = 0; c < fill.size(); ++c) {
    r.weights[c] = lex.config().readout_sharpness * dot(fill[c], probe) + (bonus.empty() ? 0.0 : bonus[c]);
    if (r.weights[c] > top) {
      top = r.weights[c];
      r.best = c;
    }
  }
  double total = 0.0;
  for (double& w : r.weights) total += (w = std::exp(w - top));
  r.mean.assign(lex.config().slot_dim, 0.0);
  for (std::size_t c = 0; c < fill.size(); ++c) axpy(r.weights[c] /= total, proto[c], r.mean);
  return r;
}

inline SlotReadout read_slot(const SceneLexicon& lex, std::span<const double> embedding, std::size_t subject,
                             SceneSlot slot, std::span<const double> bonus = {}) {
  return read_role(lex, embedding, subject, static_cast<std::size_t>(slot), slot, bonus);
}

// ---- generation -----------------------------------------------------------

enum class CanvasKind { Attribute, Subject, Scene };

inline const char* to_string(CanvasKind k) {
  switch (k) {
    case CanvasKind::Attribute: return "attribute";
    case CanvasKind::Subject: return "subject";
    case CanvasKind::Scene: return "scene";
  }
  return "?";
}

/// Output layout of one generation call.
struct Canvas {
  CanvasKind kind = CanvasKind::Scene;
  SceneSlot slot = SceneSlot::Identity;
  std::size_t subjects = 1;
  bool operator==(const Canvas&) const = default;

  std::size_t dim(const SceneConfig& cfg) const {
    switch (kind) {
      case CanvasKind::Attribute: return cfg.slot_dim;
      case CanvasKind::Subject: return cfg.block_dim();
      case CanvasKind::Scene: return subjects * cfg.block_dim();
    }
    return 0;
  }
};

struct ConditionContext {
  Canvas canvas;
  Vec embedding;
  /// Outputs of dependency steps, in plan order.
  std::vector<Vec> references;
};

struct Generation {
  Vec latent;
  std::optional<Trajectory> trajectory;
};

class GeneratorBackend {
 public:
  virtual ~GeneratorBackend() = default;
  virtual Vec embed(std::string_view text) const = 0;
  virtual Generation generate(const ConditionContext& ctx, std::uint64_t seed) const = 0;
};

/// Rectified-flow velocity for the target N(mean, std^2 I).
inline Vec gaussian_velocity(std::span<const double> mean, double std, std::span<const double> z, double t) {
  require_same_dim(mean, z, "gaussian_velocity");
  const double a = 1.0 - t;
  const double var = a * a * std * std + t * t;
  const double coef = (t - a * std * std) / var;
  Vec u(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) u[i] = coef * (z[i] - a * mean[i]) - mean[i];
  return u;
}

namespace detail {

inline std::span<const double> slot_view(std::span<const double> block, SceneSlot s, std::size_t slot_dim) {
  return block.subspan(static_cast<std::size_t>(s) * slot_dim, slot_dim);
}

inline std::span<double> slot_view(std::span<double> block, SceneSlot s, std::size_t slot_dim) {
  return block.subspan(static_cast<std::size_t>(s) * slot_dim, slot_dim);
}

}  // namespace detail

/// Conditional flow whose condition channel is the text embedding plus the
/// reference latents. The velocity is exact for a Gaussian around the means
/// decoded from the condition.
class ToySceneGenerator final : public GeneratorBackend {
 public:
  explicit ToySceneGenerator(const SceneLexicon& lex) : lex_(&lex) {}

  const SceneLexicon& lexicon() const { return *lex_; }

  Vec embed(std::string_view text) const override { return encode_text(*lex_, text); }

  Vec target_mean(const ConditionContext& ctx) const {
    const auto& cfg = lex_->config();
    if (ctx.embedding.size() != cfg.embed_dim) throw std::invalid_argument("ToySceneGenerator: embedding dimension");
    constexpr SceneSlot kAttr[] = {SceneSlot::Clothing, SceneSlot::Holding, SceneSlot::Accessory};
    switch (ctx.canvas.kind) {
      case CanvasKind::Attribute: {
        if (ctx.canvas.slot == SceneSlot::Position) throw std::invalid_argument("attribute canvas on position slot");
        // The described object is the head of its own prompt.
        return read_role(*lex_, ctx.embedding, 0, static_cast<std::size_t>(SceneSlot::Identity), ctx.canvas.slot).mean;
      }
      case CanvasKind::Subject: {
        std::vector<std::span<const double>> refs;
        for (const auto& r : ctx.references) {
          if (r.size() != cfg.slot_dim) throw std::invalid_argument("subject canvas: reference is not a single slot");
          refs.emplace_back(r);
        }
        Vec block(cfg.block_dim(), 0.0);
        write(block, SceneSlot::Identity, read_slot(*lex_, ctx.embedding, 0, SceneSlot::Identity).mean);
        for (auto s : kAttr) {
          const Vec bonus = evidence(s, refs, {});
          write(block, s, read_slot(*lex_, ctx.embedding, 0, s, bonus).mean);
        }
        return block;
      }
      case CanvasKind::Scene: {
        const std::size_t n = ctx.canvas.subjects;
        if (n == 0) throw std::invalid_argument("scene canvas with no subjects");
        for (const auto& r : ctx.references) {
          if (r.size() != cfg.block_dim()) throw std::invalid_argument("scene canvas: reference is not a block");
        }
        auto slots_of = [&](SceneSlot s) {
          std::vector<std::span<const double>> v;
          for (const auto& r : ctx.references) v.push_back(detail::slot_view(r, s, cfg.slot_dim));
          return v;
        };
        const auto ref_ids = slots_of(SceneSlot::Identity);
        const Vec id_bonus = evidence(SceneSlot::Identity, ref_ids, {});
        Vec out(n * cfg.block_dim(), 0.0);
        Vec pos(cfg.slot_dim, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          std::span<double> block(out.data() + i * cfg.block_dim(), cfg.block_dim());
          if (i > 0) axpy(1.0, read_slot(*lex_, ctx.embedding, i, SceneSlot::Position).mean, pos);
          const auto id = read_slot(*lex_, ctx.embedding, i, SceneSlot::Identity, id_bonus);
          put(block, SceneSlot::Identity, id.mean);
          // A reference block feeds this subject when it shows the same identity.
          std::vector<double> route(ref_ids.size());
          for (std::size_t j = 0; j < ref_ids.size(); ++j) {
            route[j] = recognise(SceneSlot::Identity, ref_ids[j]) == id.best ? 1.0 : 0.0;
          }
          for (auto s : kAttr) {
            const Vec bonus = evidence(s, slots_of(s), route);
            put(block, s, read_slot(*lex_, ctx.embedding, i, s, bonus).mean);
          }
          put(block, SceneSlot::Position, pos);
        }
        return out;
      }
    }
    throw std::logic_error("unknown canvas kind");
  }

  /// Each reference votes for its nearest concept of slot `s` when it lies
  /// within reference_cutoff widths of it; votes are scaled by `route`
  /// (1 when empty) and reference_gain.
  Vec evidence(SceneSlot s, const std::vector<std::span<const double>>& refs, std::span<const double> route) const {
    const auto& cfg = lex_->config();
    Vec bonus(lex_->prototypes(s).size(), 0.0);
    for (std::size_t j = 0; j < refs.size(); ++j) {
      const double w = route.empty() ? 1.0 : route[j];
      if (w == 0.0) continue;
      if (auto c = recognise(s, refs[j])) bonus[*c] += w * cfg.reference_gain;
    }
    return bonus;
  }

  std::optional<std::size_t> recognise(SceneSlot s, std::span<const double> v) const {
    const auto& proto = lex_->prototypes(s);
    std::size_t best = 0;
    double bd = INFINITY;
    for (std::size_t c = 0; c < proto.size(); ++c) {
      const double d = distance(v, proto[c]);
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    if (bd > lex_->config().reference_cutoff * lex_->config().reference_width) return std::nullopt;
    return best;
  }

  Generation generate(const ConditionContext& ctx, std::uint64_t seed) const override {
    const auto& cfg = lex_->config();
    const Vec mean = target_mean(ctx);
    const double std = cfg.sample_std;
    auto field = [&](std::span<const double> z, double t) { return gaussian_velocity(mean, std, z, t); };
    Trajectory traj = sample_trajectory(field, mean.size(), cfg.schedule, cfg.num_steps, seed, cfg.sampler);
    Vec z = traj.terminal;
    return {std::move(z), std::move(traj)};
  }

 private:
  void write(Vec& block, SceneSlot s, const Vec& v) const { put(std::span<double>(block), s, v); }
  void put(std::span<double> block, SceneSlot s, const Vec& v) const {
    auto dst = detail::slot_view(block, s, lex_->config().slot_dim);
    std::copy(v.begin(), v.end(), dst.begin());
  }

  const SceneLexicon* lex_;
};

// ---- coverage oracle ------------------------------------------------------

/// Exact hit counts over the prompt's nodes.
struct CoverageReport {
  std::size_t exist_hits = 0, exist_total = 0;
  std::size_t attribute_hits = 0, attribute_total = 0;
  std::size_t relationship_hits = 0, relationship_total = 0;

  static double frac(std::size_t h, std::size_t n) { return n == 0 ? 1.0 : static_cast<double>(h) / static_cast<double>(n); }
  double exist() const { return frac(exist_hits, exist_total); }
  double attribute() const { return frac(attribute_hits, attribute_total); }
  double relationship() const { return frac(relationship_hits, relationship_total); }

  CoverageReport& operator+=(const CoverageReport& o) {
    exist_hits += o.exist_hits;
    exist_total += o.exist_total;
    attribute_hits += o.attribute_hits;
    attribute_total += o.attribute_total;
    relationship_hits += o.relationship_hits;
    relationship_total += o.relationship_total;
    return *this;
  }
  bool operator==(const CoverageReport&) const = default;
};

class SceneOracle {
 public:
  explicit SceneOracle(const SceneLexicon& lex) : lex_(&lex) {}

  double region_radius() const { return lex_->config().region_sigmas * lex_->config().sample_std; }
  /// Relative offsets combine the noise of two blocks.
  double relation_tolerance() const { return std::sqrt(2.0) * region_radius(); }

  bool in_region(std::span<const double> v, SceneSlot s, const std::string& label) const {
    return distance(v, lex_->prototype(s, label)) <= region_radius();
  }

  bool in_any_region(std::span<const double> v, SceneSlot s) const {
    for (const auto& p : lex_->prototypes(s)) {
      if (distance(v, p) <= region_radius()) return true;
    }
    return false;
  }

  /// Throws when the tree names a concept the lexicon does not know.
  void require_known(const PromptTree& tree) const {
    for (const auto& s : tree.subjects) {
      lex_->prototype(SceneSlot::Identity, s.label);
      for (const auto& a : s.attributes) lex_->prototype(slot_of(a.kind), strip_article(a.category));
    }
    for (const auto& c : tree.connectors) lex_->prototype(SceneSlot::Position, c);
  }

  /// Composite of the scene with every slot exactly at its target.
  Vec ideal_scene(const PromptTree& tree) const {
    require_known(tree);
    const auto& cfg = lex_->config();
    Vec out(tree.subjects.size() * cfg.block_dim(), 0.0);
    Vec pos(cfg.slot_dim, 0.0);
    for (std::size_t i = 0; i < tree.subjects.size(); ++i) {
      std::span<double> block(out.data() + i * cfg.block_dim(), cfg.block_dim());
      if (i > 0) axpy(1.0, lex_->prototype(SceneSlot::Position, tree.connectors[i - 1]), pos);
      put(block, SceneSlot::Identity, lex_->prototype(SceneSlot::Identity, tree.subjects[i].label));
      for (const auto& a : tree.subjects[i].attributes) {
        put(block, slot_of(a.kind), lex_->prototype(slot_of(a.kind), strip_article(a.category)));
      }
      put(block, SceneSlot::Position, pos);
    }
    return out;
  }

  CoverageReport evaluate(std::span<const double> scene, const PromptTree& tree) const {
    require_known(tree);
    const auto& cfg = lex_->config();
    if (scene.size() != tree.subjects.size() * cfg.block_dim()) {
      throw std::invalid_argument("SceneOracle: scene has " + std::to_string(scene.size()) + " values, expected " +
                                  std::to_string(tree.subjects.size() * cfg.block_dim()));
    }
    CoverageReport r;
    for (std::size_t i = 0; i < tree.subjects.size(); ++i) {
      const auto block = scene.subspan(i * cfg.block_dim(), cfg.block_dim());
      ++r.exist_total;
      if (in_any_region(detail::slot_view(block, SceneSlot::Identity, cfg.slot_dim), SceneSlot::Identity)) ++r.exist_hits;
      for (const auto& a : tree.subjects[i].attributes) {
        const SceneSlot s = slot_of(a.kind);
        ++r.attribute_total;
        if (in_region(detail::slot_view(block, s, cfg.slot_dim), s, strip_article(a.category))) ++r.attribute_hits;
      }
      if (i > 0) {
        const auto prev = scene.subspan((i - 1) * cfg.block_dim(), cfg.block_dim());
        const auto a = detail::slot_view(prev, SceneSlot::Position, cfg.slot_dim);
        const auto b = detail::slot_view(block, SceneSlot::Position, cfg.slot_dim);
        Vec rel(b.begin(), b.end());
        axpy(-1.0, a, rel);
        ++r.relationship_total;
        if (distance(rel, lex_->prototype(SceneSlot::Position, tree.connectors[i - 1])) <= relation_tolerance()) {
          ++r.relationship_hits;
        }
      }
    }
    return r;
  }

 private:
  static void put(std::span<double> block, SceneSlot s, const Vec& v) {
    auto dst = detail::slot_view(block, s, v.size());
    std::copy(v.begin(), v.end(), dst.begin());
  }

  const SceneLexicon* lex_;
};

}  // namespace hicogen
