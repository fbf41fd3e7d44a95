#pragma once

// Three-level reward: R_total = R_global + R_subject + R_relationship, with
// all weighting inside the levels.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hicogen/domain.hpp"
#include "hicogen/linalg.hpp"

namespace hicogen {

struct RewardWeights {
  double clip = 0.7;
  double hps = 1.4;
  double dino = 0.7;
  double vlm = 0.7;

  void validate() const {
    for (double w : {clip, hps, dino, vlm}) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("RewardWeights: weights must be finite and >= 0");
    }
  }
  bool operator==(const RewardWeights&) const = default;
};

inline constexpr int kRubricMax = 4;

inline double normalize_rubric(int rubric) {
  if (rubric < 0 || rubric > kRubricMax) throw std::invalid_argument("rubric score outside 0..4");
  return static_cast<double>(rubric) / kRubricMax;
}

inline double global_reward(double s_clip, double s_hps, const RewardWeights& w) {
  if (!std::isfinite(s_clip) || !std::isfinite(s_hps)) throw std::invalid_argument("global_reward: non-finite score");
  return w.clip * s_clip + w.hps * s_hps;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a, b, "cosine_similarity");
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_similarity: zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

struct SubjectScores {
  double dino = 0.0;
  /// Rubric already normalized to [0, 1].
  double vlm = 0.0;
  bool operator==(const SubjectScores&) const = default;
};

inline double subject_reward(std::span<const SubjectScores> subjects, const RewardWeights& w) {
  if (subjects.empty()) throw std::invalid_argument("subject_reward: empty subject list");
  double acc = 0.0;
  for (const auto& s : subjects) acc += w.dino * s.dino + w.vlm * s.vlm;
  return acc / static_cast<double>(subjects.size());
}

inline double relationship_reward(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("relationship_reward: empty list");
  double acc = 0.0;
  for (double s : scores) acc += s;
  return acc / static_cast<double>(scores.size());
}

struct RewardInputs {
  double clip = 0.0;
  double hps = 0.0;
  std::vector<SubjectScores> subjects;
  /// Per-subject relationship scores, normalized to [0, 1].
  std::vector<double> relationship;
};

struct RewardBundle {
  double S_clip = 0.0;
  double S_hps = 0.0;
  std::vector<SubjectScores> subjects;
  std::vector<double> relationship;
  double R_global = 0.0;
  double R_subject = 0.0;
  double R_relationship = 0.0;
  double R_total = 0.0;
  bool operator==(const RewardBundle&) const = default;
};

/// Empty subject or relationship lists contribute 0 to their level.
inline RewardBundle total_reward(const RewardInputs& in, const RewardWeights& w) {
  w.validate();
  RewardBundle b;
  b.S_clip = in.clip;
  b.S_hps = in.hps;
  b.subjects = in.subjects;
  b.relationship = in.relationship;
  b.R_global = global_reward(in.clip, in.hps, w);
  b.R_subject = in.subjects.empty() ? 0.0 : subject_reward(in.subjects, w);
  b.R_relationship = in.relationship.empty() ? 0.0 : relationship_reward(in.relationship);
  b.R_total = b.R_global + b.R_subject + b.R_relationship;
  return b;
}

/// Rubric for a distance: 4 inside the region, then one point lost per band.
inline int rubric_from_distance(double dist, double radius, double band_width) {
  if (dist <= radius) return kRubricMax;
  const double bands = std::ceil((dist - radius) / band_width);
  return bands >= kRubricMax ? 0 : kRubricMax - static_cast<int>(bands);
}

/// A subject's coordinate block (its "crop") and the geometry judging it.
struct SubjectSlot {
  std::string node;
  std::string prompt;
  std::size_t offset = 0;
  std::size_t size = 0;
  Vec reference;
  Vec region_center;
  double region_radius = 1.0;
  double band_width = 1.0;
};

/// Expected relative placement of two subjects, read from a sub-range of
/// their blocks.
struct RelationSlot {
  std::size_t a = 0;
  std::size_t b = 0;
  std::string text;
  std::size_t field_offset = 0;
  std::size_t field_size = 0;
  Vec expected_offset;
  double tolerance = 1.0;
  double band_width = 1.0;
};

struct ScoringTask {
  std::string prompt;
  std::size_t dim = 0;
  Vec joint_target;
  double clip_scale = 1.0;
  /// Distance of a sample from the set of plausible outputs, regardless of
  /// the prompt. Drives the preference channel.
  std::function<double(std::span<const double>)> off_manifold_distance;
  double hps_scale = 1.0;
  std::vector<SubjectSlot> subjects;
  std::vector<RelationSlot> relations;

  void validate() const {
    if (joint_target.size() != dim) throw std::invalid_argument("ScoringTask: joint target dimension");
    for (const auto& s : subjects) {
      if (s.offset + s.size > dim || s.size == 0) {
        throw std::out_of_range("ScoringTask: block of '" + s.node + "' out of range");
      }
      if (s.reference.size() != s.size || s.region_center.size() != s.size) {
        throw std::invalid_argument("ScoringTask: block geometry of '" + s.node + "' has wrong size");
      }
    }
    for (const auto& r : relations) {
      if (r.a >= subjects.size() || r.b >= subjects.size()) throw std::out_of_range("ScoringTask: relation subject index");
      if (r.field_offset + r.field_size > subjects[r.a].size || r.field_offset + r.field_size > subjects[r.b].size ||
          r.expected_offset.size() != r.field_size) {
        throw std::out_of_range("ScoringTask: relation field out of range");
      }
    }
  }
};

inline std::span<const double> crop(std::span<const double> sample, const SubjectSlot& slot) {
  return sample.subspan(slot.offset, slot.size);
}

inline double relation_distance(std::span<const double> sample, const ScoringTask& task, const RelationSlot& r) {
  const auto a = crop(sample, task.subjects[r.a]).subspan(r.field_offset, r.field_size);
  const auto b = crop(sample, task.subjects[r.b]).subspan(r.field_offset, r.field_size);
  double acc = 0.0;
  for (std::size_t i = 0; i < r.field_size; ++i) {
    const double d = (b[i] - a[i]) - r.expected_offset[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

enum class ScorerKind { ToyDeterministic, Remote };

struct ScoreRange {
  double lo = 0.0;
  double hi = 1.0;
};

class ScorerBackend {
 public:
  virtual ~ScorerBackend() = default;
  virtual ScorerKind kind() const = 0;
  virtual ScoreRange range(const std::string& channel) const = 0;
  virtual RewardInputs evaluate(const ScoringTask& task, std::span<const double> sample) const = 0;
};

/// Pure geometric stand-ins for the alignment, preference, identity and
/// rubric judges.
class ToyScorer final : public ScorerBackend {
 public:
  ScorerKind kind() const override { return ScorerKind::ToyDeterministic; }

  ScoreRange range(const std::string& channel) const override {
    if (channel == "dino") return {-1.0, 1.0};
    return {0.0, 1.0};
  }

  static double clip_score(const ScoringTask& task, std::span<const double> sample) {
    return 1.0 - std::min(1.0, distance(sample, task.joint_target) / task.clip_scale);
  }

  static double hps_score(const ScoringTask& task, std::span<const double> sample) {
    if (!task.off_manifold_distance) return 1.0;
    return 1.0 - std::min(1.0, task.off_manifold_distance(sample) / task.hps_scale);
  }

  static double dino_score(const SubjectSlot& slot, std::span<const double> sample) {
    const auto block = crop(sample, slot);
    if (norm(block) == 0.0 || norm(slot.reference) == 0.0) return 0.0;
    return cosine_similarity(block, slot.reference);
  }

  static int vlm_rubric(const SubjectSlot& slot, std::span<const double> sample) {
    return rubric_from_distance(distance(crop(sample, slot), slot.region_center), slot.region_radius,
                                slot.band_width);
  }

  static int relation_rubric(const ScoringTask& task, const RelationSlot& r, std::span<const double> sample) {
    return rubric_from_distance(relation_distance(sample, task, r), r.tolerance, r.band_width);
  }

  RewardInputs evaluate(const ScoringTask& task, std::span<const double> sample) const override {
    task.validate();
    if (sample.size() != task.dim) throw std::invalid_argument("ToyScorer: sample dimension mismatch");
    RewardInputs in;
    in.clip = clip_score(task, sample);
    in.hps = hps_score(task, sample);
    for (const auto& slot : task.subjects) {
      in.subjects.push_back({dino_score(slot, sample), normalize_rubric(vlm_rubric(slot, sample))});
    }
    for (std::size_t i = 0; i < task.subjects.size(); ++i) {
      double acc = 0.0;
      int count = 0;
      for (const auto& r : task.relations) {
        if (r.a != i && r.b != i) continue;
        acc += normalize_rubric(relation_rubric(task, r, sample));
        ++count;
      }
      in.relationship.push_back(count == 0 ? 1.0 : acc / count);
    }
    return in;
  }
};

/// Task for one mode of a synthetic domain: the whole vector is the single
/// subject block; region radius 3 std with one-std bands.
inline ScoringTask mode_scoring_task(const SyntheticDomain& domain, std::size_t mode) {
  domain.validate();
  const auto& m = domain.modes.at(mode);
  ScoringTask task;
  task.prompt = m.label;
  task.dim = domain.dim;
  task.joint_target = m.mean;
  double spread = 0.0;
  for (const auto& other : domain.modes) spread = std::max(spread, distance(other.mean, m.mean));
  task.clip_scale = spread > 0.0 ? spread : 3.0 * m.std;
  task.hps_scale = 3.0 * m.std;
  task.off_manifold_distance = [domain](std::span<const double> z) {
    const auto [k, d] = domain.nearest_mode(z);
    return d * domain.modes[k].std;
  };
  task.subjects.push_back({m.label, m.label, 0, domain.dim, m.mean, m.mean, 3.0 * m.std, m.std});
  return task;
}

}  // namespace hicogen
