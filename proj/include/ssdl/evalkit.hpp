#pragma once

// Verification and identification metrics over labelled pairs and face sets:
// accuracy at a threshold, TAR at fixed FAR, rank-1 identification with
// score-weighted set aggregation, and threshold calibration.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "ssdl/core.hpp"

namespace ssdl {

struct LabeledPair {
  DetectionId a = 0;
  DetectionId b = 0;
  bool same = false;

  friend bool operator==(const LabeledPair&, const LabeledPair&) = default;
};

/// One identity's media set.
struct FaceSet {
  int identity = 0;
  std::vector<DetectionId> members;
};

using Warnings = std::vector<std::string>;

inline const std::vector<double>& default_far_targets() {
  static const std::vector<double> targets{0.001, 0.01, 0.1};
  return targets;
}

struct MetricSnapshot {
  double verification_accuracy = 0.0;
  std::vector<double> far_targets = default_far_targets();
  std::vector<double> tar;  // one per FAR target
  double rank1 = 0.0;

  friend bool operator==(const MetricSnapshot&, const MetricSnapshot&) = default;
};

/// Score-weighted mean of the member embeddings, weights = score / sum of
/// scores. All-zero scores fall back to uniform weights.
inline Embedding aggregate_set(const FaceSet& set, const DetectionStore& store,
                               Warnings* warnings = nullptr) {
  if (set.members.empty()) throw ConfigError("aggregate_set: empty face set");
  double total = 0.0;
  for (const auto id : set.members) total += store.by_id(id).score;
  const bool uniform = !(total > 0.0);
  if (uniform && warnings) {
    warnings->push_back("face set " + std::to_string(set.identity) +
                        ": all detection scores are zero, using uniform weights");
  }
  Embedding out(store.dim());
  for (const auto id : set.members) {
    const auto& d = store.by_id(id);
    const double w = uniform ? 1.0 / static_cast<double>(set.members.size()) : d.score / total;
    for (std::size_t k = 0; k < out.dim(); ++k) out[k] += w * d.embedding[k];
  }
  return out;
}

inline std::vector<double> pair_distances(const std::vector<LabeledPair>& pairs,
                                          const DetectionStore& store) {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(sq_dist(store.by_id(p.a).embedding, store.by_id(p.b).embedding));
  return out;
}

/// Fraction of pairs where (distance < threshold) agrees with the label.
inline double accuracy_at(const std::vector<double>& distances, const std::vector<bool>& same,
                          double threshold) {
  if (distances.empty()) throw ConfigError("verification: no pairs");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < distances.size(); ++i) {
    if ((distances[i] < threshold) == same[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(distances.size());
}

inline double verification_accuracy(const std::vector<LabeledPair>& pairs, double beta,
                                    const DetectionStore& store) {
  if (pairs.empty()) throw ConfigError("verification_accuracy: no pairs");
  std::vector<bool> same;
  for (const auto& p : pairs) same.push_back(p.same);
  return accuracy_at(pair_distances(pairs, store), same, beta);
}

struct TarAtFar {
  std::vector<double> far_targets;
  std::vector<double> tar;
  std::vector<double> threshold;        // accept when distance < threshold
  std::vector<double> achieved_far;
  std::vector<bool> resolution_limited;  // target below 1 / #negatives
};

/// For each FAR target, takes the largest threshold whose empirical FAR
/// (negatives with distance < threshold) is <= target, and reports TAR
/// there. No interpolation.
inline TarAtFar tar_at_far(const std::vector<double>& distances, const std::vector<bool>& same,
                           const std::vector<double>& far_targets, Warnings* warnings = nullptr) {
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < distances.size(); ++i) (same[i] ? pos : neg).push_back(distances[i]);
  if (neg.empty()) throw ConfigError("tar_at_far: need at least one negative pair");
  if (pos.empty()) throw ConfigError("tar_at_far: need at least one positive pair");
  std::sort(neg.begin(), neg.end());
  std::sort(pos.begin(), pos.end());

  TarAtFar out;
  out.far_targets = far_targets;
  const auto n_neg = static_cast<double>(neg.size());
  for (const double target : far_targets) {
    // Allowed false accepts; the epsilon absorbs products like 0.1 * 10.
    const auto allowed =
        static_cast<std::size_t>(std::floor(std::max(0.0, target) * n_neg + 1e-9));
    const bool limited = target < 1.0 / n_neg;
    if (limited && warnings) {
      warnings->push_back("FAR target " + std::to_string(target) + " is below the resolution 1/" +
                          std::to_string(neg.size()) + "; using the strictest threshold");
    }
    const double threshold =
        allowed >= neg.size() ? std::numeric_limits<double>::infinity() : neg[allowed];
    const auto accepted_pos = static_cast<std::size_t>(
        std::lower_bound(pos.begin(), pos.end(), threshold) - pos.begin());
    const auto accepted_neg = static_cast<std::size_t>(
        std::lower_bound(neg.begin(), neg.end(), threshold) - neg.begin());
    out.tar.push_back(static_cast<double>(accepted_pos) / static_cast<double>(pos.size()));
    out.threshold.push_back(threshold);
    out.achieved_far.push_back(static_cast<double>(accepted_neg) / n_neg);
    out.resolution_limited.push_back(limited);
  }
  return out;
}

inline TarAtFar tar_at_far(const std::vector<LabeledPair>& pairs, const std::vector<double>& far_targets,
                           const DetectionStore& store, Warnings* warnings = nullptr) {
  std::vector<bool> same;
  for (const auto& p : pairs) same.push_back(p.same);
  return tar_at_far(pair_distances(pairs, store), same, far_targets, warnings);
}

struct RocRow {
  double threshold;  // accept when distance <= threshold
  double tar;
  double far;
};

/// Raw (threshold, TAR, FAR) at every unique pair distance.
inline std::vector<RocRow> roc_table(const std::vector<double>& distances, const std::vector<bool>& same) {
  std::vector<std::size_t> order(distances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return distances[x] < distances[y]; });
  const auto n_pos = static_cast<double>(std::count(same.begin(), same.end(), true));
  const auto n_neg = static_cast<double>(same.size()) - n_pos;
  std::vector<RocRow> rows;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (same[order[i]] ? tp : fp)++;
    if (i + 1 < order.size() && distances[order[i + 1]] == distances[order[i]]) continue;
    rows.push_back({distances[order[i]], n_pos > 0 ? static_cast<double>(tp) / n_pos : 0.0,
                    n_neg > 0 ? static_cast<double>(fp) / n_neg : 0.0});
  }
  return rows;
}

/// Fraction of probe sets whose nearest gallery aggregate (lowest gallery
/// index on ties) carries the probe's identity.
inline double rank1_identification(const std::vector<FaceSet>& probes, const std::vector<FaceSet>& gallery,
                                   const DetectionStore& store, Warnings* warnings = nullptr) {
  if (gallery.empty()) throw ConfigError("rank1_identification: empty gallery");
  if (probes.empty()) throw ConfigError("rank1_identification: no probes");
  std::vector<Embedding> gallery_vecs;
  std::vector<int> seen;
  for (const auto& g : gallery) {
    if (std::find(seen.begin(), seen.end(), g.identity) != seen.end()) {
      throw ConfigError("rank1_identification: duplicate gallery identity " + std::to_string(g.identity));
    }
    seen.push_back(g.identity);
    gallery_vecs.push_back(aggregate_set(g, store, warnings));
  }
  std::size_t correct = 0;
  for (const auto& probe : probes) {
    const Embedding q = aggregate_set(probe, store, warnings);
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < gallery_vecs.size(); ++g) {
      const double dist = sq_dist(q, gallery_vecs[g]);
      if (dist < best_dist) {
        best_dist = dist;
        best = g;
      }
    }
    if (gallery[best].identity == probe.identity) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(probes.size());
}

struct Calibration {
  double beta = 0.0;
  double accuracy = 0.0;
  std::size_t tied_candidates = 1;  // thresholds sharing the best accuracy
  bool degenerate = false;          // all distances identical
};

/// Threshold maximising verification accuracy. Candidates are midpoints
/// between consecutive unique distances, plus min/2 (accept nothing) and
/// max + 1 (accept everything). Ties go to the midpoint of the widest gap,
/// then to the lowest threshold; the two sentinels count as zero-width.
inline Calibration calibrate_threshold(const std::vector<double>& distances, const std::vector<bool>& same,
                                       Warnings* warnings = nullptr) {
  const auto n_pos = std::count(same.begin(), same.end(), true);
  if (n_pos == 0 || n_pos == static_cast<std::ptrdiff_t>(same.size())) {
    throw ConfigError("calibrate_beta: need at least one positive and one negative pair");
  }
  std::vector<double> unique = distances;
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());

  Calibration out;
  if (unique.size() == 1) {
    out.degenerate = true;
    out.beta = unique[0] + 1e-9 * std::max(1.0, std::abs(unique[0]));
    out.accuracy = accuracy_at(distances, same, out.beta);
    if (warnings) warnings->push_back("calibrate_beta: all pair distances identical");
    return out;
  }

  struct Candidate {
    double threshold;
    double gap;
  };
  std::vector<Candidate> candidates;
  candidates.push_back({unique.front() / 2.0, 0.0});
  for (std::size_t i = 0; i + 1 < unique.size(); ++i) {
    candidates.push_back({(unique[i] + unique[i + 1]) / 2.0, unique[i + 1] - unique[i]});
  }
  candidates.push_back({unique.back() + 1.0, 0.0});

  // Accuracy for every candidate via a single sorted sweep.
  std::vector<std::size_t> order(distances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return distances[x] < distances[y]; });
  const auto total = static_cast<double>(distances.size());
  std::size_t correct = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(same.size()) - n_pos);
  std::size_t cursor = 0;
  double best_acc = -1.0;
  const Candidate* best = nullptr;
  std::size_t ties = 0;
  for (const auto& c : candidates) {
    while (cursor < order.size() && distances[order[cursor]] < c.threshold) {
      // Moving a pair to "accepted": right if positive, wrong if negative.
      if (same[order[cursor]]) ++correct; else --correct;
      ++cursor;
    }
    const double acc = static_cast<double>(correct) / total;
    if (acc > best_acc) {
      best_acc = acc;
      best = &c;
      ties = 1;
    } else if (acc == best_acc) {
      ++ties;
      if (c.gap > best->gap) best = &c;
    }
  }
  out.beta = best->threshold;
  out.accuracy = best_acc;
  out.tied_candidates = ties;
  return out;
}

inline Calibration calibrate_beta(const std::vector<LabeledPair>& pairs, const DetectionStore& store,
                                  Warnings* warnings = nullptr) {
  std::vector<bool> same;
  for (const auto& p : pairs) same.push_back(p.same);
  return calibrate_threshold(pair_distances(pairs, store), same, warnings);
}

/// Pairs of raw embeddings with a same-identity flag.
inline Calibration calibrate_beta(const std::vector<std::tuple<Embedding, Embedding, bool>>& pairs,
                                  Warnings* warnings = nullptr) {
  std::vector<double> distances;
  std::vector<bool> same;
  for (const auto& [a, b, s] : pairs) {
    distances.push_back(sq_dist(a, b));
    same.push_back(s);
  }
  return calibrate_threshold(distances, same, warnings);
}

/// Balanced verification pairs: `per_class` same-identity and
/// `per_class` different-identity pairs drawn without repetition where the
/// population allows it.
inline std::vector<LabeledPair> make_verification_pairs(const std::map<DetectionId, int>& labels,
                                                        std::size_t per_class, std::uint64_t seed) {
  std::vector<DetectionId> ids;
  std::vector<int> label;
  for (const auto& [id, l] : labels) {
    ids.push_back(id);
    label.push_back(l);
  }
  if (ids.size() < 2) throw ConfigError("make_verification_pairs: need at least two detections");
  std::vector<LabeledPair> pos, neg;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      (label[i] == label[j] ? pos : neg).push_back({ids[i], ids[j], label[i] == label[j]});
    }
  }
  if (pos.empty() || neg.empty()) {
    throw ConfigError("make_verification_pairs: labels must contain both same and different pairs");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  pos.resize(std::min(pos.size(), per_class));
  neg.resize(std::min(neg.size(), per_class));
  std::vector<LabeledPair> out;
  out.reserve(pos.size() + neg.size());
  for (std::size_t i = 0; i < std::max(pos.size(), neg.size()); ++i) {
    if (i < pos.size()) out.push_back(pos[i]);
    if (i < neg.size()) out.push_back(neg[i]);
  }
  return out;
}

/// Splits each identity's detections (ascending id) into a gallery set
/// (first half) and a probe set (second half). Identities with a single
/// detection are left out.
inline std::pair<std::vector<FaceSet>, std::vector<FaceSet>> make_identification_sets(
    const std::map<DetectionId, int>& labels) {
  std::map<int, std::vector<DetectionId>> by_identity;
  for (const auto& [id, l] : labels) by_identity[l].push_back(id);
  std::vector<FaceSet> gallery, probes;
  for (auto& [identity, ids] : by_identity) {
    if (ids.size() < 2) continue;
    const auto half = static_cast<std::ptrdiff_t>(ids.size() / 2);
    gallery.push_back({identity, {ids.begin(), ids.begin() + half}});
    probes.push_back({identity, {ids.begin() + half, ids.end()}});
  }
  return {std::move(gallery), std::move(probes)};
}

/// Owns the ground truth needed to score an adapter on a store. The
/// pipeline only ever sees the resulting snapshots.
class Evaluator {
 public:
  Evaluator(std::vector<LabeledPair> pairs, std::vector<FaceSet> gallery, std::vector<FaceSet> probes,
            double beta)
      : pairs_(std::move(pairs)), gallery_(std::move(gallery)), probes_(std::move(probes)), beta_(beta) {}

  /// Balanced pairs plus a half/half identification split from `labels`.
  static Evaluator from_labels(const std::map<DetectionId, int>& labels, double beta,
                               std::size_t pairs_per_class, std::uint64_t seed) {
    auto [gallery, probes] = make_identification_sets(labels);
    return Evaluator(make_verification_pairs(labels, pairs_per_class, seed), std::move(gallery),
                     std::move(probes), beta);
  }

  const std::vector<LabeledPair>& pairs() const noexcept { return pairs_; }
  double beta() const noexcept { return beta_; }

  /// Metrics on `store`, whose embeddings are already in evaluation space.
  MetricSnapshot snapshot(const DetectionStore& store, Warnings* warnings = nullptr) const {
    MetricSnapshot m;
    std::vector<bool> same;
    for (const auto& p : pairs_) same.push_back(p.same);
    const auto distances = pair_distances(pairs_, store);
    m.verification_accuracy = accuracy_at(distances, same, beta_);
    m.tar = tar_at_far(distances, same, m.far_targets, warnings).tar;
    m.rank1 = gallery_.empty() ? 0.0 : rank1_identification(probes_, gallery_, store, warnings);
    return m;
  }

 private:
  std::vector<LabeledPair> pairs_;
  std::vector<FaceSet> gallery_;
  std::vector<FaceSet> probes_;
  double beta_;
};

}  // namespace ssdl
