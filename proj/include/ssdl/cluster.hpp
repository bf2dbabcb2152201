#pragma once

// Margin-based confident clustering over frame-ordered detections, the
// salient-cluster size filter and strong positive/negative pair
// classification.

#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "ssdl/core.hpp"

namespace ssdl {

struct Cluster {
  int label = 0;
  std::vector<DetectionId> member_ids;
  Embedding center;

  std::size_t size() const noexcept { return member_ids.size(); }
};

struct ClusterSet {
  std::vector<Cluster> clusters;
  std::map<DetectionId, int> assignment;

  bool empty() const noexcept { return clusters.empty(); }
  std::size_t size() const noexcept { return clusters.size(); }

  /// Pseudo-label of `id`, or -1 when the detection is unclustered.
  int label_of(DetectionId id) const {
    const auto it = assignment.find(id);
    return it == assignment.end() ? -1 : it->second;
  }
};

/// One absorption event: the center is the one the detection was tested
/// against, before the center update.
struct Absorption {
  DetectionId detection = 0;
  int label = 0;
  Embedding center_before;
  double sq_distance = 0.0;
};

inline double cluster_radius(const MarginSet& margins) {
  const double r = margins.beta / 2.0 - margins.gamma / 2.0;
  if (!(r > 0.0)) {
    throw ConfigError("cluster radius beta/2 - gamma/2 = " + std::to_string(r) +
                      " must be positive");
  }
  return r;
}

/// Mean of the member embeddings, summed in member order.
inline Embedding member_mean(const DetectionStore& store, const std::vector<DetectionId>& members) {
  Embedding center(store.dim());
  for (const auto id : members) {
    const auto& e = store.by_id(id).embedding;
    for (std::size_t k = 0; k < center.dim(); ++k) center[k] += e[k];
  }
  const auto n = static_cast<double>(members.size());
  for (std::size_t k = 0; k < center.dim(); ++k) center[k] /= n;
  return center;
}

/// Processes frames in order. Clusters existing at the start of a frame are
/// visited in creation order; each takes its nearest remaining detection of
/// the frame (lowest id on ties) if it lies strictly inside the cluster
/// radius of the current center. Leftover detections seed new clusters.
inline ClusterSet confident_cluster(const DetectionStore& store, const MarginSet& margins,
                                    std::vector<Absorption>* log = nullptr) {
  margins.validate();
  const double radius = cluster_radius(margins);
  ClusterSet out;

  for (std::size_t f = 0; f < store.frame_count(); ++f) {
    const auto& frame = store.frame(f);
    if (frame.empty()) continue;
    std::vector<const Detection*> pool;
    pool.reserve(frame.size());
    for (const auto& d : frame) pool.push_back(&d);

    const std::size_t existing = out.clusters.size();
    for (std::size_t c = 0; c < existing && !pool.empty(); ++c) {
      Cluster& cluster = out.clusters[c];
      std::size_t best = 0;
      double best_dist = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < pool.size(); ++j) {
        const double dist = sq_dist(pool[j]->embedding, cluster.center);
        if (dist < best_dist || (dist == best_dist && pool[j]->id < pool[best]->id)) {
          best = j;
          best_dist = dist;
        }
      }
      if (best_dist < radius) {
        const Detection* d = pool[best];
        if (log) log->push_back({d->id, cluster.label, cluster.center, best_dist});
        cluster.member_ids.push_back(d->id);
        cluster.center = member_mean(store, cluster.member_ids);
        out.assignment.emplace(d->id, cluster.label);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
      }
    }

    for (const Detection* d : pool) {
      const int label = static_cast<int>(out.clusters.size());
      out.clusters.push_back(Cluster{label, {d->id}, d->embedding});
      out.assignment.emplace(d->id, label);
    }
  }
  return out;
}

/// Keeps clusters with at least `min_size` members, relabelled 0.. in
/// order. The result is empty when nothing survives.
inline ClusterSet filter_salient(const ClusterSet& clusters, int min_size) {
  if (min_size < 1) throw ConfigError("filter_salient: min_size must be >= 1");
  ClusterSet out;
  for (const auto& c : clusters.clusters) {
    if (c.size() < static_cast<std::size_t>(min_size)) continue;
    Cluster kept = c;
    kept.label = static_cast<int>(out.clusters.size());
    for (const auto id : kept.member_ids) out.assignment.emplace(id, kept.label);
    out.clusters.push_back(std::move(kept));
  }
  return out;
}

enum class PairClass { kStrongPositive, kUncertain, kStrongNegative };

inline const char* to_string(PairClass c) {
  switch (c) {
    case PairClass::kStrongPositive: return "strong-positive";
    case PairClass::kUncertain: return "uncertain";
    case PairClass::kStrongNegative: return "strong-negative";
  }
  return "?";
}

inline PairClass classify_distance(double sq_distance, const MarginSet& margins) {
  if (sq_distance < margins.beta - margins.gamma) return PairClass::kStrongPositive;
  if (sq_distance > margins.beta + margins.gamma) return PairClass::kStrongNegative;
  return PairClass::kUncertain;
}

inline PairClass classify_pair(const Embedding& a, const Embedding& b, const MarginSet& margins) {
  margins.validate();
  return classify_distance(sq_dist(a, b), margins);
}

}  // namespace ssdl
