#pragma once

// Uncertainty-band triplet constraints, the floored triplet loss and
// definitive epoch-indexed semi-hard mining.

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ssdl/cluster.hpp"
#include "ssdl/core.hpp"

namespace ssdl {

/// True when ap + alpha < an fails, i.e. the triplet still produces a
/// gradient under the plain triplet loss. Equality counts as violating.
inline bool violates_margin(double d_ap, double d_an, double alpha) {
  return d_ap + alpha >= d_an;
}

/// The uncertainty-aware obey constraint: ap + gamma < an.
inline bool obeys_uncertainty(double d_ap, double d_an, double gamma) {
  return d_ap + gamma < d_an;
}

/// Negative inside the semi-hard band (ap + gamma, ap + alpha].
inline bool is_valid_negative(double d_ap, double d_an, const MarginSet& margins) {
  return violates_margin(d_ap, d_an, margins.alpha) && obeys_uncertainty(d_ap, d_an, margins.gamma);
}

/// max{gamma, ap - an + alpha}.
inline double triplet_loss(double d_ap, double d_an, const MarginSet& margins) {
  return std::max(margins.gamma, d_ap - d_an + margins.alpha);
}

/// True when the loss sits on its gamma floor and contributes no gradient.
inline bool loss_at_floor(double d_ap, double d_an, const MarginSet& margins) {
  return d_ap - d_an + margins.alpha < margins.gamma;
}

struct Triplet {
  DetectionId anchor = 0;
  DetectionId positive = 0;
  DetectionId negative = 0;
  double d_ap = 0.0;  // at mining time
  double d_an = 0.0;  // at mining time

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct TripletBatch {
  std::vector<Triplet> triplets;
  int epoch = 0;
  MarginSet margins;

  bool empty() const noexcept { return triplets.empty(); }
  std::size_t size() const noexcept { return triplets.size(); }
};

struct MiningOptions {
  NegativePool pool = NegativePool::kOtherLabel;
  EpochOverflow overflow = EpochOverflow::kClamp;
  bool dedupe_pairs = false;
  int threads = 1;

  static MiningOptions from_config(const SsdlConfig& cfg) {
    return {cfg.negative_pool, cfg.epoch_overflow, cfg.dedupe_pairs, cfg.threads};
  }
};

namespace detail {

struct Member {
  DetectionId id;
  int label;
  const Embedding* embedding;
};

inline std::vector<Member> clustered_members(const DetectionStore& store, const ClusterSet& clusters) {
  std::vector<Member> members;
  for (const auto& c : clusters.clusters) {
    for (const auto id : c.member_ids) {
      members.push_back({id, c.label, &store.by_id(id).embedding});
    }
  }
  return members;
}

inline bool in_pool(const Member& anchor, const Member& candidate, NegativePool pool) {
  return pool == NegativePool::kOtherLabel ? candidate.label != anchor.label
                                           : candidate.id != anchor.id;
}

/// Walks every (anchor, positive) pair in cluster/member order and calls
/// `visit(anchor_index, positive_index, row)` where row holds the squared
/// distances from the anchor to every clustered member. Work is split per
/// anchor; `visit` must only touch state owned by that anchor.
template <typename Visit>
void for_each_pair(const std::vector<Member>& members, const MiningOptions& options, Visit&& visit) {
  // Members of one cluster are contiguous.
  std::vector<std::size_t> cluster_begin(members.size()), cluster_end(members.size());
  for (std::size_t i = 0; i < members.size();) {
    std::size_t j = i;
    while (j < members.size() && members[j].label == members[i].label) ++j;
    for (std::size_t k = i; k < j; ++k) {
      cluster_begin[k] = i;
      cluster_end[k] = j;
    }
    i = j;
  }
  parallel_blocks(members.size(), options.threads, [&](std::size_t a) {
    std::vector<double> row(members.size());
    for (std::size_t n = 0; n < members.size(); ++n) {
      row[n] = sq_dist(*members[a].embedding, *members[n].embedding);
    }
    for (std::size_t p = cluster_begin[a]; p < cluster_end[a]; ++p) {
      if (p == a) continue;
      if (options.dedupe_pairs && p < a) continue;
      visit(a, p, row);
    }
  });
}

}  // namespace detail

/// For every ordered same-label pair (a, p), ranks the valid negatives by
/// descending anchor distance (ties by ascending id) and emits the
/// (epoch+1)-th. Past the end of the list the last (hardest) one is used,
/// or the pair is skipped under EpochOverflow::kSkip. Distances come from
/// the embeddings held in `store`.
inline TripletBatch mine_triplets(const DetectionStore& store, const ClusterSet& clusters,
                                  const MarginSet& margins, int epoch,
                                  const MiningOptions& options = {}) {
  if (epoch < 0) throw ConfigError("mine_triplets: epoch must be >= 0");
  const auto members = detail::clustered_members(store, clusters);
  std::vector<std::vector<Triplet>> per_anchor(members.size());

  detail::for_each_pair(members, options, [&](std::size_t a, std::size_t p,
                                               const std::vector<double>& row) {
    const double d_ap = row[p];
    std::vector<std::pair<double, DetectionId>> valid;
    for (std::size_t n = 0; n < members.size(); ++n) {
      if (!detail::in_pool(members[a], members[n], options.pool)) continue;
      if (is_valid_negative(d_ap, row[n], margins)) valid.emplace_back(row[n], members[n].id);
    }
    if (valid.empty()) return;
    std::sort(valid.begin(), valid.end(), [](const auto& x, const auto& y) {
      return x.first != y.first ? x.first > y.first : x.second < y.second;
    });
    auto rank = static_cast<std::size_t>(epoch);
    if (rank >= valid.size()) {
      if (options.overflow == EpochOverflow::kSkip) return;
      rank = valid.size() - 1;
    }
    per_anchor[a].push_back(
        Triplet{members[a].id, members[p].id, valid[rank].second, d_ap, valid[rank].first});
  });

  TripletBatch batch;
  batch.epoch = epoch;
  batch.margins = margins;
  for (auto& t : per_anchor) {
    batch.triplets.insert(batch.triplets.end(), t.begin(), t.end());
  }
  return batch;
}

/// Total number of (pair, valid negative) combinations over all mined
/// pairs, i.e. the size of the semi-hard candidate pool.
inline std::size_t count_valid_negatives(const DetectionStore& store, const ClusterSet& clusters,
                                         const MarginSet& margins,
                                         const MiningOptions& options = {}) {
  const auto members = detail::clustered_members(store, clusters);
  std::vector<std::size_t> per_anchor(members.size(), 0);
  detail::for_each_pair(members, options, [&](std::size_t a, std::size_t p,
                                               const std::vector<double>& row) {
    for (std::size_t n = 0; n < members.size(); ++n) {
      if (detail::in_pool(members[a], members[n], options.pool) &&
          is_valid_negative(row[p], row[n], margins)) {
        ++per_anchor[a];
      }
    }
  });
  std::size_t total = 0;
  for (const auto c : per_anchor) total += c;
  return total;
}

}  // namespace ssdl
