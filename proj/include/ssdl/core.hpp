#pragma once

// Shared domain types for self-supervised domain learning: embeddings,
// detections grouped by frame, margin sets, run configuration, squared
// distance and the deterministic worker pool used for ordered reductions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ssdl {

/// Raised for any violated precondition or invariant on inputs and config.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using DetectionId = std::int64_t;

/// Feature vector in a fixed-dimensional embedding space.
class Embedding {
 public:
  Embedding() = default;
  explicit Embedding(std::size_t dim) : values_(dim, 0.0) {}
  explicit Embedding(std::vector<double> values) : values_(std::move(values)) {}
  Embedding(std::initializer_list<double> values) : values_(values) {}

  std::size_t dim() const noexcept { return values_.size(); }
  double operator[](std::size_t k) const { return values_[k]; }
  double& operator[](std::size_t k) { return values_[k]; }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  const std::vector<double>& vec() const noexcept { return values_; }

  bool all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Embedding&, const Embedding&) = default;

 private:
  std::vector<double> values_;
};

/// Squared Euclidean distance. Every margin comparison in the library goes
/// through this function.
inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ConfigError("sq_dist: dimension mismatch (" + std::to_string(a.size()) +
                      " vs " + std::to_string(b.size()) + ")");
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double diff = a[k] - b[k];
    acc += diff * diff;
  }
  return acc;
}

inline double sq_dist(const Embedding& a, const Embedding& b) {
  return sq_dist(a.values(), b.values());
}

struct Detection {
  DetectionId id = 0;
  std::int64_t frame = 0;
  double score = 1.0;
  Embedding embedding;
};

/// Detections grouped by frame index 0..F-1, with O(1) lookup by id.
class DetectionStore {
 public:
  DetectionStore() = default;

  /// Groups `detections` by their frame field. Frames with no detections in
  /// the range [0, max frame] are kept as empty frames.
  static DetectionStore from_detections(std::vector<Detection> detections) {
    std::int64_t max_frame = -1;
    for (const auto& d : detections) {
      if (d.frame < 0) {
        throw ConfigError("detection " + std::to_string(d.id) + ": negative frame index");
      }
      max_frame = std::max(max_frame, d.frame);
    }
    std::vector<std::vector<Detection>> frames(static_cast<std::size_t>(max_frame + 1));
    for (auto& d : detections) {
      frames[static_cast<std::size_t>(d.frame)].push_back(std::move(d));
    }
    return DetectionStore(std::move(frames));
  }

  explicit DetectionStore(std::vector<std::vector<Detection>> frames)
      : frames_(std::move(frames)) {
    for (std::size_t f = 0; f < frames_.size(); ++f) {
      for (std::size_t j = 0; j < frames_[f].size(); ++j) {
        const Detection& d = frames_[f][j];
        if (d.frame != static_cast<std::int64_t>(f)) {
          throw ConfigError("detection " + std::to_string(d.id) + " filed under frame " +
                            std::to_string(f) + " but carries frame " +
                            std::to_string(d.frame));
        }
        if (!std::isfinite(d.score) || d.score < 0.0 || d.score > 1.0) {
          throw ConfigError("detection " + std::to_string(d.id) + ": score outside [0,1]");
        }
        if (order_.empty()) {
          dim_ = d.embedding.dim();
        } else if (d.embedding.dim() != dim_) {
          throw ConfigError("detection " + std::to_string(d.id) + ": embedding dimension " +
                            std::to_string(d.embedding.dim()) + " differs from store dimension " +
                            std::to_string(dim_));
        }
        if (!d.embedding.all_finite()) {
          throw ConfigError("detection " + std::to_string(d.id) + ": non-finite embedding");
        }
        if (!index_.emplace(d.id, order_.size()).second) {
          throw ConfigError("duplicate detection id " + std::to_string(d.id));
        }
        order_.emplace_back(f, j);
      }
    }
  }

  std::size_t frame_count() const noexcept { return frames_.size(); }
  std::size_t size() const noexcept { return order_.size(); }
  bool empty() const noexcept { return order_.empty(); }
  std::size_t dim() const noexcept { return dim_; }

  const std::vector<Detection>& frame(std::size_t f) const { return frames_.at(f); }
  const std::vector<std::vector<Detection>>& frames() const noexcept { return frames_; }

  /// The i-th detection in (frame, position) order.
  const Detection& at(std::size_t i) const {
    const auto [f, j] = order_.at(i);
    return frames_[f][j];
  }

  bool contains(DetectionId id) const { return index_.count(id) != 0; }

  const Detection& by_id(DetectionId id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) {
      throw ConfigError("unknown detection id " + std::to_string(id));
    }
    return at(it->second);
  }

  /// Position of `id` in (frame, position) order.
  std::size_t position_of(DetectionId id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) {
      throw ConfigError("unknown detection id " + std::to_string(id));
    }
    return it->second;
  }

  /// Copy of this store with every embedding replaced by `fn(embedding)`.
  template <typename Fn>
  DetectionStore transformed(Fn&& fn) const {
    auto frames = frames_;
    for (auto& frame : frames) {
      for (auto& d : frame) d.embedding = fn(d.embedding);
    }
    return DetectionStore(std::move(frames));
  }

  friend bool operator==(const DetectionStore& a, const DetectionStore& b) {
    if (a.frames_.size() != b.frames_.size()) return false;
    for (std::size_t f = 0; f < a.frames_.size(); ++f) {
      const auto& fa = a.frames_[f];
      const auto& fb = b.frames_[f];
      if (fa.size() != fb.size()) return false;
      for (std::size_t j = 0; j < fa.size(); ++j) {
        if (fa[j].id != fb[j].id || fa[j].frame != fb[j].frame || fa[j].score != fb[j].score ||
            fa[j].embedding != fb[j].embedding) {
          return false;
        }
      }
    }
    return true;
  }

 private:
  std::vector<std::vector<Detection>> frames_;
  std::vector<std::pair<std::size_t, std::size_t>> order_;
  std::unordered_map<DetectionId, std::size_t> index_;
  std::size_t dim_ = 0;
};

/// Violate margin alpha, uncertainty margin gamma and verification threshold
/// beta, all in squared-distance units.
struct MarginSet {
  double alpha = 0.2;
  double gamma = 0.1;
  double beta = 1.0;

  void validate() const {
    if (!std::isfinite(alpha) || !std::isfinite(gamma) || !std::isfinite(beta)) {
      throw ConfigError("margins must be finite");
    }
    if (alpha <= 0.0) throw ConfigError("alpha must be > 0");
    if (gamma < 0.0) throw ConfigError("gamma must be >= 0");
    if (beta <= 0.0) throw ConfigError("beta must be > 0");
    if (!(gamma < alpha)) {
      throw ConfigError("empty negative band: gamma (" + std::to_string(gamma) +
                        ") must be < alpha (" + std::to_string(alpha) + ")");
    }
    if (!(beta / 2.0 - gamma / 2.0 > 0.0)) {
      throw ConfigError("non-positive cluster radius: beta/2 - gamma/2 <= 0");
    }
  }

  MarginSet with_beta(double b) const { return {alpha, gamma, b}; }

  friend bool operator==(const MarginSet&, const MarginSet&) = default;
};

/// Pool of candidate negatives for triplet mining.
enum class NegativePool {
  kOtherLabel,   // detections carrying a different pseudo-label
  kAllButAnchor  // every clustered detection except the anchor itself
};

/// What to do when the epoch index exceeds the number of valid negatives.
enum class EpochOverflow { kClamp, kSkip };

struct SsdlConfig {
  MarginSet db_margins{0.2, 0.1, 1.0};
  MarginSet da_margins{0.1, 0.05, 1.0};
  int min_cluster_size = 5;
  int epochs_per_iteration = 5;
  double learning_rate = 1.0;
  double lr_factor = 0.03;
  std::uint64_t seed = 0;

  // Extensions with defaults that reproduce the two-iteration schedule.
  int iterations = 2;
  double margin_decay = 0.5;
  int steps_per_epoch = 1;
  int batch_size = 0;  // 0 = full batch
  bool dedupe_pairs = false;
  NegativePool negative_pool = NegativePool::kOtherLabel;
  EpochOverflow epoch_overflow = EpochOverflow::kClamp;
  int threads = 1;

  double effective_lr() const { return learning_rate * lr_factor; }

  /// Margins for self-paced iteration `k` (0 = domain-blind). Iterations past
  /// the second shrink alpha and gamma geometrically by `margin_decay`.
  MarginSet margins_for_iteration(int k, double beta) const {
    if (k == 0) return db_margins.with_beta(beta);
    MarginSet m = da_margins.with_beta(beta);
    for (int i = 1; i < k; ++i) {
      m.alpha *= margin_decay;
      m.gamma *= margin_decay;
    }
    return m;
  }

  /// Checks everything except beta, which is calibrated separately.
  void validate() const {
    db_margins.validate();
    da_margins.validate();
    if (da_margins.alpha > db_margins.alpha || da_margins.gamma > db_margins.gamma) {
      throw ConfigError("margin schedule must be decremental: da_alpha <= db_alpha and "
                        "da_gamma <= db_gamma");
    }
    if (min_cluster_size < 1) throw ConfigError("min_cluster_size must be >= 1");
    if (epochs_per_iteration < 1) throw ConfigError("epochs_per_iteration must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning_rate must be > 0");
    }
    if (!(lr_factor > 0.0) || !std::isfinite(lr_factor)) {
      throw ConfigError("lr_factor must be > 0");
    }
    if (iterations < 1) throw ConfigError("iterations must be >= 1");
    if (!(margin_decay > 0.0 && margin_decay <= 1.0)) {
      throw ConfigError("margin_decay must be in (0, 1]");
    }
    if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
    if (batch_size < 0) throw ConfigError("batch_size must be >= 0");
    if (threads < 1) throw ConfigError("threads must be >= 1");
  }
};

/// Runs `fn(block)` for block in [0, blocks) on up to `threads` workers.
/// Callers make results independent of the thread count by writing each
/// block's output to its own slot and reducing slots in block order.
inline void parallel_blocks(std::size_t blocks, int threads,
                            const std::function<void(std::size_t)>& fn) {
  const std::size_t workers =
      std::min<std::size_t>(blocks, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t b = 0; b < blocks; ++b) fn(b);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t b = w; b < blocks; b += workers) fn(b);
    });
  }
}

}  // namespace ssdl
