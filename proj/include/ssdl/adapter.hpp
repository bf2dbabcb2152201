#pragma once

// Affine embedding adapter trained by gradient descent on the floored
// triplet loss. It stands in for fine-tuning the embedding network.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ssdl/cluster.hpp"
#include "ssdl/core.hpp"
#include "ssdl/triplets.hpp"

namespace ssdl {

/// Raised when optimisation diverges.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// x -> W x + b with W stored row-major.
class Adapter {
 public:
  Adapter() = default;

  static Adapter identity(std::size_t dim) {
    Adapter a;
    a.dim_ = dim;
    a.weight_.assign(dim * dim, 0.0);
    a.bias_.assign(dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) a.weight_[i * dim + i] = 1.0;
    return a;
  }

  static Adapter from_parts(std::size_t dim, std::vector<double> weight, std::vector<double> bias) {
    if (weight.size() != dim * dim || bias.size() != dim) {
      throw ConfigError("adapter: weight must be dim x dim and bias must have dim entries");
    }
    Adapter a;
    a.dim_ = dim;
    a.weight_ = std::move(weight);
    a.bias_ = std::move(bias);
    if (!a.all_finite()) throw ConfigError("adapter: non-finite entries");
    return a;
  }

  std::size_t dim() const noexcept { return dim_; }
  double w(std::size_t row, std::size_t col) const { return weight_[row * dim_ + col]; }
  double& w(std::size_t row, std::size_t col) { return weight_[row * dim_ + col]; }
  const std::vector<double>& weight() const noexcept { return weight_; }
  std::vector<double>& weight() noexcept { return weight_; }
  const std::vector<double>& bias() const noexcept { return bias_; }
  std::vector<double>& bias() noexcept { return bias_; }

  bool all_finite() const {
    const auto finite = [](double v) { return std::isfinite(v); };
    return std::all_of(weight_.begin(), weight_.end(), finite) &&
           std::all_of(bias_.begin(), bias_.end(), finite);
  }

  Embedding apply(const Embedding& e) const {
    if (e.dim() != dim_) {
      throw ConfigError("adapter: embedding dimension " + std::to_string(e.dim()) +
                        " does not match adapter dimension " + std::to_string(dim_));
    }
    Embedding out(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
      double acc = bias_[i];
      const double* row = &weight_[i * dim_];
      for (std::size_t k = 0; k < dim_; ++k) acc += row[k] * e[k];
      out[i] = acc;
    }
    return out;
  }

  DetectionStore apply(const DetectionStore& store) const {
    return store.transformed([this](const Embedding& e) { return apply(e); });
  }

  friend bool operator==(const Adapter&, const Adapter&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> weight_;
  std::vector<double> bias_;
};

inline Embedding apply(const Adapter& adapter, const Embedding& e) { return adapter.apply(e); }

struct AdapterGradient {
  std::vector<double> weight;  // row-major, same layout as Adapter
  std::vector<double> bias;
};

struct LossAndGradient {
  double loss = 0.0;
  std::size_t active = 0;  // triplets off the gamma floor
  AdapterGradient gradient;
};

namespace detail {
constexpr std::size_t kGradientBlock = 32;
}

/// Mean floored triplet loss of `triplets` under `adapter`, with its exact
/// gradient. Triplet ids index the raw (pre-adapter) embeddings in `store`.
/// For u = W(a - p) and v = W(a - n) an active triplet contributes
/// 2 (u (a-p)^T - v (a-n)^T) to dL/dW. The bias cancels inside both
/// differences, so dL/db is identically zero.
inline LossAndGradient batch_loss_and_gradient(const Adapter& adapter,
                                               const std::vector<Triplet>& triplets,
                                               const MarginSet& margins,
                                               const DetectionStore& store, int threads = 1) {
  if (triplets.empty()) throw ConfigError("batch_loss_and_gradient: empty batch");
  const std::size_t d = adapter.dim();
  if (store.dim() != d) throw ConfigError("batch_loss_and_gradient: store/adapter dimension mismatch");

  struct Partial {
    double loss = 0.0;
    std::size_t active = 0;
    std::vector<double> grad;
  };
  const std::size_t blocks = (triplets.size() + detail::kGradientBlock - 1) / detail::kGradientBlock;
  std::vector<Partial> partial(blocks);

  parallel_blocks(blocks, threads, [&](std::size_t b) {
    Partial& out = partial[b];
    out.grad.assign(d * d, 0.0);
    std::vector<double> dp(d), dn(d), u(d), v(d);
    const std::size_t end = std::min(triplets.size(), (b + 1) * detail::kGradientBlock);
    for (std::size_t t = b * detail::kGradientBlock; t < end; ++t) {
      const auto& a = store.by_id(triplets[t].anchor).embedding;
      const auto& p = store.by_id(triplets[t].positive).embedding;
      const auto& n = store.by_id(triplets[t].negative).embedding;
      for (std::size_t k = 0; k < d; ++k) {
        dp[k] = a[k] - p[k];
        dn[k] = a[k] - n[k];
      }
      double ap = 0.0, an = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        double ui = 0.0, vi = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          ui += adapter.w(i, k) * dp[k];
          vi += adapter.w(i, k) * dn[k];
        }
        u[i] = ui;
        v[i] = vi;
        ap += ui * ui;
        an += vi * vi;
      }
      out.loss += triplet_loss(ap, an, margins);
      if (loss_at_floor(ap, an, margins)) continue;
      ++out.active;
      for (std::size_t i = 0; i < d; ++i) {
        double* row = &out.grad[i * d];
        const double ui = 2.0 * u[i], vi = 2.0 * v[i];
        for (std::size_t k = 0; k < d; ++k) row[k] += ui * dp[k] - vi * dn[k];
      }
    }
  });

  LossAndGradient result;
  result.gradient.weight.assign(d * d, 0.0);
  result.gradient.bias.assign(d, 0.0);
  for (const auto& p : partial) {
    result.loss += p.loss;
    result.active += p.active;
    for (std::size_t k = 0; k < d * d; ++k) result.gradient.weight[k] += p.grad[k];
  }
  const auto n = static_cast<double>(triplets.size());
  result.loss /= n;
  for (auto& g : result.gradient.weight) g /= n;
  return result;
}

inline LossAndGradient batch_loss_and_gradient(const Adapter& adapter, const TripletBatch& batch,
                                               const DetectionStore& store, int threads = 1) {
  return batch_loss_and_gradient(adapter, batch.triplets, batch.margins, store, threads);
}

struct TrainReport {
  std::vector<double> epoch_mean_loss;    // at the start of each epoch
  std::vector<double> active_fraction;    // at the start of each epoch
  std::vector<std::size_t> triplet_count;  // mined per epoch
  std::size_t steps = 0;
  double step_size = 0.0;
};

struct TrainOptions {
  double learning_rate = 1.0;
  double lr_factor = 0.03;
  int epochs = 5;
  int steps_per_epoch = 1;
  int batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;
  MiningOptions mining;

  double step_size() const { return learning_rate * lr_factor; }

  static TrainOptions from_config(const SsdlConfig& cfg, std::uint64_t seed) {
    return {cfg.learning_rate, cfg.lr_factor,     cfg.epochs_per_iteration,
            cfg.steps_per_epoch, cfg.batch_size, seed,
            MiningOptions::from_config(cfg)};
  }
};

/// Called with every mined batch, and the embeddings it was mined on,
/// before the batch is used for training.
using BatchObserver = std::function<void(const TripletBatch&, const DetectionStore&)>;

/// Re-mines triplets at the start of each epoch under the current adapter
/// (pseudo-labels fixed by `clusters`) and takes gradient steps on them.
/// Epochs whose batch is empty record the gamma floor as loss and take no
/// step.
inline std::pair<Adapter, TrainReport> train_adapter(Adapter adapter, const DetectionStore& raw,
                                                     const ClusterSet& clusters,
                                                     const MarginSet& margins,
                                                     const TrainOptions& options,
                                                     const BatchObserver& observe = {}) {
  const double step = options.step_size();
  if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("train_adapter: lr must be > 0");
  if (options.epochs < 1) throw ConfigError("train_adapter: epochs must be >= 1");
  if (options.steps_per_epoch < 1) throw ConfigError("train_adapter: steps_per_epoch must be >= 1");
  if (options.batch_size < 0) throw ConfigError("train_adapter: batch_size must be >= 0");

  TrainReport report;
  report.step_size = step;
  const std::size_t d = adapter.dim();
  const int threads = options.mining.threads;

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const DetectionStore current = adapter.apply(raw);
    const TripletBatch batch = mine_triplets(current, clusters, margins, epoch, options.mining);
    if (observe) observe(batch, current);
    report.triplet_count.push_back(batch.size());
    if (batch.empty()) {
      report.epoch_mean_loss.push_back(margins.gamma);
      report.active_fraction.push_back(0.0);
      continue;
    }

    std::vector<Triplet> order = batch.triplets;
    std::mt19937_64 shuffle_rng(options.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch + 1)));
    const std::size_t chunk = options.batch_size == 0
                                  ? order.size()
                                  : static_cast<std::size_t>(options.batch_size);
    bool first = true;
    for (int s = 0; s < options.steps_per_epoch; ++s) {
      if (chunk < order.size()) std::shuffle(order.begin(), order.end(), shuffle_rng);
      for (std::size_t begin = 0; begin < order.size(); begin += chunk) {
        const std::vector<Triplet> slice(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                         order.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(order.size(), begin + chunk)));
        const auto lg = batch_loss_and_gradient(adapter, slice, margins, raw, threads);
        if (!std::isfinite(lg.loss)) {
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                              "; learning rate too high");
        }
        if (first) {
          // Full-batch statistics at the start of the epoch.
          const auto full = chunk == order.size()
                                ? lg
                                : batch_loss_and_gradient(adapter, batch.triplets, margins, raw, threads);
          report.epoch_mean_loss.push_back(full.loss);
          report.active_fraction.push_back(static_cast<double>(full.active) /
                                           static_cast<double>(batch.size()));
          first = false;
        }
        for (std::size_t k = 0; k < d * d; ++k) adapter.weight()[k] -= step * lg.gradient.weight[k];
        for (std::size_t k = 0; k < d; ++k) adapter.bias()[k] -= step * lg.gradient.bias[k];
        ++report.steps;
        if (!adapter.all_finite()) {
          throw TrainingError("adapter diverged at epoch " + std::to_string(epoch) +
                              "; learning rate too high");
        }
      }
    }
  }
  return {std::move(adapter), std::move(report)};
}

}  // namespace ssdl
