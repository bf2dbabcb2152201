#pragma once

// Self-paced domain learning cycle: a domain-blind iteration under wide
// margins followed by a domain-aware iteration under narrowed margins. Each
// iteration clusters the current embeddings, keeps salient clusters as
// pseudo-identities, mines triplets per epoch and updates the adapter.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ssdl/adapter.hpp"
#include "ssdl/cluster.hpp"
#include "ssdl/core.hpp"
#include "ssdl/evalkit.hpp"
#include "ssdl/triplets.hpp"

namespace ssdl {

struct IterationOutcome {
  MarginSet margins;
  std::size_t cluster_count = 0;
  std::size_t salient_cluster_count = 0;
  std::size_t clustered_detections = 0;  // members of salient clusters
  std::vector<std::size_t> triplet_counts;  // per epoch
  TrainReport train;
  bool skipped = false;
  std::string diagnostic;
  ClusterSet salient;
};

struct PipelineResult {
  double beta = 0.0;
  std::vector<IterationOutcome> iterations;  // [0] domain-blind, [1] domain-aware, ...
  Adapter adapter;
  std::vector<MetricSnapshot> metrics;  // baseline, then one per iteration
  bool degraded = false;
  std::vector<std::string> diagnostics;

  const IterationOutcome& db() const { return iterations.at(0); }
  const IterationOutcome& da() const { return iterations.at(1); }
  const MetricSnapshot& baseline() const { return metrics.at(0); }
  const MetricSnapshot& post_db() const { return metrics.at(1); }
  const MetricSnapshot& post_da() const { return metrics.at(2); }
};

/// Optional sink for every absorption and every mined batch, tagged with
/// the iteration that produced them. Embedding snapshots are kept only when
/// `keep_embeddings` is set.
struct PipelineAudit {
  struct Batch {
    int iteration;
    TripletBatch batch;
    std::optional<DetectionStore> mined_on;
  };
  struct Absorptions {
    int iteration;
    std::vector<Absorption> events;
    std::optional<DetectionStore> clustered_on;
  };
  bool keep_embeddings = false;
  std::vector<Absorptions> absorptions;
  std::vector<Batch> batches;
};

/// Scores embeddings that are already in adapter space. Owned by the
/// caller so ground-truth labels never enter the pipeline.
using MetricsFn = std::function<MetricSnapshot(const DetectionStore&)>;

inline std::uint64_t iteration_seed(std::uint64_t seed, int iteration) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(iteration + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Runs `config.iterations` self-paced iterations on `target` starting from
/// the identity adapter, with `beta` held fixed throughout. Clustering in
/// each iteration sees the target embedded by the adapter produced so far.
inline PipelineResult run_ssdl(const DetectionStore& target, const SsdlConfig& config, double beta,
                               const MetricsFn& metrics = {}, PipelineAudit* audit = nullptr) {
  config.validate();
  if (target.empty()) throw ConfigError("run_ssdl: empty target store");

  PipelineResult result;
  result.beta = beta;
  result.adapter = Adapter::identity(target.dim());
  if (metrics) result.metrics.push_back(metrics(target));

  for (int it = 0; it < config.iterations; ++it) {
    IterationOutcome outcome;
    outcome.margins = config.margins_for_iteration(it, beta);
    outcome.margins.validate();
    const std::string stage = it == 0 ? "domain-blind" : it == 1 ? "domain-aware"
                                                                 : "iteration " + std::to_string(it);

    const DetectionStore current = result.adapter.apply(target);
    std::vector<Absorption>* log = nullptr;
    if (audit) {
      audit->absorptions.push_back({it, {}, {}});
      if (audit->keep_embeddings) audit->absorptions.back().clustered_on = current;
      log = &audit->absorptions.back().events;
    }
    const ClusterSet clusters = confident_cluster(current, outcome.margins, log);
    outcome.cluster_count = clusters.size();
    outcome.salient = filter_salient(clusters, config.min_cluster_size);
    outcome.salient_cluster_count = outcome.salient.size();
    outcome.clustered_detections = outcome.salient.assignment.size();

    if (outcome.salient.empty()) {
      outcome.skipped = true;
      const auto epochs = static_cast<std::size_t>(config.epochs_per_iteration);
      outcome.triplet_counts.assign(epochs, 0);
      outcome.train.triplet_count.assign(epochs, 0);
      outcome.train.epoch_mean_loss.assign(epochs, outcome.margins.gamma);
      outcome.train.active_fraction.assign(epochs, 0.0);
      outcome.train.step_size = config.effective_lr();
      outcome.diagnostic = stage + ": no cluster reached min_cluster_size " +
                           std::to_string(config.min_cluster_size) + "; iteration skipped";
    } else {
      BatchObserver observe;
      if (audit) {
        observe = [audit, it](const TripletBatch& b, const DetectionStore& mined_on) {
          audit->batches.push_back({it, b, {}});
          if (audit->keep_embeddings) audit->batches.back().mined_on = mined_on;
        };
      }
      auto [adapter, report] =
          train_adapter(result.adapter, target, outcome.salient, outcome.margins,
                        TrainOptions::from_config(config, iteration_seed(config.seed, it)), observe);
      outcome.triplet_counts = report.triplet_count;
      outcome.train = std::move(report);
      if (outcome.triplet_counts.front() == 0) {
        outcome.skipped = true;
        outcome.diagnostic = stage + ": no triplet satisfied the margin band; iteration skipped";
      } else {
        result.adapter = std::move(adapter);
      }
    }

    if (outcome.skipped) {
      result.degraded = true;
      result.diagnostics.push_back(outcome.diagnostic);
    }
    if (metrics) result.metrics.push_back(metrics(result.adapter.apply(target)));
    result.iterations.push_back(std::move(outcome));
  }
  return result;
}

}  // namespace ssdl
