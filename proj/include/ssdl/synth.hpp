#pragma once

// Seeded synthetic source/target embeddings with a controllable domain shift.
//
// Identity centroids are drawn on the unit hypersphere. Source detection
// (j, k) is centroid_k + intra_class_sigma * z_jk. The target reuses the same
// standard-normal draws z_jk: detection (j, k) is
//   R * centroid_k + t + noise_sigma * z_jk
// where R rotates by shift_rotation_angle inside a seeded random 2-plane and
// t has norm shift_translation_norm. With no shift and
// noise_sigma == intra_class_sigma the target equals the source.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ssdl/core.hpp"

namespace ssdl {

/// Ground-truth identity per detection id. Never passed to the pipeline.
using IdentityLabels = std::map<DetectionId, int>;

struct SynthSpec {
  int identities = 5;
  int detections_per_identity = 30;
  int dimension = 16;
  double intra_class_sigma = 0.05;
  double shift_rotation_angle = 0.0;
  double shift_translation_norm = 0.0;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (identities < 2) throw ConfigError("synth: identities must be >= 2");
    if (detections_per_identity < 1) {
      throw ConfigError("synth: identities exceed detections requested (per must be >= 1)");
    }
    if (dimension < 2) throw ConfigError("synth: dimension must be >= 2");
    if (!std::isfinite(intra_class_sigma) || intra_class_sigma <= 0.0) {
      throw ConfigError("synth: intra_class_sigma must be finite and > 0");
    }
    if (!std::isfinite(noise_sigma) || noise_sigma < 0.0) {
      throw ConfigError("synth: noise_sigma must be finite and >= 0");
    }
    if (!std::isfinite(shift_rotation_angle)) {
      throw ConfigError("synth: shift_rotation_angle must be finite");
    }
    if (!std::isfinite(shift_translation_norm) || shift_translation_norm < 0.0) {
      throw ConfigError("synth: shift_translation_norm must be finite and >= 0");
    }
  }
};

struct LabeledStore {
  DetectionStore store;
  IdentityLabels labels;
};

namespace detail {

inline std::vector<double> random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(dim));
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = normal(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

/// Everything random about a synthetic world, drawn in a fixed order.
struct SynthWorld {
  std::vector<std::vector<double>> centroids;  // [identity][dim]
  std::vector<std::vector<double>> unit_noise;  // [detection][dim]
  std::vector<double> scores;                   // [detection]
  std::vector<double> plane_u, plane_v;         // orthonormal rotation plane
  std::vector<double> translation_dir;          // unit vector

  static SynthWorld draw(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> score_dist(0.5, 1.0);
    const auto dim = static_cast<std::size_t>(spec.dimension);
    const auto total = static_cast<std::size_t>(spec.identities) *
                       static_cast<std::size_t>(spec.detections_per_identity);

    SynthWorld w;
    for (int k = 0; k < spec.identities; ++k) w.centroids.push_back(random_unit(rng, spec.dimension));
    w.unit_noise.assign(total, std::vector<double>(dim));
    w.scores.resize(total);
    for (std::size_t i = 0; i < total; ++i) {
      for (auto& x : w.unit_noise[i]) x = normal(rng);
      w.scores[i] = score_dist(rng);
    }
    w.plane_u = random_unit(rng, spec.dimension);
    // Gram-Schmidt against u; redraw on (measure-zero) collinearity.
    for (;;) {
      auto v = random_unit(rng, spec.dimension);
      double dot = 0.0;
      for (std::size_t k = 0; k < dim; ++k) dot += v[k] * w.plane_u[k];
      double norm = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        v[k] -= dot * w.plane_u[k];
        norm += v[k] * v[k];
      }
      if (norm > 1e-12) {
        norm = std::sqrt(norm);
        for (auto& x : v) x /= norm;
        w.plane_v = std::move(v);
        break;
      }
    }
    w.translation_dir = random_unit(rng, spec.dimension);
    return w;
  }

  std::vector<double> rotate(const std::vector<double>& x, double angle) const {
    double xu = 0.0, xv = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      xu += x[k] * plane_u[k];
      xv += x[k] * plane_v[k];
    }
    const double c = std::cos(angle), s = std::sin(angle);
    const double nu = c * xu - s * xv;
    const double nv = s * xu + c * xv;
    std::vector<double> out = x;
    for (std::size_t k = 0; k < x.size(); ++k) {
      out[k] += (nu - xu) * plane_u[k] + (nv - xv) * plane_v[k];
    }
    return out;
  }

  /// Centroids after the domain shift.
  std::vector<std::vector<double>> shifted_centroids(const SynthSpec& spec) const {
    std::vector<std::vector<double>> out;
    out.reserve(centroids.size());
    for (const auto& c : centroids) {
      auto r = spec.shift_rotation_angle == 0.0 ? c : rotate(c, spec.shift_rotation_angle);
      for (std::size_t k = 0; k < r.size(); ++k) {
        r[k] += spec.shift_translation_norm * translation_dir[k];
      }
      out.push_back(std::move(r));
    }
    return out;
  }

  LabeledStore build(const SynthSpec& spec, const std::vector<std::vector<double>>& centers,
                     double sigma) const {
    const int K = spec.identities;
    std::vector<Detection> detections;
    IdentityLabels labels;
    for (int j = 0; j < spec.detections_per_identity; ++j) {
      for (int k = 0; k < K; ++k) {
        const auto i = static_cast<std::size_t>(j) * static_cast<std::size_t>(K) +
                       static_cast<std::size_t>(k);
        std::vector<double> e = centers[static_cast<std::size_t>(k)];
        for (std::size_t c = 0; c < e.size(); ++c) e[c] += sigma * unit_noise[i][c];
        const auto id = static_cast<DetectionId>(i);
        detections.push_back(Detection{id, j, scores[i], Embedding(std::move(e))});
        labels.emplace(id, k);
      }
    }
    return {DetectionStore::from_detections(std::move(detections)), std::move(labels)};
  }
};

}  // namespace detail

/// Identity centroids on the unit hypersphere, as drawn for `spec`.
inline std::vector<Embedding> source_centroids(const SynthSpec& spec) {
  const auto world = detail::SynthWorld::draw(spec);
  std::vector<Embedding> out;
  for (const auto& c : world.centroids) out.emplace_back(c);
  return out;
}

/// Centroids after rotation and translation.
inline std::vector<Embedding> target_centroids(const SynthSpec& spec) {
  const auto world = detail::SynthWorld::draw(spec);
  std::vector<Embedding> out;
  for (auto& c : world.shifted_centroids(spec)) out.emplace_back(std::move(c));
  return out;
}

/// Source-domain store. Frame j holds the j-th detection of every identity,
/// so all identities co-occur in every frame.
inline LabeledStore generate_source(const SynthSpec& spec) {
  const auto world = detail::SynthWorld::draw(spec);
  return world.build(spec, world.centroids, spec.intra_class_sigma);
}

/// Target-domain store for the same identities. `source_labels` must come
/// from generate_source(spec).
inline LabeledStore generate_target(const SynthSpec& spec, const IdentityLabels& source_labels) {
  const auto world = detail::SynthWorld::draw(spec);
  auto target = world.build(spec, world.shifted_centroids(spec), spec.noise_sigma);
  if (source_labels != target.labels) {
    throw ConfigError("generate_target: source labels do not match this synth spec");
  }
  return target;
}

}  // namespace ssdl
