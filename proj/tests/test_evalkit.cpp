#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "test_util.hpp"

namespace {

ssdl::DetectionStore line_store(const std::vector<double>& xs, const std::vector<double>& scores = {}) {
  std::vector<ssdl::Detection> dets;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    dets.push_back({static_cast<ssdl::DetectionId>(i), 0, scores.empty() ? 1.0 : scores[i], ssdl::Embedding{xs[i]}});
  }
  return ssdl::DetectionStore::from_detections(dets);
}

}  // namespace

TEST(Verification, AccuracyExamples) {
  EXPECT_DOUBLE_EQ(ssdl::accuracy_at({0.1, 0.9}, {true, false}, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(ssdl::accuracy_at({0.1, 0.9}, {false, true}, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(ssdl::accuracy_at({0.5}, {true}, 0.5), 0.0);  // accept only below beta
  EXPECT_THROW(ssdl::accuracy_at({}, {}, 0.5), ssdl::ConfigError);
}

TEST(Verification, MatchesOracleOnRandomPairs) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 3);
  std::bernoulli_distribution coin(0.5);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> d(100);
    std::vector<bool> s(100);
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] = u(rng);
      s[i] = coin(rng);
    }
    const double beta = u(rng);
    EXPECT_DOUBLE_EQ(ssdl::accuracy_at(d, s, beta), oracle::accuracy(d, s, beta));
  }
}

TEST(Calibration, SeparableExample) {
  const auto c = ssdl::calibrate_threshold({0.1, 0.2, 0.9, 1.0}, {true, true, false, false});
  EXPECT_DOUBLE_EQ(c.beta, 0.55);
  EXPECT_DOUBLE_EQ(c.accuracy, 1.0);
  EXPECT_EQ(c.tied_candidates, 1u);
}

TEST(Calibration, TiesPreferWidestGap) {
  // Accuracy 0.75 at both 0.15 (gap 0.1) and 0.65 (gap 0.5).
  const auto c = ssdl::calibrate_threshold({0.1, 0.2, 0.4, 0.9}, {true, false, true, false});
  EXPECT_DOUBLE_EQ(c.accuracy, 0.75);
  EXPECT_DOUBLE_EQ(c.beta, 0.65);
  EXPECT_EQ(c.tied_candidates, 2u);
}

TEST(Calibration, DegenerateAndInvalidInputs) {
  ssdl::Warnings w;
  const auto c = ssdl::calibrate_threshold({0.4, 0.4}, {true, false}, &w);
  EXPECT_TRUE(c.degenerate);
  EXPECT_GT(c.beta, 0.4);
  EXPECT_DOUBLE_EQ(c.accuracy, 0.5);
  EXPECT_EQ(w.size(), 1u);
  EXPECT_THROW(ssdl::calibrate_threshold({0.1, 0.2}, {true, true}), ssdl::ConfigError);
}

TEST(Calibration, OptimalOverEveryThreshold) {
  std::mt19937_64 rng(44);
  std::normal_distribution<double> pos(0.6, 0.3), neg(1.4, 0.3);
  std::bernoulli_distribution coin(0.5);
  for (int t = 0; t < 40; ++t) {
    std::vector<double> d;
    std::vector<bool> s;
    for (int i = 0; i < 60; ++i) {
      const bool same = coin(rng);
      d.push_back(std::abs(same ? pos(rng) : neg(rng)));
      s.push_back(same);
    }
    if (std::count(s.begin(), s.end(), true) == 0 || std::count(s.begin(), s.end(), false) == 0) continue;
    const auto c = ssdl::calibrate_threshold(d, s);
    // Every achievable accept set is "distance < d_i" or "accept all".
    double best = oracle::accuracy(d, s, *std::max_element(d.begin(), d.end()) + 1);
    for (double x : d) best = std::max(best, oracle::accuracy(d, s, x));
    EXPECT_DOUBLE_EQ(c.accuracy, best);
    EXPECT_DOUBLE_EQ(oracle::accuracy(d, s, c.beta), best);
  }
}

TEST(Calibration, TupleOverload) {
  const std::vector<std::tuple<ssdl::Embedding, ssdl::Embedding, bool>> pairs{
      {ssdl::Embedding{0.0}, ssdl::Embedding{0.1}, true}, {ssdl::Embedding{0.0}, ssdl::Embedding{1.0}, false}};
  EXPECT_NEAR(ssdl::calibrate_beta(pairs).beta, 0.505, 1e-12);
}

TEST(TarAtFar, StepConvention) {
  // Ten negatives at 1..10, positives at 0.5, 1.5, 2.5, 3.5.
  std::vector<double> d{0.5, 1.5, 2.5, 3.5};
  std::vector<bool> s(4, true);
  for (int i = 1; i <= 10; ++i) {
    d.push_back(i);
    s.push_back(false);
  }
  ssdl::Warnings w;
  const auto r = ssdl::tar_at_far(d, s, {0.001, 0.1, 0.25, 1.0}, &w);
  EXPECT_DOUBLE_EQ(r.tar[0], 0.25);  // threshold 1
  EXPECT_TRUE(r.resolution_limited[0]);
  EXPECT_EQ(w.size(), 1u);
  EXPECT_DOUBLE_EQ(r.threshold[1], 2.0);
  EXPECT_DOUBLE_EQ(r.achieved_far[1], 0.1);
  EXPECT_DOUBLE_EQ(r.tar[1], 0.5);
  EXPECT_DOUBLE_EQ(r.threshold[2], 3.0);  // floor(2.5) = 2 allowed
  EXPECT_DOUBLE_EQ(r.tar[2], 0.75);
  EXPECT_DOUBLE_EQ(r.tar[3], 1.0);
  for (std::size_t i = 0; i < r.tar.size(); ++i) EXPECT_LE(r.achieved_far[i], r.far_targets[i] + 1e-12);
}

TEST(TarAtFar, MonotoneInTarget) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 2);
  std::vector<double> d;
  std::vector<bool> s;
  for (int i = 0; i < 300; ++i) {
    d.push_back(u(rng));
    s.push_back(i % 3 == 0);
  }
  std::vector<double> targets;
  for (int i = 0; i <= 50; ++i) targets.push_back(i / 50.0);
  const auto r = ssdl::tar_at_far(d, s, targets);
  for (std::size_t i = 1; i < r.tar.size(); ++i) EXPECT_GE(r.tar[i], r.tar[i - 1]);
  EXPECT_THROW(ssdl::tar_at_far({0.1}, {true}, targets), ssdl::ConfigError);
}

TEST(Roc, CumulativeRows) {
  const auto rows = ssdl::roc_table({0.3, 0.1, 0.3, 0.9}, {true, true, false, false});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_DOUBLE_EQ(rows[0].tar, 0.5);
  EXPECT_DOUBLE_EQ(rows[1].threshold, 0.3);
  EXPECT_DOUBLE_EQ(rows[1].tar, 1.0);
  EXPECT_DOUBLE_EQ(rows[1].far, 0.5);
  EXPECT_DOUBLE_EQ(rows[2].far, 1.0);
}

TEST(Aggregate, ScoreWeightedMean) {
  const auto store = line_store({0.0, 3.0}, {0.25, 0.75});
  EXPECT_DOUBLE_EQ(ssdl::aggregate_set({0, {0, 1}}, store)[0], 2.25);
  const auto zero = line_store({0.0, 3.0}, {0.0, 0.0});
  ssdl::Warnings w;
  EXPECT_DOUBLE_EQ(ssdl::aggregate_set({0, {0, 1}}, zero, &w)[0], 1.5);
  EXPECT_EQ(w.size(), 1u);
  EXPECT_THROW(ssdl::aggregate_set({0, {}}, store), ssdl::ConfigError);
}

TEST(Rank1, NearestGalleryWins) {
  const auto store = line_store({0.0, 0.1, 5.0, 5.1, 0.2, 4.0});
  const std::vector<ssdl::FaceSet> gallery{{7, {0, 1}}, {8, {2, 3}}};
  EXPECT_DOUBLE_EQ(ssdl::rank1_identification({{7, {4}}, {8, {5}}}, gallery, store), 1.0);
  EXPECT_DOUBLE_EQ(ssdl::rank1_identification({{8, {4}}, {8, {5}}}, gallery, store), 0.5);
  EXPECT_THROW(ssdl::rank1_identification({{7, {4}}}, {{7, {0}}, {7, {1}}}, store), ssdl::ConfigError);
}

TEST(Pairs, BalancedSeededAndUnique) {
  std::map<ssdl::DetectionId, int> labels;
  for (int i = 0; i < 60; ++i) labels[i] = i % 4;
  const auto a = ssdl::make_verification_pairs(labels, 100, 3);
  EXPECT_EQ(a, ssdl::make_verification_pairs(labels, 100, 3));
  EXPECT_NE(a, ssdl::make_verification_pairs(labels, 100, 4));
  EXPECT_EQ(std::count_if(a.begin(), a.end(), [](const auto& p) { return p.same; }), 100);
  std::set<std::pair<ssdl::DetectionId, ssdl::DetectionId>> seen;
  for (const auto& p : a) {
    EXPECT_EQ(p.same, labels[p.a] == labels[p.b]);
    EXPECT_TRUE(seen.insert({p.a, p.b}).second);
  }
  EXPECT_THROW(ssdl::make_verification_pairs({{0, 1}, {1, 1}}, 5, 0), ssdl::ConfigError);
}

TEST(IdentificationSets, HalfSplit) {
  const auto [gallery, probes] = ssdl::make_identification_sets({{0, 0}, {1, 0}, {2, 0}, {3, 1}, {4, 1}, {5, 2}});
  ASSERT_EQ(gallery.size(), 2u);
  EXPECT_EQ(gallery[0].members, (std::vector<ssdl::DetectionId>{0}));
  EXPECT_EQ(probes[0].members, (std::vector<ssdl::DetectionId>{1, 2}));
  EXPECT_EQ(probes[1].members, (std::vector<ssdl::DetectionId>{4}));
}

TEST(Evaluator, SnapshotInvariantUnderIsometry) {
  ssdl::SynthSpec spec;
  spec.identities = 4;
  spec.detections_per_identity = 10;
  spec.dimension = 6;
  spec.intra_class_sigma = 0.2;
  spec.seed = 4;
  const auto src = ssdl::generate_source(spec);
  const auto ev = ssdl::Evaluator::from_labels(src.labels, 1.0, 200, 1);
  const auto base = ev.snapshot(src.store);
  EXPECT_EQ(base.tar.size(), 3u);
  const auto shifted = src.store.transformed([](const ssdl::Embedding& e) {
    ssdl::Embedding o = e;
    for (std::size_t k = 0; k < o.dim(); ++k) o[k] += 0.5;
    return o;
  });
  const auto moved = ev.snapshot(shifted);
  EXPECT_NEAR(moved.verification_accuracy, base.verification_accuracy, 0.01);
  EXPECT_NEAR(moved.rank1, base.rank1, 1e-12);
}
