#include <gtest/gtest.h>

#include "test_util.hpp"

namespace {

ssdl::LabeledStore shifted_target(std::uint64_t seed) {
  ssdl::SynthSpec spec;
  spec.identities = 6;
  spec.detections_per_identity = 20;
  spec.dimension = 8;
  spec.intra_class_sigma = 0.2;
  spec.noise_sigma = 0.12;
  spec.shift_translation_norm = 1.0;
  spec.shift_rotation_angle = 0.3;
  spec.seed = seed;
  const auto src = ssdl::generate_source(spec);
  return ssdl::generate_target(spec, src.labels);
}

ssdl::SsdlConfig wide_config() {
  ssdl::SsdlConfig cfg;
  cfg.db_margins = {0.5, 0.05};
  cfg.da_margins = {0.3, 0.02};
  cfg.learning_rate = 3.0;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST(Pipeline, RecordsBothIterationsAndMetrics) {
  const auto tgt = shifted_target(1);
  const auto ev = ssdl::Evaluator::from_labels(tgt.labels, 1.2, 300, 2);
  const auto r = ssdl::run_ssdl(tgt.store, wide_config(), 1.2, [&](const auto& s) { return ev.snapshot(s); });
  ASSERT_EQ(r.iterations.size(), 2u);
  ASSERT_EQ(r.metrics.size(), 3u);
  EXPECT_EQ(r.db().margins.alpha, 0.5);
  EXPECT_EQ(r.da().margins.gamma, 0.02);
  EXPECT_EQ(r.db().margins.beta, 1.2);
  EXPECT_EQ(r.db().triplet_counts.size(), 5u);
  EXPECT_FALSE(r.degraded);
  EXPECT_EQ(r.baseline(), ev.snapshot(tgt.store));
  EXPECT_EQ(r.post_da(), ev.snapshot(r.adapter.apply(tgt.store)));
}

TEST(Pipeline, Deterministic) {
  const auto tgt = shifted_target(2);
  auto cfg = wide_config();
  const auto a = ssdl::run_ssdl(tgt.store, cfg, 1.2);
  const auto b = ssdl::run_ssdl(tgt.store, cfg, 1.2);
  EXPECT_EQ(a.adapter, b.adapter);
  cfg.threads = 7;
  EXPECT_EQ(ssdl::run_ssdl(tgt.store, cfg, 1.2).adapter, a.adapter);
}

TEST(Pipeline, SecondIterationClustersAdaptedEmbeddings) {
  const auto tgt = shifted_target(3);
  auto cfg = wide_config();
  const auto two = ssdl::run_ssdl(tgt.store, cfg, 1.2);
  cfg.iterations = 1;
  const auto one = ssdl::run_ssdl(tgt.store, cfg, 1.2);
  const auto expected = ssdl::confident_cluster(one.adapter.apply(tgt.store), two.da().margins);
  EXPECT_EQ(two.da().cluster_count, expected.size());
  const auto salient = ssdl::filter_salient(expected, cfg.min_cluster_size);
  EXPECT_EQ(two.da().salient.assignment, salient.assignment);
}

TEST(Pipeline, AuditHoldsBandAndRadius) {
  const auto tgt = shifted_target(4);
  ssdl::PipelineAudit audit;
  const auto r = ssdl::run_ssdl(tgt.store, wide_config(), 1.2, {}, &audit);
  ASSERT_EQ(audit.absorptions.size(), 2u);
  ASSERT_FALSE(audit.batches.empty());
  for (const auto& a : audit.absorptions) {
    const double radius = ssdl::cluster_radius(r.iterations[static_cast<std::size_t>(a.iteration)].margins);
    for (const auto& e : a.events) EXPECT_LT(e.sq_distance, radius);
  }
  for (const auto& b : audit.batches) {
    const auto& m = b.batch.margins;
    for (const auto& t : b.batch.triplets) {
      EXPECT_GT(t.d_an, t.d_ap + m.gamma);
      EXPECT_LE(t.d_an, t.d_ap + m.alpha);
    }
  }
}

TEST(Pipeline, NoSalientClustersDegrades) {
  const auto tgt = shifted_target(5);
  auto cfg = wide_config();
  cfg.min_cluster_size = 1000;
  const auto r = ssdl::run_ssdl(tgt.store, cfg, 1.2);
  EXPECT_TRUE(r.degraded);
  EXPECT_EQ(r.diagnostics.size(), 2u);
  EXPECT_TRUE(r.db().skipped);
  EXPECT_EQ(r.db().train.epoch_mean_loss.size(), 5u);
  EXPECT_EQ(r.adapter, ssdl::Adapter::identity(8));
}

TEST(Pipeline, DefaultMarginsLeaveAdapterAtIdentity) {
  // alpha = 2 gamma in both default margin sets, so every mined triplet is
  // on the floor and no step moves the weights.
  const auto tgt = shifted_target(6);
  ssdl::SsdlConfig cfg;
  const auto r = ssdl::run_ssdl(tgt.store, cfg, 1.2);
  EXPECT_EQ(r.adapter, ssdl::Adapter::identity(8));
  for (const auto& it : r.iterations)
    for (double f : it.train.active_fraction) EXPECT_EQ(f, 0.0);
}

TEST(Pipeline, MarginScheduleBeyondTwoIterations) {
  auto cfg = wide_config();
  cfg.iterations = 3;
  const auto m = cfg.margins_for_iteration(2, 1.2);
  EXPECT_DOUBLE_EQ(m.alpha, 0.15);
  EXPECT_DOUBLE_EQ(m.gamma, 0.01);
  const auto r = ssdl::run_ssdl(shifted_target(7).store, cfg, 1.2);
  EXPECT_EQ(r.iterations.size(), 3u);
}

TEST(Pipeline, RejectsInvalidInputs) {
  const auto tgt = shifted_target(8);
  auto cfg = wide_config();
  EXPECT_THROW(ssdl::run_ssdl(tgt.store, cfg, 0.05), ssdl::ConfigError);  // radius <= 0
  cfg.db_margins.gamma = 0.6;
  EXPECT_THROW(ssdl::run_ssdl(tgt.store, cfg, 1.2), ssdl::ConfigError);
  EXPECT_THROW(ssdl::run_ssdl(ssdl::DetectionStore(), wide_config(), 1.2), ssdl::ConfigError);
}

TEST(IterationSeed, DistinctPerIteration) {
  EXPECT_NE(ssdl::iteration_seed(1, 0), ssdl::iteration_seed(1, 1));
  EXPECT_NE(ssdl::iteration_seed(1, 0), ssdl::iteration_seed(2, 0));
  EXPECT_EQ(ssdl::iteration_seed(3, 1), ssdl::iteration_seed(3, 1));
}
