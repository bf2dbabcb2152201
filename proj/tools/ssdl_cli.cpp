// ssdl: command-line driver for synthetic data generation, the full
// self-paced pipeline, evaluation, and the clustering / mining stages on
// their own.
//
// Exit codes: 0 success, 2 validation or I/O error, 3 degraded pipeline run.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ssdl/ssdl.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 2;
constexpr int kExitDegraded = 3;

struct Common {
  std::string out_dir;
  int threads = 1;
};

fs::path prepare_out_dir(const std::string& requested) {
  std::string dir = requested;
  if (dir.empty()) {
    const char* env = std::getenv("SSDL_OUT_DIR");
    dir = env && *env ? env : ".";
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ssdl::io::FormatError(dir, 0, "cannot create output directory");
  return fs::path(dir);
}

std::string out_path(const fs::path& dir, const std::string& name) { return (dir / name).string(); }

// ------------------------------------------------------------------- synth

struct SynthArgs {
  ssdl::SynthSpec spec;
};

int cmd_synth(const SynthArgs& args, const Common& common) {
  args.spec.validate();
  const auto source = ssdl::generate_source(args.spec);
  const auto target = ssdl::generate_target(args.spec, source.labels);
  const auto dir = prepare_out_dir(common.out_dir);
  ssdl::io::write_text(out_path(dir, "source.jsonl"), ssdl::io::store_to_jsonl(source.store));
  ssdl::io::write_text(out_path(dir, "target.jsonl"), ssdl::io::store_to_jsonl(target.store));
  ssdl::io::write_text(out_path(dir, "labels.json"), ssdl::io::labels_file(source.labels, target.labels));
  std::cout << "wrote " << source.store.size() << " source and " << target.store.size()
            << " target detections to " << dir.string() << "\n";
  return kExitOk;
}

// --------------------------------------------------------------------- run

struct RunArgs {
  std::string config;
  std::string embeddings;
  std::string source;
  std::string labels;
  std::optional<std::uint64_t> seed;
};

ssdl::io::RunConfig load_run_config(const std::string& path) {
  return path.empty() ? ssdl::io::RunConfig{} : ssdl::io::load_config(path);
}

int cmd_run(const RunArgs& args, const Common& common) {
  auto cfg = load_run_config(args.config);
  if (args.seed) cfg.ssdl.seed = *args.seed;
  cfg.ssdl.threads = common.threads;
  cfg.ssdl.validate();
  if (cfg.ssdl.iterations < 2) throw ssdl::ConfigError("run: iterations must be >= 2 (report has db and da stages)");

  ssdl::io::RunManifest manifest;
  ssdl::io::StageTimer timer(manifest);
  manifest.seed = cfg.ssdl.seed;
  manifest.config = ssdl::io::config_to_json(cfg);

  const auto target = timer.time("load", [&] { return ssdl::io::load_store(args.embeddings); });
  manifest.add_input(args.embeddings);
  const auto target_labels = ssdl::io::load_labels(args.labels, "target");
  manifest.add_input(args.labels);

  std::optional<ssdl::Calibration> calibration;
  double beta = 0.0;
  if (cfg.beta) {
    beta = *cfg.beta;
  } else {
    if (args.source.empty()) throw ssdl::ConfigError("run: --source is required unless the config sets beta");
    const auto source = ssdl::io::load_store(args.source);
    manifest.add_input(args.source);
    const auto source_labels = ssdl::io::load_labels(args.labels, "source");
    calibration = timer.time("calibrate", [&] {
      ssdl::Warnings warnings;
      const auto pairs = ssdl::make_verification_pairs(source_labels, cfg.calibration_pairs_per_class,
                                                       ssdl::iteration_seed(cfg.ssdl.seed, -2));
      auto c = ssdl::calibrate_beta(pairs, source, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      return c;
    });
    beta = calibration->beta;
  }

  const auto evaluator = ssdl::Evaluator::from_labels(target_labels, beta, cfg.eval_pairs_per_class,
                                                      ssdl::iteration_seed(cfg.ssdl.seed, -3));
  ssdl::PipelineAudit audit;
  const auto result = timer.time("pipeline", [&] {
    return ssdl::run_ssdl(target, cfg.ssdl, beta,
                          [&](const ssdl::DetectionStore& s) { return evaluator.snapshot(s); }, &audit);
  });

  const auto dir = prepare_out_dir(common.out_dir);
  timer.time("write", [&] {
    const auto report = ssdl::io::report_to_json(result, cfg, calibration ? &*calibration : nullptr);
    ssdl::io::write_text(out_path(dir, "report.json"), ssdl::io::dump(report));
    std::string csv = ssdl::io::metrics_csv_header();
    const char* stages[] = {"baseline", "post_db", "post_da"};
    for (std::size_t i = 0; i < result.metrics.size(); ++i) {
      csv += ssdl::io::metrics_csv_row(i < 3 ? stages[i] : "post_iteration_" + std::to_string(i - 1),
                                       result.metrics[i]);
    }
    ssdl::io::write_text(out_path(dir, "metrics.csv"), csv);
    ssdl::io::write_text(out_path(dir, "adapter.json"), ssdl::io::adapter_to_json(result.adapter));
    ssdl::io::write_text(out_path(dir, "eval_pairs.jsonl"), ssdl::io::pairs_to_jsonl(evaluator.pairs()));
    std::string triplets;
    for (const auto& b : audit.batches) triplets += ssdl::io::triplets_to_jsonl(b.batch, b.iteration);
    ssdl::io::write_text(out_path(dir, "triplets.jsonl"), triplets);
    for (std::size_t i = 0; i < result.iterations.size(); ++i) {
      const std::string name = i == 0 ? "clusters_db.json" : i == 1 ? "clusters_da.json"
                                                                    : "clusters_it" + std::to_string(i) + ".json";
      ssdl::io::write_text(out_path(dir, name),
                           ssdl::io::dump(ssdl::io::clusters_to_json(result.iterations[i].salient)));
      manifest.artifacts["clusters_" + std::to_string(i)] = out_path(dir, name);
    }
    return 0;
  });
  for (const char* name : {"report.json", "metrics.csv", "adapter.json", "eval_pairs.jsonl", "triplets.jsonl"}) {
    manifest.artifacts[name] = out_path(dir, name);
  }
  ssdl::io::write_text(out_path(dir, "manifest.json"), ssdl::io::dump(manifest.to_json()));

  const auto& m = result.metrics;
  std::cout << "beta " << beta << "\n";
  std::cout << "verification accuracy: baseline " << m[0].verification_accuracy << ", post-DB "
            << m[1].verification_accuracy << ", post-DA " << m[2].verification_accuracy << "\n";
  for (const auto& d : result.diagnostics) std::cerr << "degraded: " << d << "\n";
  return result.degraded ? kExitDegraded : kExitOk;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string adapter;
  std::string embeddings;
  std::string pairs;
  std::string labels;
  std::string report;
  std::optional<double> beta;
};

int cmd_eval(const EvalArgs& args, const Common& common) {
  const auto adapter = ssdl::io::load_adapter(args.adapter);
  const auto store = ssdl::io::load_store(args.embeddings);
  if (adapter.dim() != store.dim()) {
    throw ssdl::ConfigError("eval: adapter dimension " + std::to_string(adapter.dim()) +
                            " does not match embedding dimension " + std::to_string(store.dim()));
  }
  const auto pairs = ssdl::io::load_pairs(args.pairs);
  for (const auto& p : pairs) {
    if (!store.contains(p.a) || !store.contains(p.b)) {
      throw ssdl::ConfigError("eval: pair references unknown detection id");
    }
  }
  double beta = 0.0;
  if (args.beta) {
    beta = *args.beta;
  } else if (!args.report.empty()) {
    try {
      beta = json::parse(ssdl::io::read_text(args.report)).at("beta").get<double>();
    } catch (const json::exception& e) {
      throw ssdl::io::FormatError(args.report, 0, std::string("cannot read beta: ") + e.what());
    }
  } else {
    throw ssdl::ConfigError("eval: pass --beta or --report");
  }

  const auto embedded = adapter.apply(store);
  std::vector<bool> same;
  for (const auto& p : pairs) same.push_back(p.same);
  const auto distances = ssdl::pair_distances(pairs, embedded);
  ssdl::Warnings warnings;
  ssdl::MetricSnapshot snap;
  snap.verification_accuracy = ssdl::accuracy_at(distances, same, beta);
  snap.tar = ssdl::tar_at_far(distances, same, snap.far_targets, &warnings).tar;

  std::string csv = ssdl::io::metrics_csv_header();
  if (!args.labels.empty()) {
    const auto [gallery, probes] = ssdl::make_identification_sets(ssdl::io::load_labels(args.labels, "target"));
    snap.rank1 = ssdl::rank1_identification(probes, gallery, embedded, &warnings);
    csv += ssdl::io::metrics_csv_row("eval", snap);
  } else {
    // No identities available: leave rank-1 empty.
    std::vector<std::string> row{"eval", ssdl::io::csv_number(snap.verification_accuracy)};
    for (const double t : snap.tar) row.push_back(ssdl::io::csv_number(t));
    row.emplace_back();
    csv += ssdl::io::csv_row(row);
  }
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  const auto dir = prepare_out_dir(common.out_dir);
  ssdl::io::write_text(out_path(dir, "eval_metrics.csv"), csv);
  ssdl::io::write_text(out_path(dir, "roc.csv"), ssdl::io::roc_csv(ssdl::roc_table(distances, same)));
  std::cout << "verification accuracy " << snap.verification_accuracy << " at beta " << beta << "\n";
  return kExitOk;
}

// ------------------------------------------------------------ cluster/mine

struct StageArgs {
  std::string config;
  std::string embeddings;
  std::string clusters;
  std::string stage = "db";
  std::optional<double> beta;
  int epoch = 0;
};

ssdl::MarginSet stage_margins(const StageArgs& args, const ssdl::io::RunConfig& cfg) {
  const std::optional<double> beta = args.beta ? args.beta : cfg.beta;
  if (!beta) throw ssdl::ConfigError("pass --beta or set beta in the config");
  if (args.stage != "db" && args.stage != "da") throw ssdl::ConfigError("--stage must be db or da");
  auto m = (args.stage == "db" ? cfg.ssdl.db_margins : cfg.ssdl.da_margins).with_beta(*beta);
  m.validate();
  return m;
}

int cmd_cluster(const StageArgs& args, const Common& common) {
  const auto cfg = load_run_config(args.config);
  const auto margins = stage_margins(args, cfg);
  const auto store = ssdl::io::load_store(args.embeddings);
  const auto clusters = ssdl::confident_cluster(store, margins);
  const auto salient = ssdl::filter_salient(clusters, cfg.ssdl.min_cluster_size);
  json j = ssdl::io::clusters_to_json(clusters);
  j["salient"] = ssdl::io::clusters_to_json(salient)["clusters"];
  j["margins"] = {{"alpha", margins.alpha}, {"gamma", margins.gamma}, {"beta", margins.beta}};
  j["min_cluster_size"] = cfg.ssdl.min_cluster_size;
  const auto dir = prepare_out_dir(common.out_dir);
  ssdl::io::write_text(out_path(dir, "clusters.json"), ssdl::io::dump(j));
  std::cout << clusters.size() << " clusters, " << salient.size() << " salient\n";
  return salient.empty() ? kExitDegraded : kExitOk;
}

int cmd_mine(const StageArgs& args, const Common& common) {
  auto cfg = load_run_config(args.config);
  cfg.ssdl.threads = common.threads;
  const auto margins = stage_margins(args, cfg);
  const auto store = ssdl::io::load_store(args.embeddings);
  json cj;
  try {
    cj = json::parse(ssdl::io::read_text(args.clusters));
  } catch (const json::exception& e) {
    throw ssdl::io::FormatError(args.clusters, 0, std::string("malformed JSON: ") + e.what());
  }
  const auto clusters = ssdl::io::clusters_from_json(cj, args.clusters, cj.contains("salient") ? "salient" : "clusters");
  for (const auto& [id, label] : clusters.assignment) {
    if (!store.contains(id)) throw ssdl::ConfigError("mine: cluster member " + std::to_string(id) + " not in store");
  }
  const auto batch = ssdl::mine_triplets(store, clusters, margins, args.epoch,
                                         ssdl::MiningOptions::from_config(cfg.ssdl));
  const auto dir = prepare_out_dir(common.out_dir);
  ssdl::io::write_text(out_path(dir, "triplets.jsonl"), ssdl::io::triplets_to_jsonl(batch));
  std::cout << batch.size() << " triplets at epoch " << args.epoch << "\n";
  return batch.empty() ? kExitDegraded : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised domain learning over embedding files"};
  app.require_subcommand(1);
  Common common;

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate seeded source/target embeddings");
  synth_cmd->add_option("--identities", synth.spec.identities, "Number of identities (>= 2)");
  synth_cmd->add_option("--per", synth.spec.detections_per_identity, "Detections per identity");
  synth_cmd->add_option("--dim", synth.spec.dimension, "Embedding dimension");
  synth_cmd->add_option("--sigma", synth.spec.intra_class_sigma, "Source intra-class noise");
  synth_cmd->add_option("--noise", synth.spec.noise_sigma, "Target per-detection noise");
  synth_cmd->add_option("--rotation", synth.spec.shift_rotation_angle, "Target rotation angle (radians)");
  synth_cmd->add_option("--translation", synth.spec.shift_translation_norm, "Target translation norm");
  synth_cmd->add_option("--seed", synth.spec.seed, "Random seed");

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Calibrate beta and run the self-paced cycle");
  run_cmd->add_option("--config", run.config, "key=value config file");
  run_cmd->add_option("--embeddings", run.embeddings, "Target embeddings (JSONL)")->required();
  run_cmd->add_option("--source", run.source, "Source embeddings (JSONL) for calibration");
  run_cmd->add_option("--labels", run.labels, "labels.json with source and target labels")->required();
  run_cmd->add_option("--seed", run.seed, "Override the config seed");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Apply an adapter and score labelled pairs");
  eval_cmd->add_option("--adapter", eval.adapter, "Adapter file")->required();
  eval_cmd->add_option("--embeddings", eval.embeddings, "Embeddings (JSONL)")->required();
  eval_cmd->add_option("--pairs", eval.pairs, "Labelled pairs (JSONL)")->required();
  eval_cmd->add_option("--beta", eval.beta, "Verification threshold");
  eval_cmd->add_option("--report", eval.report, "Take beta from this report.json");
  eval_cmd->add_option("--labels", eval.labels, "labels.json; enables rank-1 identification");

  StageArgs cluster;
  auto* cluster_cmd = app.add_subcommand("cluster", "Run confident clustering only");
  cluster_cmd->add_option("--config", cluster.config, "key=value config file");
  cluster_cmd->add_option("--embeddings", cluster.embeddings, "Embeddings (JSONL)")->required();
  cluster_cmd->add_option("--beta", cluster.beta, "Verification threshold");
  cluster_cmd->add_option("--stage", cluster.stage, "Margins to use: db or da");

  StageArgs mine;
  auto* mine_cmd = app.add_subcommand("mine", "Mine triplets for one epoch only");
  mine_cmd->add_option("--config", mine.config, "key=value config file");
  mine_cmd->add_option("--embeddings", mine.embeddings, "Embeddings (JSONL)")->required();
  mine_cmd->add_option("--clusters", mine.clusters, "clusters.json from the cluster command")->required();
  mine_cmd->add_option("--beta", mine.beta, "Verification threshold");
  mine_cmd->add_option("--stage", mine.stage, "Margins to use: db or da");
  mine_cmd->add_option("--epoch", mine.epoch, "Epoch index (>= 0)");

  for (auto* sub : {synth_cmd, run_cmd, eval_cmd, cluster_cmd, mine_cmd}) {
    sub->add_option("--out-dir", common.out_dir, "Output directory (default: $SSDL_OUT_DIR or .)");
    sub->add_option("--threads", common.threads, "Worker threads; results do not depend on it")
        ->check(CLI::Range(1, 1024));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalid;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth, common);
    if (*run_cmd) return cmd_run(run, common);
    if (*eval_cmd) return cmd_eval(eval, common);
    if (*cluster_cmd) return cmd_cluster(cluster, common);
    if (*mine_cmd) return cmd_mine(mine, common);
  } catch (const ssdl::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const ssdl::TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  return kExitInvalid;
}
