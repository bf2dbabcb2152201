#pragma once

// File formats: JSONL embeddings and pairs, label files, key=value run
// configuration, adapter matrices, cluster/triplet audit files, the JSON
// run report and RFC-4180 CSV metrics.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssdl/adapter.hpp"
#include "ssdl/cluster.hpp"
#include "ssdl/core.hpp"
#include "ssdl/evalkit.hpp"
#include "ssdl/pipeline.hpp"
#include "ssdl/synth.hpp"
#include "ssdl/triplets.hpp"

namespace ssdl::io {

using nlohmann::json;

/// Unreadable, unwritable or malformed file. `line` is 1-based, 0 when the
/// error is not tied to a line.
class FormatError : public ConfigError {
 public:
  FormatError(const std::string& path, std::size_t line, const std::string& what)
      : ConfigError(path + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path, 0, "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path, 0, "cannot open for writing");
  out << text;
  if (!out) throw FormatError(path, 0, "write failed");
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------- embeddings

inline json detection_to_json(const Detection& d) {
  return json{{"id", d.id}, {"frame", d.frame}, {"score", d.score}, {"vec", d.embedding.vec()}};
}

inline std::string store_to_jsonl(const DetectionStore& store) {
  std::string out;
  for (std::size_t i = 0; i < store.size(); ++i) out += detection_to_json(store.at(i)).dump() + "\n";
  return out;
}

/// One {"id", "frame", "score", "vec"} object per non-blank line.
inline DetectionStore store_from_jsonl(const std::string& text, const std::string& origin = "<jsonl>") {
  std::vector<Detection> detections;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw FormatError(origin, lineno, "expected a JSON object");
      for (const char* key : {"id", "frame", "score", "vec"}) {
        if (!j.contains(key)) throw FormatError(origin, lineno, std::string("missing key \"") + key + "\"");
      }
      if (!j["id"].is_number_integer() || !j["frame"].is_number_integer()) {
        throw FormatError(origin, lineno, "id and frame must be integers");
      }
      if (!j["score"].is_number() || !j["vec"].is_array()) {
        throw FormatError(origin, lineno, "score must be a number and vec an array");
      }
      std::vector<double> vec;
      for (const auto& x : j["vec"]) {
        if (!x.is_number()) throw FormatError(origin, lineno, "vec entries must be numbers");
        vec.push_back(x.get<double>());
      }
      Detection d{j["id"].get<DetectionId>(), j["frame"].get<std::int64_t>(), j["score"].get<double>(),
                  Embedding(std::move(vec))};
      if (d.frame < 0) throw FormatError(origin, lineno, "negative frame index");
      if (!std::isfinite(d.score) || d.score < 0.0 || d.score > 1.0) {
        throw FormatError(origin, lineno, "score outside [0,1]");
      }
      if (!d.embedding.all_finite()) throw FormatError(origin, lineno, "non-finite vec entry");
      if (!detections.empty() && d.embedding.dim() != detections.front().embedding.dim()) {
        throw FormatError(origin, lineno, "vec dimension differs from the first line");
      }
      detections.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw FormatError(origin, lineno, std::string("malformed JSON: ") + e.what());
    }
  }
  if (detections.empty()) throw FormatError(origin, 0, "no detections");
  try {
    return DetectionStore::from_detections(std::move(detections));
  } catch (const FormatError&) {
    throw;
  } catch (const ConfigError& e) {
    throw FormatError(origin, 0, e.what());
  }
}

inline DetectionStore load_store(const std::string& path) { return store_from_jsonl(read_text(path), path); }

// -------------------------------------------------------------------- labels

inline json labels_to_json(const IdentityLabels& labels) {
  json arr = json::array();
  for (const auto& [id, l] : labels) arr.push_back(json::array({id, l}));
  return arr;
}

inline IdentityLabels labels_from_json(const json& j, const std::string& origin) {
  if (!j.is_array()) throw FormatError(origin, 0, "labels must be an array of [id, label]");
  IdentityLabels out;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer()) {
      throw FormatError(origin, 0, "labels must be an array of [id, label]");
    }
    if (!out.emplace(e[0].get<DetectionId>(), e[1].get<int>()).second) {
      throw FormatError(origin, 0, "duplicate label for id " + e[0].dump());
    }
  }
  return out;
}

/// labels.json: {"source": [[id, label], ...], "target": [[id, label], ...]}.
inline std::string labels_file(const IdentityLabels& source, const IdentityLabels& target) {
  return dump(json{{"source", labels_to_json(source)}, {"target", labels_to_json(target)}});
}

/// Reads one domain ("source" or "target") from a labels.json file.
inline IdentityLabels load_labels(const std::string& path, const std::string& domain) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw FormatError(path, 0, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains(domain)) throw FormatError(path, 0, "missing \"" + domain + "\" labels");
  return labels_from_json(j[domain], path);
}

// --------------------------------------------------------------------- pairs

inline std::string pairs_to_jsonl(const std::vector<LabeledPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) out += json{{"a", p.a}, {"b", p.b}, {"same", p.same}}.dump() + "\n";
  return out;
}

/// One {"a": id, "b": id, "same": bool} object per non-blank line.
inline std::vector<LabeledPair> pairs_from_jsonl(const std::string& text, const std::string& origin) {
  std::vector<LabeledPair> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (!j.is_object() || !j.contains("a") || !j.contains("b") || !j.contains("same") ||
          !j["a"].is_number_integer() || !j["b"].is_number_integer() || !j["same"].is_boolean()) {
        throw FormatError(origin, lineno, "expected {\"a\": int, \"b\": int, \"same\": bool}");
      }
      out.push_back({j["a"].get<DetectionId>(), j["b"].get<DetectionId>(), j["same"].get<bool>()});
    } catch (const json::exception& e) {
      throw FormatError(origin, lineno, std::string("malformed JSON: ") + e.what());
    }
  }
  if (out.empty()) throw FormatError(origin, 0, "no pairs");
  return out;
}

inline std::vector<LabeledPair> load_pairs(const std::string& path) {
  return pairs_from_jsonl(read_text(path), path);
}

// -------------------------------------------------------------------- config

/// Settings for a full run: the pipeline config plus evaluation sizes and
/// an optional fixed beta that bypasses calibration.
struct RunConfig {
  SsdlConfig ssdl;
  std::optional<double> beta;
  std::size_t calibration_pairs_per_class = 2000;
  std::size_t eval_pairs_per_class = 2000;
};

inline const char* to_string(NegativePool p) {
  return p == NegativePool::kOtherLabel ? "other_label" : "all_but_anchor";
}
inline const char* to_string(EpochOverflow o) { return o == EpochOverflow::kClamp ? "clamp" : "skip"; }

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_real(const std::string& v, const std::string& origin, std::size_t line) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(out)) {
    throw FormatError(origin, line, "expected a finite number, got \"" + v + "\"");
  }
  return out;
}

inline long long parse_int(const std::string& v, const std::string& origin, std::size_t line) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw FormatError(origin, line, "expected an integer, got \"" + v + "\"");
  return out;
}

inline bool parse_bool(const std::string& v, const std::string& origin, std::size_t line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw FormatError(origin, line, "expected true or false, got \"" + v + "\"");
}

}  // namespace detail

/// Flat `key = value` text; `#` starts a comment. Unknown keys and repeated
/// keys are errors. Missing keys keep their defaults.
inline RunConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
  RunConfig cfg;
  SsdlConfig& s = cfg.ssdl;
  std::map<std::string, std::size_t> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(origin, lineno, "expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!seen.emplace(key, lineno).second) throw FormatError(origin, lineno, "duplicate key \"" + key + "\"");
    const auto real = [&] { return detail::parse_real(value, origin, lineno); };
    const auto integer = [&] { return detail::parse_int(value, origin, lineno); };

    if (key == "db_alpha") s.db_margins.alpha = real();
    else if (key == "db_gamma") s.db_margins.gamma = real();
    else if (key == "da_alpha") s.da_margins.alpha = real();
    else if (key == "da_gamma") s.da_margins.gamma = real();
    else if (key == "beta") cfg.beta = real();
    else if (key == "min_cluster_size") s.min_cluster_size = static_cast<int>(integer());
    else if (key == "epochs_per_iteration") s.epochs_per_iteration = static_cast<int>(integer());
    else if (key == "learning_rate") s.learning_rate = real();
    else if (key == "lr_factor") s.lr_factor = real();
    else if (key == "seed") {
      const auto v = integer();
      if (v < 0) throw FormatError(origin, lineno, "seed must be >= 0");
      s.seed = static_cast<std::uint64_t>(v);
    } else if (key == "iterations") s.iterations = static_cast<int>(integer());
    else if (key == "margin_decay") s.margin_decay = real();
    else if (key == "steps_per_epoch") s.steps_per_epoch = static_cast<int>(integer());
    else if (key == "batch_size") s.batch_size = static_cast<int>(integer());
    else if (key == "dedupe_pairs") s.dedupe_pairs = detail::parse_bool(value, origin, lineno);
    else if (key == "negative_pool") {
      if (value == "other_label") s.negative_pool = NegativePool::kOtherLabel;
      else if (value == "all_but_anchor") s.negative_pool = NegativePool::kAllButAnchor;
      else throw FormatError(origin, lineno, "negative_pool must be other_label or all_but_anchor");
    } else if (key == "epoch_overflow") {
      if (value == "clamp") s.epoch_overflow = EpochOverflow::kClamp;
      else if (value == "skip") s.epoch_overflow = EpochOverflow::kSkip;
      else throw FormatError(origin, lineno, "epoch_overflow must be clamp or skip");
    } else if (key == "calibration_pairs_per_class") {
      const auto v = integer();
      if (v < 1) throw FormatError(origin, lineno, "calibration_pairs_per_class must be >= 1");
      cfg.calibration_pairs_per_class = static_cast<std::size_t>(v);
    } else if (key == "eval_pairs_per_class") {
      const auto v = integer();
      if (v < 1) throw FormatError(origin, lineno, "eval_pairs_per_class must be >= 1");
      cfg.eval_pairs_per_class = static_cast<std::size_t>(v);
    } else {
      throw FormatError(origin, lineno, "unknown key \"" + key + "\"");
    }
  }
  try {
    s.validate();
    if (cfg.beta) MarginSet{s.db_margins.alpha, s.db_margins.gamma, *cfg.beta}.validate();
  } catch (const FormatError&) {
    throw;
  } catch (const ConfigError& e) {
    throw FormatError(origin, 0, e.what());
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) { return parse_config(read_text(path), path); }

inline json config_to_json(const RunConfig& cfg) {
  const SsdlConfig& s = cfg.ssdl;
  json j{{"db_alpha", s.db_margins.alpha},
         {"db_gamma", s.db_margins.gamma},
         {"da_alpha", s.da_margins.alpha},
         {"da_gamma", s.da_margins.gamma},
         {"min_cluster_size", s.min_cluster_size},
         {"epochs_per_iteration", s.epochs_per_iteration},
         {"learning_rate", s.learning_rate},
         {"lr_factor", s.lr_factor},
         {"seed", s.seed},
         {"iterations", s.iterations},
         {"margin_decay", s.margin_decay},
         {"steps_per_epoch", s.steps_per_epoch},
         {"batch_size", s.batch_size},
         {"dedupe_pairs", s.dedupe_pairs},
         {"negative_pool", to_string(s.negative_pool)},
         {"epoch_overflow", to_string(s.epoch_overflow)},
         {"calibration_pairs_per_class", cfg.calibration_pairs_per_class},
         {"eval_pairs_per_class", cfg.eval_pairs_per_class}};
  j["beta"] = cfg.beta ? json(*cfg.beta) : json(nullptr);
  return j;
}

// ------------------------------------------------------------------- adapter

inline std::string adapter_to_json(const Adapter& a) {
  json weight = json::array();
  for (std::size_t i = 0; i < a.dim(); ++i) {
    weight.push_back(std::vector<double>(a.weight().begin() + static_cast<std::ptrdiff_t>(i * a.dim()),
                                         a.weight().begin() + static_cast<std::ptrdiff_t>((i + 1) * a.dim())));
  }
  return dump(json{{"dim", a.dim()}, {"weight", weight}, {"bias", a.bias()}});
}

/// {"dim": d, "weight": [[d reals] x d], "bias": [d reals]}.
inline Adapter adapter_from_json(const std::string& text, const std::string& origin) {
  try {
    const json j = json::parse(text);
    const auto dim = j.at("dim").get<std::size_t>();
    std::vector<double> weight;
    const auto& rows = j.at("weight");
    if (!rows.is_array() || rows.size() != dim) throw FormatError(origin, 0, "weight must have dim rows");
    for (const auto& row : rows) {
      if (!row.is_array() || row.size() != dim) throw FormatError(origin, 0, "weight rows must have dim entries");
      for (const auto& x : row) weight.push_back(x.get<double>());
    }
    auto bias = j.at("bias").get<std::vector<double>>();
    return Adapter::from_parts(dim, std::move(weight), std::move(bias));
  } catch (const json::exception& e) {
    throw FormatError(origin, 0, std::string("malformed adapter: ") + e.what());
  } catch (const FormatError&) {
    throw;
  } catch (const ConfigError& e) {
    throw FormatError(origin, 0, e.what());
  }
}

inline Adapter load_adapter(const std::string& path) { return adapter_from_json(read_text(path), path); }

// ------------------------------------------------------------ audit artifacts

inline json clusters_to_json(const ClusterSet& clusters) {
  json arr = json::array();
  for (const auto& c : clusters.clusters) {
    arr.push_back({{"label", c.label}, {"members", c.member_ids}, {"center", c.center.vec()}});
  }
  return json{{"clusters", arr}};
}

/// Inverse of clusters_to_json; `key` selects the cluster array.
inline ClusterSet clusters_from_json(const json& j, const std::string& origin,
                                     const std::string& key = "clusters") {
  ClusterSet out;
  try {
    for (const auto& c : j.at(key)) {
      Cluster cluster{c.at("label").get<int>(), c.at("members").get<std::vector<DetectionId>>(),
                      Embedding(c.at("center").get<std::vector<double>>())};
      if (cluster.member_ids.empty()) throw FormatError(origin, 0, "cluster with no members");
      for (const auto id : cluster.member_ids) {
        if (!out.assignment.emplace(id, cluster.label).second) {
          throw FormatError(origin, 0, "detection " + std::to_string(id) + " in two clusters");
        }
      }
      out.clusters.push_back(std::move(cluster));
    }
  } catch (const json::exception& e) {
    throw FormatError(origin, 0, std::string("malformed clusters: ") + e.what());
  }
  return out;
}

inline std::string triplets_to_jsonl(const TripletBatch& batch, int iteration = -1) {
  std::string out;
  for (const auto& t : batch.triplets) {
    json j{{"epoch", batch.epoch}, {"anchor", t.anchor}, {"positive", t.positive},
           {"negative", t.negative}, {"d_ap", t.d_ap}, {"d_an", t.d_an}};
    if (iteration >= 0) j["iteration"] = iteration;
    out += j.dump() + "\n";
  }
  return out;
}

// -------------------------------------------------------------------- report

inline json snapshot_to_json(const MetricSnapshot& m) {
  json tar = json::object();
  for (std::size_t i = 0; i < m.tar.size(); ++i) {
    std::ostringstream key;
    key << m.far_targets[i];
    tar[key.str()] = m.tar[i];
  }
  return json{{"verification_accuracy", m.verification_accuracy}, {"tar_at_far", tar}, {"rank1", m.rank1}};
}

inline json iteration_to_json(const IterationOutcome& it) {
  return json{{"margins", {{"alpha", it.margins.alpha}, {"gamma", it.margins.gamma}, {"beta", it.margins.beta}}},
              {"cluster_count", it.cluster_count},
              {"salient_cluster_count", it.salient_cluster_count},
              {"clustered_detections", it.clustered_detections},
              {"triplet_counts", it.triplet_counts},
              {"epoch_mean_loss", it.train.epoch_mean_loss},
              {"active_fraction", it.train.active_fraction},
              {"steps", it.train.steps},
              {"step_size", it.train.step_size},
              {"skipped", it.skipped},
              {"diagnostic", it.diagnostic}};
}

/// report.json. Keys beta, db, da and metrics.{baseline, post_db, post_da}
/// are always present; a missing stage is written as null.
inline json report_to_json(const PipelineResult& r, const RunConfig& cfg, const Calibration* calibration) {
  json j;
  j["beta"] = r.beta;
  j["db"] = r.iterations.size() > 0 ? iteration_to_json(r.iterations[0]) : json(nullptr);
  j["da"] = r.iterations.size() > 1 ? iteration_to_json(r.iterations[1]) : json(nullptr);
  json extra = json::array();
  for (std::size_t i = 2; i < r.iterations.size(); ++i) extra.push_back(iteration_to_json(r.iterations[i]));
  j["extra_iterations"] = extra;
  const auto stage = [&](std::size_t i) { return i < r.metrics.size() ? snapshot_to_json(r.metrics[i]) : json(nullptr); };
  j["metrics"] = {{"baseline", stage(0)}, {"post_db", stage(1)}, {"post_da", stage(2)}};
  if (r.metrics.size() > 3) {
    json later = json::array();
    for (std::size_t i = 3; i < r.metrics.size(); ++i) later.push_back(snapshot_to_json(r.metrics[i]));
    j["metrics"]["later"] = later;
  }
  j["degraded"] = r.degraded;
  j["diagnostics"] = r.diagnostics;
  j["tar_convention"] = "largest threshold whose empirical FAR <= target; no interpolation";
  if (calibration) {
    j["calibration"] = {{"accuracy", calibration->accuracy},
                        {"tied_candidates", calibration->tied_candidates},
                        {"degenerate", calibration->degenerate}};
  } else {
    j["calibration"] = nullptr;
  }
  j["config"] = config_to_json(cfg);
  return j;
}

// ----------------------------------------------------------------------- CSV

/// RFC-4180 field: quoted when it contains a comma, quote, CR or LF.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string csv_number(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

inline std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_field(fields[i]);
  }
  return out + "\r\n";
}

inline std::string metrics_csv_header() {
  std::vector<std::string> h{"stage", "verification_accuracy"};
  for (const double f : default_far_targets()) {
    std::ostringstream ss;
    ss << "tar@far=" << f;
    h.push_back(ss.str());
  }
  h.push_back("rank1");
  return csv_row(h);
}

inline std::string metrics_csv_row(const std::string& stage, const MetricSnapshot& m) {
  std::vector<std::string> row{stage, csv_number(m.verification_accuracy)};
  for (const double t : m.tar) row.push_back(csv_number(t));
  row.push_back(csv_number(m.rank1));
  return csv_row(row);
}

inline std::string roc_csv(const std::vector<RocRow>& rows) {
  std::string out = csv_row({"threshold", "tar", "far"});
  for (const auto& r : rows) out += csv_row({csv_number(r.threshold), csv_number(r.tar), csv_number(r.far)});
  return out;
}

}  // namespace ssdl::io
