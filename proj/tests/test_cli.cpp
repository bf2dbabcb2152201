#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string err;
};

Result run(const std::string& args, const fs::path& dir) {
  const auto err_file = dir / "stderr.txt";
  const std::string cmd = std::string(SSDL_CLI_PATH) + " " + args + " > " + (dir / "stdout.txt").string() +
                          " 2> " + err_file.string();
  const int status = std::system(cmd.c_str());
  std::ifstream in(err_file);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const fs::path& p) {
  const auto text = slurp(p);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

fs::path fresh(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("ssdl_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

const char* kSynth = "synth --identities 5 --per 30 --dim 16 --sigma 0.2 --noise 0.12 --translation 1 "
                     "--rotation 0.3 --seed 7";

}  // namespace

TEST(Cli, SynthWritesCountsAndIsDeterministic) {
  const auto a = fresh("synth_a"), b = fresh("synth_b");
  ASSERT_EQ(run(std::string(kSynth) + " --out-dir " + a.string(), a).code, 0);
  ASSERT_EQ(run(std::string(kSynth) + " --out-dir " + b.string(), b).code, 0);
  EXPECT_EQ(count_lines(a / "source.jsonl"), 150u);
  EXPECT_EQ(count_lines(a / "target.jsonl"), 150u);
  for (const char* f : {"source.jsonl", "target.jsonl", "labels.json"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Cli, SynthRejectsSingleIdentity) {
  const auto d = fresh("synth_bad");
  const auto r = run("synth --identities 1 --out-dir " + d.string(), d);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("identities"), std::string::npos);
}

TEST(Cli, SynthHonoursEnvironmentOutDir) {
  const auto d = fresh("synth_env");
  const std::string cmd = "SSDL_OUT_DIR=" + d.string() + " " + SSDL_CLI_PATH +
                          " synth --identities 2 --per 2 --dim 2 > /dev/null";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(d / "labels.json"));
}

TEST(Cli, RunRejectsEmptyBandAndMissingFiles) {
  const auto d = fresh("run_bad");
  ASSERT_EQ(run(std::string(kSynth) + " --out-dir " + d.string(), d).code, 0);
  write(d / "bad.cfg", "db_alpha = 0.1\ndb_gamma = 0.1\n");
  const auto bad = run("run --config " + (d / "bad.cfg").string() + " --embeddings " + (d / "target.jsonl").string() +
                           " --source " + (d / "source.jsonl").string() + " --labels " + (d / "labels.json").string() +
                           " --out-dir " + (d / "out").string(),
                       d);
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("empty negative band"), std::string::npos);
  const auto missing = run("run --embeddings " + (d / "nope.jsonl").string() + " --labels " +
                               (d / "labels.json").string() + " --out-dir " + (d / "out").string(),
                           d);
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("nope.jsonl"), std::string::npos);
}

class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fresh("run_ok");
    ASSERT_EQ(run(std::string(kSynth) + " --out-dir " + dir_.string(), dir_).code, 0);
    write(dir_ / "wide.cfg", "db_alpha = 0.5\ndb_gamma = 0.05\nda_alpha = 0.3\nda_gamma = 0.02\n"
                             "learning_rate = 3\nseed = 3\neval_pairs_per_class = 500\n");
    code_ = run("run --config " + (dir_ / "wide.cfg").string() + " --embeddings " + (dir_ / "target.jsonl").string() +
                    " --source " + (dir_ / "source.jsonl").string() + " --labels " + (dir_ / "labels.json").string() +
                    " --out-dir " + (dir_ / "out").string(),
                dir_)
                .code;
  }
  static inline fs::path dir_;
  static inline int code_ = -1;
};

TEST_F(CliRun, ReportHasRequiredKeys) {
  ASSERT_EQ(code_, 0);
  const auto report = json::parse(slurp(dir_ / "out" / "report.json"));
  for (const char* k : {"beta", "db", "da", "metrics"}) EXPECT_TRUE(report.contains(k)) << k;
  for (const char* k : {"baseline", "post_db", "post_da"}) EXPECT_TRUE(report["metrics"].contains(k)) << k;
  EXPECT_EQ(report["db"]["margins"]["alpha"], 0.5);
  for (const char* f : {"metrics.csv", "adapter.json", "manifest.json", "triplets.jsonl", "clusters_db.json",
                        "clusters_da.json", "eval_pairs.jsonl"}) {
    EXPECT_TRUE(fs::exists(dir_ / "out" / f)) << f;
  }
  const auto csv = slurp(dir_ / "out" / "metrics.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_NE(csv.find("\r\n"), std::string::npos);
  const auto manifest = json::parse(slurp(dir_ / "out" / "manifest.json"));
  EXPECT_EQ(manifest["inputs"].size(), 3u);
  EXPECT_EQ(manifest["seed"], 3);
}

TEST_F(CliRun, IdentityAdapterEvalMatchesBaseline) {
  ASSERT_EQ(code_, 0);
  const auto out = dir_ / "eval_identity";
  json rows = json::array();
  for (int i = 0; i < 16; ++i) {
    std::vector<double> row(16, 0.0);
    row[static_cast<std::size_t>(i)] = 1.0;
    rows.push_back(row);
  }
  write(dir_ / "identity.json", json{{"dim", 16}, {"weight", rows}, {"bias", std::vector<double>(16, 0.0)}}.dump());
  const auto r = run("eval --adapter " + (dir_ / "identity.json").string() + " --embeddings " +
                         (dir_ / "target.jsonl").string() + " --pairs " + (dir_ / "out" / "eval_pairs.jsonl").string() +
                         " --report " + (dir_ / "out" / "report.json").string() + " --out-dir " + out.string(),
                     dir_);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(slurp(dir_ / "out" / "report.json"));
  const auto csv = slurp(out / "eval_metrics.csv");
  const auto row = csv.substr(csv.find("\r\n") + 2);
  const double acc = std::stod(row.substr(row.find(',') + 1));
  EXPECT_EQ(acc, report["metrics"]["baseline"]["verification_accuracy"].get<double>());
}

TEST_F(CliRun, TrainedAdapterEvalMatchesPostDa) {
  ASSERT_EQ(code_, 0);
  const auto out = dir_ / "eval_trained";
  const auto r = run("eval --adapter " + (dir_ / "out" / "adapter.json").string() + " --embeddings " +
                         (dir_ / "target.jsonl").string() + " --pairs " + (dir_ / "out" / "eval_pairs.jsonl").string() +
                         " --report " + (dir_ / "out" / "report.json").string() + " --labels " +
                         (dir_ / "labels.json").string() + " --out-dir " + out.string(),
                     dir_);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(out / "eval_metrics.csv");
  const auto run_csv = slurp(dir_ / "out" / "metrics.csv");
  const auto post_da = run_csv.substr(run_csv.find("post_da,") + 8);
  const auto eval_row = csv.substr(csv.find("eval,") + 5);
  EXPECT_EQ(eval_row, post_da);
  EXPECT_TRUE(fs::exists(out / "roc.csv"));
}

TEST_F(CliRun, EvalRejectsEmptyPairsAndDimensionMismatch) {
  ASSERT_EQ(code_, 0);
  write(dir_ / "empty_pairs.jsonl", "");
  const auto empty = run("eval --adapter " + (dir_ / "out" / "adapter.json").string() + " --embeddings " +
                             (dir_ / "target.jsonl").string() + " --pairs " + (dir_ / "empty_pairs.jsonl").string() +
                             " --beta 1 --out-dir " + (dir_ / "e1").string(),
                         dir_);
  EXPECT_EQ(empty.code, 2);
  write(dir_ / "small.json", json{{"dim", 2}, {"weight", {{1, 0}, {0, 1}}}, {"bias", {0, 0}}}.dump());
  const auto mismatch = run("eval --adapter " + (dir_ / "small.json").string() + " --embeddings " +
                                (dir_ / "target.jsonl").string() + " --pairs " +
                                (dir_ / "out" / "eval_pairs.jsonl").string() + " --beta 1 --out-dir " +
                                (dir_ / "e2").string(),
                            dir_);
  EXPECT_EQ(mismatch.code, 2);
  EXPECT_NE(mismatch.err.find("dimension"), std::string::npos);
}

TEST(Cli, MalformedJsonlReportsLine) {
  const auto d = fresh("malformed");
  write(d / "bad.jsonl", "{\"id\":0,\"frame\":0,\"score\":1,\"vec\":[0,1]}\n{\"id\":1,\n");
  const auto r = run("cluster --embeddings " + (d / "bad.jsonl").string() + " --beta 1 --out-dir " + d.string(), d);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bad.jsonl:2"), std::string::npos) << r.err;
}

TEST(Cli, ClusterThenMine) {
  const auto d = fresh("stages");
  ASSERT_EQ(run(std::string(kSynth) + " --out-dir " + d.string(), d).code, 0);
  write(d / "wide.cfg", "db_alpha = 0.5\ndb_gamma = 0.05\nda_alpha = 0.3\nda_gamma = 0.02\n");
  const auto c = run("cluster --config " + (d / "wide.cfg").string() + " --embeddings " +
                         (d / "target.jsonl").string() + " --beta 1.2 --out-dir " + d.string(),
                     d);
  ASSERT_EQ(c.code, 0) << c.err;
  const auto m = run("mine --config " + (d / "wide.cfg").string() + " --embeddings " + (d / "target.jsonl").string() +
                         " --clusters " + (d / "clusters.json").string() + " --beta 1.2 --epoch 1 --threads 4 --out-dir " +
                         d.string(),
                     d);
  EXPECT_TRUE(m.code == 0 || m.code == 3) << m.err;
  const auto bad = run("mine --embeddings " + (d / "target.jsonl").string() + " --clusters " +
                           (d / "clusters.json").string() + " --beta 1.2 --stage xx --out-dir " + d.string(),
                       d);
  EXPECT_EQ(bad.code, 2);
}
