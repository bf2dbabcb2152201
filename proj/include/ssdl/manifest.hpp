#pragma once

// Run manifest: config echo, SHA-256 digests of the inputs, seed, artifact
// paths and per-stage wall time. Requires OpenSSL's libcrypto.

#include <array>
#include <chrono>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "ssdl/io.hpp"

namespace ssdl::io {

inline std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw ConfigError("sha256: digest failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

inline std::string file_sha256(const std::string& path) { return sha256_hex(read_text(path)); }

struct RunManifest {
  nlohmann::json config;
  std::map<std::string, std::string> input_digests;  // path -> sha256
  std::uint64_t seed = 0;
  std::map<std::string, std::string> artifacts;  // role -> path
  std::vector<std::pair<std::string, double>> timing_seconds;

  void add_input(const std::string& path) { input_digests[path] = file_sha256(path); }

  nlohmann::json to_json() const {
    nlohmann::json timing = nlohmann::json::object();
    for (const auto& [stage, s] : timing_seconds) timing[stage] = s;
    return {{"config", config}, {"inputs", input_digests}, {"seed", seed},
            {"artifacts", artifacts}, {"timing_seconds", timing}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.config = j.at("config");
    m.input_digests = j.at("inputs").get<std::map<std::string, std::string>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    for (const auto& [stage, s] : j.at("timing_seconds").items()) m.timing_seconds.emplace_back(stage, s.get<double>());
    return m;
  }

  /// Paths whose current digest differs from the recorded one.
  std::vector<std::string> stale_inputs() const {
    std::vector<std::string> out;
    for (const auto& [path, digest] : input_digests) {
      try {
        if (file_sha256(path) != digest) out.push_back(path);
      } catch (const FormatError&) {
        out.push_back(path);
      }
    }
    return out;
  }
};

/// Loads a manifest and checks every recorded input digest.
inline RunManifest load_manifest(const std::string& path) {
  RunManifest m;
  try {
    m = RunManifest::from_json(nlohmann::json::parse(read_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path, 0, std::string("malformed manifest: ") + e.what());
  }
  const auto stale = m.stale_inputs();
  if (!stale.empty()) throw FormatError(path, 0, "input digest mismatch for " + stale.front());
  return m;
}

/// Accumulates wall time per named stage.
class StageTimer {
 public:
  explicit StageTimer(RunManifest& manifest) : manifest_(manifest) {}

  template <typename Fn>
  auto time(const std::string& stage, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    struct Record {
      RunManifest& m;
      std::string stage;
      std::chrono::steady_clock::time_point start;
      ~Record() {
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
        m.timing_seconds.emplace_back(stage, dt.count());
      }
    } record{manifest_, stage, start};
    return fn();
  }

 private:
  RunManifest& manifest_;
};

}  // namespace ssdl::io
