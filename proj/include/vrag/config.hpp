#pragma once

// Run configuration, client construction, run manifests and the run-directory lock.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>

#include "vrag/clients.hpp"
#include "vrag/memory.hpp"
#include "vrag/mock.hpp"
#include "vrag/rag.hpp"

namespace vrag {

inline constexpr std::string_view kVersion = "0.1.0";

enum class Backend { mock, url };

struct RunConfig {
  Backend backend = Backend::mock;
  std::filesystem::path fixture;  // mock backend
  ChatPersonality mllm = ChatPersonality::grounded_probe;
  ChatPersonality grounder = ChatPersonality::grounded_probe;
  ChatPersonality rewriter = ChatPersonality::mechanical_rewriter;
  // Role -> base URL for the url backend; roles not listed fall back to the
  // VRAG_<ROLE>_URL environment variables.
  std::map<std::string, std::string> endpoints;
  RetryPolicy retry;

  RetrievalConfig retrieval;
  HnswParams hnsw;
  std::size_t dim = 512;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::set<std::string> excluded_sections{"INDICATION"};
  std::filesystem::path run_dir = ".";

  static RunConfig from_json(const Json& j);
  static RunConfig load(const std::filesystem::path& path);
  Json to_json() const;
  std::string digest() const;
};

// Environment variable consulted for a role's URL, e.g. VRAG_MLLM_URL.
std::string endpoint_env_var(std::string_view role);

// Builds every client role. Roles without an endpoint get a client that
// fails on first use.
Clients make_clients(const RunConfig& config, const ImageStore& images);

// Records what a subcommand consumed and produced.
class RunManifest {
 public:
  RunManifest(std::string subcommand, const RunConfig& config);

  void seed(const std::string& name, std::uint64_t value);
  void input(const std::filesystem::path& path);
  void output(const std::filesystem::path& path);
  void note(const std::string& key, Json value);

  Json to_json() const;
  // Writes <run_dir>/<subcommand>.manifest.json and returns its path.
  std::filesystem::path write() const;

 private:
  std::string key_for(const std::filesystem::path& path) const;

  std::string subcommand_;
  std::filesystem::path run_dir_;
  Json config_;
  std::string config_digest_;
  Json seeds_ = Json::object();
  Json inputs_ = Json::object();
  Json outputs_ = Json::object();
  Json notes_ = Json::object();
};

// Exclusive per-directory lock (O_CREAT | O_EXCL), released on destruction.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

}  // namespace vrag
