#include "vrag/config.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdlib>

#include "vrag/error.hpp"

namespace vrag {

namespace {

const std::vector<std::string>& roles() {
  static const std::vector<std::string> r{"embedder", "mllm", "grounder", "rewriter", "ner"};
  return r;
}

std::string_view metric_name(Metric m) { return m == Metric::cosine ? "cosine" : "l2"; }

Metric parse_metric(std::string_view s) {
  if (s == "cosine") return Metric::cosine;
  if (s == "l2") return Metric::l2;
  throw InvalidInput("unknown metric: " + std::string(s));
}

}  // namespace

RunConfig RunConfig::from_json(const Json& j) {
  try {
    RunConfig c;
    const auto backend = j.value("backend", std::string("mock"));
    if (backend != "mock" && backend != "url") throw InvalidInput("backend must be mock or url");
    c.backend = backend == "mock" ? Backend::mock : Backend::url;
    if (j.contains("mock")) {
      const auto& m = j.at("mock");
      c.fixture = m.value("fixture", std::string{});
      c.mllm = parse_chat_personality(m.value("mllm", std::string(to_string(c.mllm))));
      c.grounder = parse_chat_personality(m.value("grounder", std::string(to_string(c.grounder))));
      c.rewriter = parse_chat_personality(m.value("rewriter", std::string(to_string(c.rewriter))));
    }
    if (j.contains("endpoints")) {
      for (const auto& [role, url] : j.at("endpoints").items()) {
        if (std::find(roles().begin(), roles().end(), role) == roles().end()) {
          throw InvalidInput("unknown client role: " + role);
        }
        c.endpoints[role] = url.get<std::string>();
      }
    }
    if (j.contains("retry")) {
      const auto& r = j.at("retry");
      c.retry.max_attempts = r.value("max_attempts", c.retry.max_attempts);
      c.retry.base_delay = std::chrono::milliseconds(r.value("base_delay_ms", c.retry.base_delay.count()));
      c.retry.timeout = std::chrono::milliseconds(r.value("timeout_ms", c.retry.timeout.count()));
    }
    if (j.contains("retrieval")) {
      const auto& r = j.at("retrieval");
      c.retrieval.mode = parse_retrieval_mode(r.value("mode", std::string("vrag")));
      c.retrieval.k = r.value("k", c.retrieval.k);
      const auto search = r.value("search", std::string("approximate"));
      if (search != "approximate" && search != "exact") throw InvalidInput("search must be approximate or exact");
      c.retrieval.search = search == "exact" ? SearchMode::exact : SearchMode::approximate;
    }
    if (j.contains("hnsw")) {
      const auto& h = j.at("hnsw");
      c.hnsw.m = h.value("m", c.hnsw.m);
      c.hnsw.ef_construction = h.value("ef_construction", c.hnsw.ef_construction);
      c.hnsw.ef_search = h.value("ef_search", c.hnsw.ef_search);
      c.hnsw.metric = parse_metric(h.value("metric", std::string("cosine")));
      c.hnsw.level_seed = h.value("level_seed", c.hnsw.level_seed);
    }
    c.dim = j.value("dim", c.dim);
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    if (j.contains("excluded_sections")) {
      const auto v = j.at("excluded_sections").get<std::vector<std::string>>();
      c.excluded_sections = {v.begin(), v.end()};
    }
    c.run_dir = j.value("run_dir", std::string("."));
    c.hnsw.validate();
    c.retrieval.validate();
    if (c.dim == 0) throw InvalidInput("dim must be positive");
    if (c.workers == 0) throw InvalidInput("workers must be positive");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad run config: ") + e.what());
  }
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  try {
    return from_json(Json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("run config " + path.string() + ": " + e.what());
  }
}

Json RunConfig::to_json() const {
  Json j;
  j["backend"] = backend == Backend::mock ? "mock" : "url";
  j["mock"] = {{"fixture", fixture.generic_string()},
               {"mllm", to_string(mllm)},
               {"grounder", to_string(grounder)},
               {"rewriter", to_string(rewriter)}};
  Json ep = Json::object();
  for (const auto& [role, url] : endpoints) ep[role] = url;
  j["endpoints"] = std::move(ep);
  j["retry"] = {{"max_attempts", retry.max_attempts},
                {"base_delay_ms", retry.base_delay.count()},
                {"timeout_ms", retry.timeout.count()}};
  j["retrieval"] = {{"mode", to_string(retrieval.mode)},
                    {"k", retrieval.k},
                    {"search", retrieval.search == SearchMode::exact ? "exact" : "approximate"}};
  j["hnsw"] = {{"m", hnsw.m},
               {"ef_construction", hnsw.ef_construction},
               {"ef_search", hnsw.ef_search},
               {"metric", metric_name(hnsw.metric)},
               {"level_seed", hnsw.level_seed}};
  j["dim"] = dim;
  j["seed"] = seed;
  j["workers"] = workers;
  j["excluded_sections"] = excluded_sections;
  j["run_dir"] = run_dir.generic_string();
  return j;
}

// The run directory and worker count do not affect outputs, so they stay
// out of the digest.
std::string RunConfig::digest() const {
  auto j = to_json();
  j.erase("run_dir");
  j.erase("workers");
  return sha256_hex(j.dump());
}

std::string endpoint_env_var(std::string_view role) {
  if (role == "grounder") return "VRAG_LLM_URL";
  std::string upper;
  for (char c : role) upper.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return "VRAG_" + upper + "_URL";
}

namespace {

class UnconfiguredClient : public EmbedClient, public ChatClient, public NerClient {
 public:
  explicit UnconfiguredClient(std::string role) : role_(std::move(role)) {}
  EmbedResponse embed(const EmbedRequest&) override { fail(); }
  ChatResponse chat(const ChatRequest&) override { fail(); }
  NerResponse ner(const NerRequest&) override { fail(); }

 private:
  [[noreturn]] void fail() const {
    throw InvalidInput("no endpoint configured for the " + role_ + " role (set " + endpoint_env_var(role_) +
                       " or endpoints." + role_ + " in the config)");
  }
  std::string role_;
};

std::optional<std::string> endpoint(const RunConfig& c, const std::string& role) {
  if (auto it = c.endpoints.find(role); it != c.endpoints.end() && !it->second.empty()) return it->second;
  if (const char* env = std::getenv(endpoint_env_var(role).c_str()); env && *env) return std::string(env);
  return std::nullopt;
}

}  // namespace

Clients make_clients(const RunConfig& config, const ImageStore& images) {
  Clients c;
  if (config.backend == Backend::mock) {
    if (config.fixture.empty()) throw InvalidInput("the mock backend needs a fixture file (--fixture)");
    auto fixture = std::make_shared<const MockFixture>(MockFixture::load(config.fixture));
    if (fixture->dim != config.dim) {
      throw DimensionError("fixture dim " + std::to_string(fixture->dim) + " differs from configured dim " +
                           std::to_string(config.dim));
    }
    auto chat = [&](ChatPersonality p) {
      return std::make_shared<LocalChatClient>(std::make_shared<MockChatModel>(p, fixture), images);
    };
    c.embedder = std::make_shared<MockEmbedder>(*fixture);
    c.mllm = chat(config.mllm);
    c.grounder = chat(config.grounder);
    c.rewriter = chat(config.rewriter);
    c.ner = std::make_shared<GazetteerNer>(fixture->gazetteer);
    return c;
  }

  RetryPolicy policy = config.retry;
  policy.jitter_seed = config.seed;
  auto missing = [](const std::string& role) { return std::make_shared<UnconfiguredClient>(role); };
  if (auto u = endpoint(config, "embedder")) {
    c.embedder = std::make_shared<HttpEmbedClient>(*u, config.dim, policy);
  } else {
    c.embedder = missing("embedder");
  }
  for (auto [role, slot] : {std::pair{"mllm", &c.mllm}, {"grounder", &c.grounder}, {"rewriter", &c.rewriter}}) {
    if (auto u = endpoint(config, role)) {
      *slot = std::make_shared<HttpChatClient>(*u, images, policy);
    } else {
      *slot = missing(role);
    }
  }
  if (auto u = endpoint(config, "ner")) {
    c.ner = std::make_shared<HttpNerClient>(*u, policy);
  } else {
    c.ner = missing("ner");
  }
  return c;
}

RunManifest::RunManifest(std::string subcommand, const RunConfig& config)
    : subcommand_(std::move(subcommand)),
      run_dir_(config.run_dir),
      config_(config.to_json()),
      config_digest_(config.digest()) {}

void RunManifest::seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }

std::string RunManifest::key_for(const std::filesystem::path& path) const {
  namespace fs = std::filesystem;
  const auto abs = fs::absolute(path).lexically_normal();
  const auto rel = abs.lexically_relative(fs::absolute(run_dir_).lexically_normal());
  const bool inside = !rel.empty() && *rel.begin() != "..";
  return (inside ? rel : path).generic_string();
}

void RunManifest::input(const std::filesystem::path& path) {
  inputs_[key_for(path)] = std::filesystem::is_regular_file(path) ? sha256_hex(read_file(path)) : "";
}

void RunManifest::output(const std::filesystem::path& path) { outputs_[key_for(path)] = sha256_hex(read_file(path)); }

void RunManifest::note(const std::string& key, Json value) { notes_[key] = std::move(value); }

Json RunManifest::to_json() const {
  Json j;
  j["subcommand"] = subcommand_;
  j["versions"] = {{"vrag", kVersion}, {"index_format", Memory::kFormatVersion}};
  j["config_digest"] = config_digest_;
  j["config"] = config_;
  j["seeds"] = seeds_;
  j["inputs"] = inputs_;
  j["outputs"] = outputs_;
  if (!notes_.empty()) j["notes"] = notes_;
  return j;
}

std::filesystem::path RunManifest::write() const {
  const auto path = run_dir_ / (subcommand_ + ".manifest.json");
  write_file(path, to_json().dump(2) + "\n");
  return path;
}

RunLock::RunLock(const std::filesystem::path& run_dir) : path_(run_dir / ".vrag.lock") {
  std::filesystem::create_directories(run_dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw StateError("run directory " + run_dir.string() + " is locked by another run (" + path_.string() + ")");
  }
  const auto pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

}  // namespace vrag
