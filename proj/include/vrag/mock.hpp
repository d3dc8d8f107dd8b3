#pragma once

// Deterministic in-process model backends and a loopback HTTP server that
// hosts them. Every mock is a pure function of (request, fixture).

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "vrag/clients.hpp"

namespace httplib {
class Server;
}

namespace vrag {

enum class EmbedderPersonality { hash, projection };
enum class ChatPersonality { echo, always_no, grounded_probe, scripted, mechanical_rewriter };

std::string_view to_string(EmbedderPersonality p);
std::string_view to_string(ChatPersonality p);
EmbedderPersonality parse_embedder_personality(std::string_view s);
ChatPersonality parse_chat_personality(std::string_view s);

struct MockFixture {
  std::uint64_t seed = 0;
  std::size_t dim = 512;
  EmbedderPersonality embedder = EmbedderPersonality::projection;

  // NER gazetteer (case-insensitive, longest match).
  std::vector<std::string> gazetteer;

  // grounded-probe: entities the simulated model can recognise in pixels,
  // what each image actually shows (keyed by SHA-256 of the bytes), and the
  // chance a shown, recognisable entity is noticed in one image.
  std::set<std::string> perceivable;
  std::map<std::string, std::set<std::string>> visual_findings;
  double perception_rate = 0.5;

  // scripted: request digest -> response text.
  std::map<std::string, std::string> scripted;
  std::string scripted_default;

  // Total text characters above which chat backends signal context overflow (0 = unlimited).
  std::size_t max_context_chars = 0;

  static MockFixture from_json(const Json& j);
  static MockFixture load(const std::filesystem::path& path);
  Json to_json() const;
};

// --- clinical text helpers shared by the grounded mocks -------------------

// True when `entity` occurs (word-bounded, case-insensitive) in `text` at
// least once without a negation cue earlier in the same sentence.
bool mentions_affirmed(std::string_view text, std::string_view entity);

// Splits into sentences, keeping terminators; newlines also end sentences.
std::vector<std::string> split_sentences(std::string_view text);

// --- backends ---------------------------------------------------------------

class MockEmbedder : public EmbedClient {
 public:
  explicit MockEmbedder(const MockFixture& fixture);
  EmbedResponse embed(const EmbedRequest& request) override;

 private:
  Eigen::VectorXf hash_vector(const std::string& bytes) const;
  Eigen::VectorXf projection_vector(const std::string& bytes);
  void grow_projection(Eigen::Index columns);

  EmbedderPersonality personality_;
  std::uint64_t seed_;
  Eigen::Index dim_;
  std::shared_mutex mu_;
  Eigen::MatrixXf projection_;
};

class GazetteerNer : public NerClient {
 public:
  explicit GazetteerNer(std::vector<std::string> gazetteer);
  NerResponse ner(const NerRequest& request) override;

 private:
  std::vector<std::string> entries_;  // lowercased, longest first
};

class MockChatModel : public ChatBackend {
 public:
  MockChatModel(ChatPersonality personality, std::shared_ptr<const MockFixture> fixture)
      : personality_(personality), fixture_(std::move(fixture)) {}
  ChatResponse respond(const WireChat& request) override;
  ChatPersonality personality() const noexcept { return personality_; }

 private:
  std::string grounded(const WireChat& request) const;
  std::string rewrite(const WireChat& request) const;
  bool perceives(const std::string& image_bytes, const std::string& entity) const;
  std::set<std::string> perceived(const std::string& image_bytes) const;

  ChatPersonality personality_;
  std::shared_ptr<const MockFixture> fixture_;
};

// Loopback server: /embed, /ner, /chat (default personality) and
// /<personality>/chat for every chat personality.
class MockServer {
 public:
  MockServer(std::shared_ptr<const MockFixture> fixture, ChatPersonality default_chat);
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();
  std::string url() const;

 private:
  void install_routes();

  std::shared_ptr<const MockFixture> fixture_;
  ChatPersonality default_chat_;
  std::unique_ptr<httplib::Server> server_;
  std::unique_ptr<MockEmbedder> embedder_;
  std::unique_ptr<GazetteerNer> ner_;
  std::map<ChatPersonality, std::unique_ptr<MockChatModel>> models_;
  std::thread thread_;
  std::string host_;
  int port_ = 0;
};

}  // namespace vrag
