#pragma once

// Contracts for the four external model roles (image embedder, multi-image
// MLLM, text-only LLM, NER tagger) and their HTTP+JSON wire form.
//
//   POST /embed  {id, image_b64}                                 => {id, vector}
//   POST /chat   {parts:[{type, value}], max_tokens, temperature} => {text}
//   POST /ner    {text}                                          => {entities:[{text, start, end}]}
//
// Image parts travel as base64 bytes on the wire; inside the pipeline they are
// image handles resolved through an ImageStore.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "vrag/util.hpp"

namespace vrag {

using Json = nlohmann::ordered_json;

// Resolves image handles (paths) against a root directory.
class ImageStore {
 public:
  explicit ImageStore(std::filesystem::path root = {}) : root_(std::move(root)) {}
  std::filesystem::path resolve(const std::string& ref) const;
  std::string read(const std::string& ref) const;
  const std::filesystem::path& root() const noexcept { return root_; }

 private:
  std::filesystem::path root_;
};

struct EmbedRequest {
  std::string id;
  std::string image_bytes;
};

struct EmbedResponse {
  std::string id;
  std::vector<float> vector;
};

struct ChatPart {
  enum class Kind { text, image };
  Kind kind = Kind::text;
  std::string value;  // text, or an image handle

  static ChatPart text(std::string v) { return {Kind::text, std::move(v)}; }
  static ChatPart image(std::string ref) { return {Kind::image, std::move(ref)}; }
  bool is_image() const noexcept { return kind == Kind::image; }

  friend bool operator==(const ChatPart&, const ChatPart&) = default;
};

struct ChatRequest {
  std::vector<ChatPart> parts;
  int max_tokens = 256;
  double temperature = 0.0;

  std::size_t image_count() const;
  friend bool operator==(const ChatRequest&, const ChatRequest&) = default;
};

struct ChatResponse {
  std::string text;
};

struct NerEntity {
  std::string text;
  std::size_t start = 0;  // byte offsets, end exclusive
  std::size_t end = 0;

  friend bool operator==(const NerEntity&, const NerEntity&) = default;
};

struct NerRequest {
  std::string text;
};

struct NerResponse {
  std::vector<NerEntity> entities;
};

// Chat request with image handles replaced by their bytes.
struct WireChat {
  std::vector<ChatPart> parts;  // image parts hold raw bytes
  int max_tokens = 256;
  double temperature = 0.0;
};

class EmbedClient {
 public:
  virtual ~EmbedClient() = default;
  virtual EmbedResponse embed(const EmbedRequest& request) = 0;
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual ChatResponse chat(const ChatRequest& request) = 0;
};

class NerClient {
 public:
  virtual ~NerClient() = default;
  virtual NerResponse ner(const NerRequest& request) = 0;
};

// What an in-process chat model implements; sees image bytes, never paths.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatResponse respond(const WireChat& request) = 0;
};

struct Clients {
  std::shared_ptr<EmbedClient> embedder;
  std::shared_ptr<ChatClient> mllm;
  std::shared_ptr<ChatClient> grounder;
  std::shared_ptr<ChatClient> rewriter;
  std::shared_ptr<NerClient> ner;
};

WireChat materialize(const ChatRequest& request, const ImageStore& images);

// Content digest of a request: text verbatim, images by SHA-256 of their bytes.
std::string request_digest(const WireChat& request);
std::string request_digest(const ChatRequest& request, const ImageStore& images);

// Handle form, used for transcripts and golden files.
Json to_json(const ChatRequest& r);
ChatRequest chat_request_from_json(const Json& j);

// Wire form (base64 image bytes).
Json wire_to_json(const WireChat& r);
WireChat wire_from_json(const Json& j);

Json to_json(const EmbedRequest& r);
EmbedRequest embed_request_from_json(const Json& j);
Json to_json(const EmbedResponse& r);
EmbedResponse embed_response_from_json(const Json& j);
Json to_json(const NerResponse& r);
NerResponse ner_response_from_json(const Json& j);

void validate(const EmbedRequest& r);
void validate(const ChatRequest& r);
void validate(const WireChat& r);
// Checks dimension and finiteness of a backend embedding.
void check_embedding(const EmbedResponse& r, std::size_t dim);
// Checks span bounds and span text.
void check_entities(const NerResponse& r, const std::string& text);

// Forwards chat requests to an in-process backend after loading image bytes.
class LocalChatClient : public ChatClient {
 public:
  LocalChatClient(std::shared_ptr<ChatBackend> backend, ImageStore images)
      : backend_(std::move(backend)), images_(std::move(images)) {}
  ChatResponse chat(const ChatRequest& request) override;

 private:
  std::shared_ptr<ChatBackend> backend_;
  ImageStore images_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{50};
  std::chrono::milliseconds timeout{30000};
  std::uint64_t jitter_seed = 0;
};

// JSON-over-HTTP POST with timeouts and bounded retry with jitter. Retries
// connection failures and 5xx; 4xx responses are mapped to typed errors.
class HttpTransport {
 public:
  HttpTransport(std::string base_url, RetryPolicy policy = {});
  Json post(const std::string& route, const Json& body);
  const std::string& base_url() const noexcept { return base_url_; }

 private:
  std::string host_;
  std::string prefix_;
  std::string base_url_;
  RetryPolicy policy_;
  std::mutex rng_mu_;
  Rng rng_;
};

class HttpEmbedClient : public EmbedClient {
 public:
  HttpEmbedClient(std::string base_url, std::size_t dim, RetryPolicy policy = {})
      : transport_(std::move(base_url), policy), dim_(dim) {}
  EmbedResponse embed(const EmbedRequest& request) override;

 private:
  HttpTransport transport_;
  std::size_t dim_;
};

class HttpChatClient : public ChatClient {
 public:
  HttpChatClient(std::string base_url, ImageStore images, RetryPolicy policy = {})
      : transport_(std::move(base_url), policy), images_(std::move(images)) {}
  ChatResponse chat(const ChatRequest& request) override;

 private:
  HttpTransport transport_;
  ImageStore images_;
};

class HttpNerClient : public NerClient {
 public:
  explicit HttpNerClient(std::string base_url, RetryPolicy policy = {}) : transport_(std::move(base_url), policy) {}
  NerResponse ner(const NerRequest& request) override;

 private:
  HttpTransport transport_;
};

}  // namespace vrag
