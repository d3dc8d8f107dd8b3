#include "vrag/clients.hpp"

#include <cmath>
#include <thread>

#include "httplib.h"
#include "vrag/error.hpp"

namespace vrag {

std::filesystem::path ImageStore::resolve(const std::string& ref) const {
  std::filesystem::path p(ref);
  return p.is_absolute() || root_.empty() ? p : root_ / p;
}

std::string ImageStore::read(const std::string& ref) const {
  const auto path = resolve(ref);
  if (!std::filesystem::is_regular_file(path)) throw InvalidInput("image not found: " + path.string());
  return read_file(path);
}

std::size_t ChatRequest::image_count() const {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.is_image();
  return n;
}

WireChat materialize(const ChatRequest& request, const ImageStore& images) {
  WireChat w{{}, request.max_tokens, request.temperature};
  w.parts.reserve(request.parts.size());
  for (const auto& p : request.parts) {
    w.parts.push_back(p.is_image() ? ChatPart::image(images.read(p.value)) : p);
  }
  return w;
}

std::string request_digest(const WireChat& request) {
  Json j;
  Json parts = Json::array();
  for (const auto& p : request.parts) {
    parts.push_back({{"type", p.is_image() ? "image" : "text"},
                     {"value", p.is_image() ? "sha256:" + sha256_hex(p.value) : p.value}});
  }
  j["parts"] = std::move(parts);
  j["max_tokens"] = request.max_tokens;
  j["temperature"] = request.temperature;
  return sha256_hex(j.dump());
}

std::string request_digest(const ChatRequest& request, const ImageStore& images) {
  return request_digest(materialize(request, images));
}

namespace {

Json parts_to_json(const std::vector<ChatPart>& parts, bool encode_images) {
  Json out = Json::array();
  for (const auto& p : parts) {
    out.push_back({{"type", p.is_image() ? "image" : "text"},
                   {"value", p.is_image() && encode_images ? base64_encode(p.value) : p.value}});
  }
  return out;
}

std::vector<ChatPart> parts_from_json(const Json& arr, bool decode_images) {
  std::vector<ChatPart> out;
  for (const auto& p : arr) {
    const auto type = p.at("type").get<std::string>();
    auto value = p.at("value").get<std::string>();
    if (type == "text") {
      out.push_back(ChatPart::text(std::move(value)));
    } else if (type == "image") {
      out.push_back(ChatPart::image(decode_images ? base64_decode(value) : std::move(value)));
    } else {
      throw ParseError("unknown chat part type: " + type);
    }
  }
  return out;
}

template <typename F>
auto parse_guard(F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad payload: ") + e.what());
  }
}

}  // namespace

Json to_json(const ChatRequest& r) {
  return {{"parts", parts_to_json(r.parts, false)}, {"max_tokens", r.max_tokens}, {"temperature", r.temperature}};
}

ChatRequest chat_request_from_json(const Json& j) {
  return parse_guard([&] {
    return ChatRequest{parts_from_json(j.at("parts"), false), j.value("max_tokens", 256), j.value("temperature", 0.0)};
  });
}

Json wire_to_json(const WireChat& r) {
  return {{"parts", parts_to_json(r.parts, true)}, {"max_tokens", r.max_tokens}, {"temperature", r.temperature}};
}

WireChat wire_from_json(const Json& j) {
  return parse_guard([&] {
    return WireChat{parts_from_json(j.at("parts"), true), j.value("max_tokens", 256), j.value("temperature", 0.0)};
  });
}

Json to_json(const EmbedRequest& r) { return {{"id", r.id}, {"image_b64", base64_encode(r.image_bytes)}}; }

EmbedRequest embed_request_from_json(const Json& j) {
  return parse_guard([&] {
    return EmbedRequest{j.at("id").get<std::string>(), base64_decode(j.at("image_b64").get<std::string>())};
  });
}

Json to_json(const EmbedResponse& r) { return {{"id", r.id}, {"vector", r.vector}}; }

EmbedResponse embed_response_from_json(const Json& j) {
  return parse_guard(
      [&] { return EmbedResponse{j.at("id").get<std::string>(), j.at("vector").get<std::vector<float>>()}; });
}

Json to_json(const NerResponse& r) {
  Json ents = Json::array();
  for (const auto& e : r.entities) ents.push_back({{"text", e.text}, {"start", e.start}, {"end", e.end}});
  return {{"entities", std::move(ents)}};
}

NerResponse ner_response_from_json(const Json& j) {
  return parse_guard([&] {
    NerResponse r;
    for (const auto& e : j.at("entities")) {
      r.entities.push_back({e.at("text").get<std::string>(), e.at("start").get<std::size_t>(),
                            e.at("end").get<std::size_t>()});
    }
    return r;
  });
}

void validate(const EmbedRequest& r) {
  if (r.image_bytes.empty()) throw InvalidInput("embed request for '" + r.id + "' has no image bytes");
}

void validate(const ChatRequest& r) {
  if (r.parts.empty()) throw InvalidInput("chat request has no parts");
}

void validate(const WireChat& r) {
  if (r.parts.empty()) throw InvalidInput("chat request has no parts");
}

void check_embedding(const EmbedResponse& r, std::size_t dim) {
  if (r.vector.size() != dim) {
    throw DimensionError("embedder returned dimension " + std::to_string(r.vector.size()) + ", expected " +
                         std::to_string(dim));
  }
  for (float v : r.vector) {
    if (!std::isfinite(v)) throw InvalidInput("embedder returned a non-finite component");
  }
}

void check_entities(const NerResponse& r, const std::string& text) {
  for (const auto& e : r.entities) {
    if (e.start > e.end || e.end > text.size() || text.compare(e.start, e.end - e.start, e.text) != 0) {
      throw InvalidInput("NER span [" + std::to_string(e.start) + "," + std::to_string(e.end) +
                         ") does not match entity text '" + e.text + "'");
    }
  }
}

ChatResponse LocalChatClient::chat(const ChatRequest& request) {
  validate(request);
  return backend_->respond(materialize(request, images_));
}

HttpTransport::HttpTransport(std::string base_url, RetryPolicy policy)
    : base_url_(base_url), policy_(policy), rng_(policy.jitter_seed) {
  while (!base_url.empty() && base_url.back() == '/') base_url.pop_back();
  const auto scheme = base_url.find("://");
  const auto path_start = base_url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  host_ = base_url.substr(0, path_start);
  prefix_ = path_start == std::string::npos ? "" : base_url.substr(path_start);
  if (host_.empty()) throw InvalidInput("empty backend URL");
}

Json HttpTransport::post(const std::string& route, const Json& body) {
  const std::string path = prefix_ + route;
  const std::string payload = body.dump();
  std::string last_error;
  for (int attempt = 0; attempt < policy_.max_attempts; ++attempt) {
    if (attempt > 0) {
      std::chrono::milliseconds jitter{0};
      {
        std::lock_guard lock(rng_mu_);
        jitter = std::chrono::milliseconds(rng_.index(static_cast<std::uint64_t>(policy_.base_delay.count()) + 1));
      }
      std::this_thread::sleep_for(policy_.base_delay * (1 << (attempt - 1)) + jitter);
    }
    httplib::Client cli(host_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(policy_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(policy_.timeout - secs);
    cli.set_connection_timeout(secs.count(), usecs.count());
    cli.set_read_timeout(secs.count(), usecs.count());
    cli.set_write_timeout(secs.count(), usecs.count());
    auto res = cli.Post(path, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    Json reply;
    try {
      reply = Json::parse(res->body);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("backend returned invalid JSON: ") + e.what());
    }
    if (res->status == 413) throw ContextLengthError(reply.value("message", "context length exceeded"));
    if (res->status >= 400) {
      throw InvalidInput("backend rejected request (HTTP " + std::to_string(res->status) +
                         "): " + reply.value("message", std::string{}));
    }
    return reply;
  }
  throw TransportError("POST " + host_ + path + " failed after " + std::to_string(policy_.max_attempts) +
                       " attempts: " + last_error);
}

EmbedResponse HttpEmbedClient::embed(const EmbedRequest& request) {
  validate(request);
  auto r = embed_response_from_json(transport_.post("/embed", to_json(request)));
  check_embedding(r, dim_);
  return r;
}

ChatResponse HttpChatClient::chat(const ChatRequest& request) {
  validate(request);
  const auto reply = transport_.post("/chat", wire_to_json(materialize(request, images_)));
  return parse_guard([&] { return ChatResponse{reply.at("text").get<std::string>()}; });
}

NerResponse HttpNerClient::ner(const NerRequest& request) {
  auto r = ner_response_from_json(transport_.post("/ner", Json{{"text", request.text}}));
  check_entities(r, request.text);
  return r;
}

}  // namespace vrag
