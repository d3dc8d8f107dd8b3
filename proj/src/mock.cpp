#include "vrag/mock.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <regex>
#include <sstream>

#include "httplib.h"
#include "vrag/error.hpp"

namespace vrag {

std::string_view to_string(EmbedderPersonality p) { return p == EmbedderPersonality::hash ? "hash" : "projection"; }

std::string_view to_string(ChatPersonality p) {
  switch (p) {
    case ChatPersonality::echo: return "echo";
    case ChatPersonality::always_no: return "always-no";
    case ChatPersonality::grounded_probe: return "grounded-probe";
    case ChatPersonality::scripted: return "scripted";
    case ChatPersonality::mechanical_rewriter: return "mechanical-rewriter";
  }
  return "?";
}

EmbedderPersonality parse_embedder_personality(std::string_view s) {
  if (s == "hash") return EmbedderPersonality::hash;
  if (s == "projection") return EmbedderPersonality::projection;
  throw InvalidInput("unknown embedder personality: " + std::string(s));
}

ChatPersonality parse_chat_personality(std::string_view s) {
  for (auto p : {ChatPersonality::echo, ChatPersonality::always_no, ChatPersonality::grounded_probe,
                 ChatPersonality::scripted, ChatPersonality::mechanical_rewriter}) {
    if (to_string(p) == s) return p;
  }
  throw InvalidInput("unknown chat personality: " + std::string(s));
}

MockFixture MockFixture::from_json(const Json& j) {
  try {
    MockFixture f;
    f.seed = j.value("seed", std::uint64_t{0});
    f.dim = j.value("dim", std::size_t{512});
    f.embedder = parse_embedder_personality(j.value("embedder", std::string("projection")));
    f.gazetteer = j.value("gazetteer", std::vector<std::string>{});
    for (const auto& e : j.value("perceivable", std::vector<std::string>{})) f.perceivable.insert(to_lower(e));
    if (j.contains("visual_findings")) {
      for (const auto& [digest, ents] : j.at("visual_findings").items()) {
        auto& dst = f.visual_findings[digest];
        for (const auto& e : ents) dst.insert(to_lower(e.get<std::string>()));
      }
    }
    f.perception_rate = j.value("perception_rate", 0.5);
    if (j.contains("scripted")) {
      for (const auto& [digest, text] : j.at("scripted").items()) f.scripted[digest] = text.get<std::string>();
    }
    f.scripted_default = j.value("scripted_default", std::string{});
    f.max_context_chars = j.value("max_context_chars", std::size_t{0});
    if (f.dim == 0) throw InvalidInput("fixture dim must be positive");
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad mock fixture: ") + e.what());
  }
}

MockFixture MockFixture::load(const std::filesystem::path& path) {
  try {
    return from_json(Json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("mock fixture " + path.string() + ": " + e.what());
  }
}

Json MockFixture::to_json() const {
  Json j;
  j["seed"] = seed;
  j["dim"] = dim;
  j["embedder"] = vrag::to_string(embedder);
  j["gazetteer"] = gazetteer;
  j["perceivable"] = perceivable;
  j["perception_rate"] = perception_rate;
  Json vf = Json::object();
  for (const auto& [d, ents] : visual_findings) vf[d] = ents;
  j["visual_findings"] = std::move(vf);
  Json sc = Json::object();
  for (const auto& [d, t] : scripted) sc[d] = t;
  j["scripted"] = std::move(sc);
  j["scripted_default"] = scripted_default;
  j["max_context_chars"] = max_context_chars;
  return j;
}

// --- clinical text ----------------------------------------------------------

namespace {

const std::vector<std::string>& negation_cues() {
  static const std::vector<std::string> cues{"no",         "not",          "without",   "negative for", "ruling out",
                                             "rule out",   "ruled out",    "rules out", "free of",      "absence of",
                                             "resolved",   "no evidence of"};
  return cues;
}

bool negated_at(std::string_view text, std::size_t pos) {
  const auto boundary = text.find_last_of(".!?\n", pos == 0 ? 0 : pos - 1);
  const auto start = boundary == std::string_view::npos || pos == 0 ? 0 : boundary + 1;
  const auto prefix = text.substr(start, pos - start);
  return std::any_of(negation_cues().begin(), negation_cues().end(),
                     [&](const std::string& cue) { return find_word(prefix, cue) != std::string_view::npos; });
}

std::uint64_t digest_prefix(std::string_view hex) { return std::stoull(std::string(hex.substr(0, 16)), nullptr, 16); }

}  // namespace

bool mentions_affirmed(std::string_view text, std::string_view entity) {
  for (auto pos = find_word(text, entity); pos != std::string_view::npos; pos = find_word(text, entity, pos + 1)) {
    if (!negated_at(text, pos)) return true;
  }
  return false;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (auto t = trim(current); !t.empty()) out.push_back(std::move(t));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      flush();
      continue;
    }
    current.push_back(c);
    if ((c == '.' || c == '!' || c == '?') && (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])))) {
      flush();
    }
  }
  flush();
  return out;
}

// --- embedder ---------------------------------------------------------------

MockEmbedder::MockEmbedder(const MockFixture& fixture)
    : personality_(fixture.embedder), seed_(fixture.seed), dim_(static_cast<Eigen::Index>(fixture.dim)) {}

namespace {

Eigen::VectorXf gaussian_vector(Rng& rng, Eigen::Index dim) {
  Eigen::VectorXf v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    const double u1 = rng.unit(), u2 = rng.unit();
    v[i] = static_cast<float>(std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2));
  }
  return v;
}

}  // namespace

Eigen::VectorXf MockEmbedder::hash_vector(const std::string& bytes) const {
  Rng rng(seed_ ^ digest_prefix(sha256_hex(bytes)));
  return gaussian_vector(rng, dim_);
}

void MockEmbedder::grow_projection(Eigen::Index columns) {
  std::unique_lock lock(mu_);
  const auto have = projection_.cols();
  if (have >= columns) return;
  projection_.conservativeResize(dim_, columns);
  for (Eigen::Index c = have; c < columns; ++c) {
    Rng rng(seed_ * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(c) + 1);
    projection_.col(c) = gaussian_vector(rng, dim_);
  }
}

// Random projection of centred byte values: near-identical images map to
// nearby vectors, identical bytes to identical vectors.
Eigen::VectorXf MockEmbedder::projection_vector(const std::string& bytes) {
  const auto n = static_cast<Eigen::Index>(bytes.size());
  grow_projection(n);
  Eigen::VectorXf centred(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    centred[i] = (static_cast<float>(static_cast<unsigned char>(bytes[static_cast<std::size_t>(i)])) - 127.5f) / 127.5f;
  }
  std::shared_lock lock(mu_);
  return projection_.leftCols(n) * centred;
}

EmbedResponse MockEmbedder::embed(const EmbedRequest& request) {
  validate(request);
  Eigen::VectorXf v = personality_ == EmbedderPersonality::hash ? hash_vector(request.image_bytes)
                                                                : projection_vector(request.image_bytes);
  v.normalize();
  return {request.id, std::vector<float>(v.data(), v.data() + v.size())};
}

// --- NER --------------------------------------------------------------------

GazetteerNer::GazetteerNer(std::vector<std::string> gazetteer) {
  for (auto& g : gazetteer) {
    auto e = to_lower(trim(g));
    if (!e.empty()) entries_.push_back(std::move(e));
  }
  std::sort(entries_.begin(), entries_.end(),
            [](const auto& a, const auto& b) { return a.size() != b.size() ? a.size() > b.size() : a < b; });
  entries_.erase(std::unique(entries_.begin(), entries_.end()), entries_.end());
}

NerResponse GazetteerNer::ner(const NerRequest& request) {
  const std::string& text = request.text;
  const std::string lower = to_lower(text);
  NerResponse out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (i > 0 && is_word_char(text[i - 1])) {
      ++i;
      continue;
    }
    bool matched = false;
    for (const auto& e : entries_) {
      const auto end = i + e.size();
      if (end <= lower.size() && lower.compare(i, e.size(), e) == 0 && (end == lower.size() || !is_word_char(lower[end]))) {
        out.entities.push_back({text.substr(i, e.size()), i, end});
        i = end;
        matched = true;
        break;
      }
    }
    if (!matched) ++i;
  }
  return out;
}

// --- chat -------------------------------------------------------------------

namespace {

constexpr std::string_view kQuestionLead = "does the patient have ";
constexpr std::string_view kReportLead = " based on the report:";
constexpr std::string_view kRelevanceLead = "how relevant is this report to the query image?";

struct ParsedProbe {
  std::string entity;
  std::string evidence;
};

// Finds a "Does the patient have X?" question and collects the remaining
// text (reference reports, or the report being grounded) as evidence.
std::optional<ParsedProbe> parse_probe(const WireChat& req) {
  std::optional<ParsedProbe> out;
  std::vector<std::string> evidence;
  for (const auto& p : req.parts) {
    if (p.is_image()) continue;
    const std::string lower = to_lower(p.value);
    const auto q = lower.find(kQuestionLead);
    if (out || q == std::string::npos) {
      evidence.push_back(p.value);
      continue;
    }
    const auto start = q + kQuestionLead.size();
    const auto report = lower.find(kReportLead, start);
    const auto qmark = lower.find('?', start);
    ParsedProbe probe;
    evidence.push_back(p.value.substr(0, q));
    if (report != std::string::npos && (qmark == std::string::npos || report < qmark)) {
      probe.entity = trim(p.value.substr(start, report - start));
      auto body = p.value.substr(report + kReportLead.size());
      if (!body.empty() && body.back() == '?') body.pop_back();
      evidence.push_back(body);
    } else {
      probe.entity = trim(p.value.substr(start, qmark == std::string::npos ? std::string::npos : qmark - start));
      if (qmark != std::string::npos) evidence.push_back(p.value.substr(qmark + 1));
    }
    out = std::move(probe);
  }
  if (out) out->evidence = join(evidence, "\n");
  return out;
}

std::size_t text_chars(const WireChat& req) {
  std::size_t n = 0;
  for (const auto& p : req.parts) n += p.is_image() ? 0 : p.value.size();
  return n;
}

}  // namespace

ChatResponse MockChatModel::respond(const WireChat& request) {
  validate(request);
  if (fixture_->max_context_chars && text_chars(request) > fixture_->max_context_chars) {
    throw ContextLengthError("request has " + std::to_string(text_chars(request)) + " text characters, limit is " +
                             std::to_string(fixture_->max_context_chars));
  }
  switch (personality_) {
    case ChatPersonality::echo: {
      std::string out;
      for (const auto& p : request.parts) {
        if (!p.is_image()) out += p.value;
      }
      return {out};
    }
    case ChatPersonality::always_no: return {"No."};
    case ChatPersonality::grounded_probe: return {grounded(request)};
    case ChatPersonality::scripted: {
      const auto it = fixture_->scripted.find(request_digest(request));
      return {it == fixture_->scripted.end() ? fixture_->scripted_default : it->second};
    }
    case ChatPersonality::mechanical_rewriter: return {rewrite(request)};
  }
  return {};
}

bool MockChatModel::perceives(const std::string& image_bytes, const std::string& entity) const {
  const auto e = to_lower(entity);
  if (!fixture_->perceivable.contains(e)) return false;
  const auto digest = sha256_hex(image_bytes);
  const auto it = fixture_->visual_findings.find(digest);
  if (it == fixture_->visual_findings.end() || !it->second.contains(e)) return false;
  const auto roll = digest_prefix(sha256_hex(std::to_string(fixture_->seed) + "|" + digest + "|" + e));
  return static_cast<double>(roll) * 0x1.0p-64 < fixture_->perception_rate;
}

std::set<std::string> MockChatModel::perceived(const std::string& image_bytes) const {
  std::set<std::string> out;
  const auto it = fixture_->visual_findings.find(sha256_hex(image_bytes));
  if (it == fixture_->visual_findings.end()) return out;
  for (const auto& e : it->second) {
    if (perceives(image_bytes, e)) out.insert(e);
  }
  return out;
}

std::string MockChatModel::grounded(const WireChat& request) const {
  std::vector<const std::string*> images;
  for (const auto& p : request.parts) {
    if (p.is_image()) images.push_back(&p.value);
  }

  if (auto probe = parse_probe(request)) {
    if (mentions_affirmed(probe->evidence, probe->entity)) return "Yes.";
    if (images.empty()) return "No.";
    // The query image is the last one. A recognisable finding the query
    // really shows is noticed in the query itself or in a reference image
    // that shows it too.
    const auto e = to_lower(probe->entity);
    const auto truth = fixture_->visual_findings.find(sha256_hex(*images.back()));
    if (truth == fixture_->visual_findings.end() || !truth->second.contains(e)) return "No.";
    const bool seen = std::any_of(images.begin(), images.end(), [&](const std::string* img) { return perceives(*img, e); });
    return seen ? "Yes." : "No.";
  }

  std::string all_text;
  for (const auto& p : request.parts) {
    if (!p.is_image()) all_text += p.value + "\n";
  }
  if (images.empty()) return "I need an image to answer.";
  const auto seen = perceived(*images.back());

  if (const auto r = to_lower(all_text).find(kRelevanceLead); r != std::string::npos) {
    if (seen.empty()) return "Score: 0";
    const auto report = all_text.substr(r + kRelevanceLead.size());
    const auto hits = std::count_if(seen.begin(), seen.end(), [&](const auto& e) { return mentions_affirmed(report, e); });
    const auto score = static_cast<int>(std::lround(10.0 * static_cast<double>(hits) / static_cast<double>(seen.size())));
    return "Score: " + std::to_string(score);
  }

  // Report generation from what the model notices in the last image.
  if (seen.empty()) return "No acute cardiopulmonary abnormality.";
  std::vector<std::string> sentences;
  for (const auto& e : seen) sentences.push_back("There is " + e + ".");
  return join(sentences, " ");
}

std::string MockChatModel::rewrite(const WireChat& request) const {
  std::string prompt;
  for (const auto& p : request.parts) {
    if (!p.is_image()) prompt += p.value;
  }
  auto between = [&](std::string_view open, std::string_view close) -> std::string {
    const auto a = prompt.find(open);
    if (a == std::string::npos) return {};
    const auto start = a + open.size();
    const auto b = prompt.find(close, start);
    return prompt.substr(start, b == std::string::npos ? std::string::npos : b - start);
  };
  const std::string report = between("-----begin report-----\n", "-----end report-----");
  const std::string questions = between("-----begin questions----\n", "-----end questions-----");

  static const std::regex qa(R"(^Q: Does the patient have (.+)\? A: (Yes|No)$)");
  std::vector<std::string> sentences = split_sentences(report);
  std::vector<std::string> additions;
  std::istringstream lines(questions);
  for (std::string line; std::getline(lines, line);) {
    std::smatch m;
    if (!std::regex_match(line, m, qa)) continue;
    const std::string entity = m[1].str();
    const bool yes = m[2].str() == "Yes";
    std::erase_if(sentences, [&](const std::string& s) {
      const bool mentioned = find_word(s, entity) != std::string_view::npos;
      return mentioned && (yes ? !mentions_affirmed(s, entity) : mentions_affirmed(s, entity));
    });
    if (yes && std::none_of(sentences.begin(), sentences.end(), [&](const auto& s) { return mentions_affirmed(s, entity); })) {
      additions.push_back("There is " + entity + ".");
    }
  }
  sentences.insert(sentences.end(), additions.begin(), additions.end());
  return join(sentences, " ");
}

// --- server -----------------------------------------------------------------

MockServer::MockServer(std::shared_ptr<const MockFixture> fixture, ChatPersonality default_chat)
    : fixture_(std::move(fixture)),
      default_chat_(default_chat),
      server_(std::make_unique<httplib::Server>()),
      embedder_(std::make_unique<MockEmbedder>(*fixture_)),
      ner_(std::make_unique<GazetteerNer>(fixture_->gazetteer)) {
  for (auto p : {ChatPersonality::echo, ChatPersonality::always_no, ChatPersonality::grounded_probe,
                 ChatPersonality::scripted, ChatPersonality::mechanical_rewriter}) {
    models_.emplace(p, std::make_unique<MockChatModel>(p, fixture_));
  }
  install_routes();
}

MockServer::~MockServer() { stop(); }

namespace {

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  auto fail = [&](int status, std::string_view code, const std::string& msg) {
    res.status = status;
    res.set_content(Json{{"error", code}, {"message", msg}}.dump(), "application/json");
  };
  try {
    res.set_content(f().dump(), "application/json");
  } catch (const ContextLengthError& e) {
    fail(413, "context_length_exceeded", e.what());
  } catch (const InvalidInput& e) {
    fail(400, "invalid_input", e.what());
  } catch (const ParseError& e) {
    fail(400, "parse_error", e.what());
  } catch (const nlohmann::json::exception& e) {
    fail(400, "parse_error", e.what());
  } catch (const std::exception& e) {
    fail(500, "internal", e.what());
  }
}

}  // namespace

void MockServer::install_routes() {
  server_->Post(R"(/(?:[a-z-]+/)?embed)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return to_json(embedder_->embed(embed_request_from_json(Json::parse(req.body)))); });
  });
  server_->Post(R"(/(?:[a-z-]+/)?ner)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      return to_json(ner_->ner(NerRequest{Json::parse(req.body).at("text").get<std::string>()}));
    });
  });
  server_->Post(R"(/(?:([a-z-]+)/)?chat)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string name = req.matches.size() > 1 ? req.matches[1].str() : std::string{};
      const auto personality = name.empty() ? default_chat_ : parse_chat_personality(name);
      const auto reply = models_.at(personality)->respond(wire_from_json(Json::parse(req.body)));
      return Json{{"text", reply.text}};
    });
  });
}

int MockServer::start(const std::string& host, int port) {
  host_ = host;
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
  } else {
    port_ = server_->bind_to_port(host, port) ? port : -1;
  }
  if (port_ <= 0) throw TransportError("mock server could not bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void MockServer::run(const std::string& host, int port) {
  host_ = host;
  port_ = port;
  if (!server_->listen(host, port)) throw TransportError("mock server could not listen on " + url());
}

void MockServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string MockServer::url() const { return "http://" + host_ + ":" + std::to_string(port_); }

}  // namespace vrag
