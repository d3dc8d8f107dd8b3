#include <gtest/gtest.h>

#include "support.hpp"
#include "vrag/clients.hpp"
#include "vrag/mock.hpp"

namespace vrag {
namespace {

using testing::TempDir;

std::shared_ptr<MockFixture> fixture() {
  auto f = std::make_shared<MockFixture>();
  f->seed = 5;
  f->dim = 32;
  f->gazetteer = {"atelectasis", "lobe atelectasis", "pleural effusion", "stenosis"};
  f->perceivable = {"atelectasis"};
  f->perception_rate = 1.0;
  return f;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  const Eigen::Map<const Eigen::VectorXf> x(a.data(), static_cast<Eigen::Index>(a.size()));
  const Eigen::Map<const Eigen::VectorXf> y(b.data(), static_cast<Eigen::Index>(b.size()));
  return x.dot(y) / (x.norm() * y.norm());
}

TEST(MockEmbedder, SameBytesSameVector) {
  for (auto p : {EmbedderPersonality::hash, EmbedderPersonality::projection}) {
    auto f = fixture();
    f->embedder = p;
    MockEmbedder e(*f);
    const auto a = e.embed({"a", "bytes-1"});
    const auto b = e.embed({"b", "bytes-1"});
    EXPECT_EQ(a.vector, b.vector);
    EXPECT_EQ(a.vector.size(), 32u);
    EXPECT_EQ(a.id, "a");
    EXPECT_NEAR(cosine(a.vector, a.vector), 1.0, 1e-6);
  }
}

TEST(MockEmbedder, DifferentBytesDifferentVector) {
  for (auto p : {EmbedderPersonality::hash, EmbedderPersonality::projection}) {
    auto f = fixture();
    f->embedder = p;
    MockEmbedder e(*f);
    EXPECT_LT(cosine(e.embed({"a", "bytes-1"}).vector, e.embed({"b", "bytes-2"}).vector), 1.0 - 1e-6);
  }
}

TEST(MockEmbedder, ProjectionKeepsNearDuplicatesClose) {
  MockEmbedder e(*fixture());
  std::string base(200, '\0');
  Rng rng(1);
  for (auto& c : base) c = static_cast<char>(rng.index(256));
  std::string near = base;
  near[10] = static_cast<char>(near[10] ^ 1);
  std::string other(200, '\0');
  for (auto& c : other) c = static_cast<char>(rng.index(256));
  const auto v = e.embed({"a", base}).vector;
  EXPECT_GT(cosine(v, e.embed({"b", near}).vector), 0.99);
  EXPECT_LT(cosine(v, e.embed({"c", other}).vector), 0.5);
}

TEST(MockEmbedder, EmptyBytesRejected) {
  MockEmbedder e(*fixture());
  EXPECT_THROW(e.embed({"a", ""}), InvalidInput);
}

TEST(GazetteerNer, FindsSpan) {
  GazetteerNer ner({"atelectasis"});
  const std::string text = "mild atelectasis noted";
  const auto r = ner.ner({text});
  ASSERT_EQ(r.entities.size(), 1u);
  EXPECT_EQ(r.entities[0], (NerEntity{"atelectasis", 5, 16}));
  EXPECT_NO_THROW(check_entities(r, text));
}

TEST(GazetteerNer, EmptyText) { EXPECT_TRUE(GazetteerNer({"atelectasis"}).ner({""}).entities.empty()); }

TEST(GazetteerNer, LongestMatchWins) {
  const auto r = GazetteerNer({"lobe atelectasis", "atelectasis"}).ner({"right lower lobe atelectasis"});
  ASSERT_EQ(r.entities.size(), 1u);
  EXPECT_EQ(r.entities[0].text, "lobe atelectasis");
  EXPECT_EQ(r.entities[0].start, 12u);
}

TEST(GazetteerNer, WordBoundedAndCaseInsensitive) {
  const auto r = GazetteerNer({"stenosis"}).ner({"Restenosis. Stenosis!"});
  ASSERT_EQ(r.entities.size(), 1u);
  EXPECT_EQ(r.entities[0].text, "Stenosis");
  EXPECT_EQ(r.entities[0].start, 12u);
}

TEST(CheckEntities, RejectsBadSpans) {
  NerResponse r{{{"abc", 0, 10}}};
  EXPECT_THROW(check_entities(r, "abc"), InvalidInput);
  r.entities[0] = {"xyz", 0, 3};
  EXPECT_THROW(check_entities(r, "abc"), InvalidInput);
}

TEST(CheckEmbedding, DimensionAndFinite) {
  EXPECT_THROW(check_embedding({"a", {1, 2}}, 3), DimensionError);
  EXPECT_THROW(check_embedding({"a", {1, NAN, 2}}, 3), InvalidInput);
  EXPECT_NO_THROW(check_embedding({"a", {1, 2, 3}}, 3));
}

WireChat text_chat(std::vector<std::string> texts) {
  WireChat w;
  for (auto& t : texts) w.parts.push_back(ChatPart::text(std::move(t)));
  return w;
}

TEST(MockChat, EchoConcatenatesText) {
  MockChatModel m(ChatPersonality::echo, fixture());
  auto w = text_chat({"a", "b"});
  w.parts.insert(w.parts.begin() + 1, ChatPart::image("IMG"));
  EXPECT_EQ(m.respond(w).text, "ab");
}

TEST(MockChat, AlwaysNo) {
  MockChatModel m(ChatPersonality::always_no, fixture());
  EXPECT_EQ(m.respond(text_chat({"Does the patient have x?"})).text, "No.");
}

TEST(MockChat, GroundedProbeEntityInReference) {
  MockChatModel m(ChatPersonality::grounded_probe, fixture());
  auto w = text_chat({"This is the 1-th similar image and its report for your reference."});
  w.parts.push_back(ChatPart::image("ref"));
  w.parts.push_back(ChatPart::text("Mild pleural effusion on the left."));
  w.parts.push_back(ChatPart::text("Answer ... Does the patient have pleural effusion?"));
  w.parts.push_back(ChatPart::image("query"));
  EXPECT_EQ(m.respond(w).text, "Yes.");
}

TEST(MockChat, GroundedProbeEntityAbsent) {
  MockChatModel m(ChatPersonality::grounded_probe, fixture());
  auto w = text_chat({"The heart is normal.", "Does the patient have pleural effusion?"});
  w.parts.push_back(ChatPart::image("query"));
  EXPECT_EQ(m.respond(w).text, "No.");
}

TEST(MockChat, GroundedProbeRespectsNegation) {
  MockChatModel m(ChatPersonality::grounded_probe, fixture());
  EXPECT_EQ(m.respond(text_chat({"Does the patient have stenosis based on the report: Imaging ruling out stenosis.?"})).text,
            "No.");
  EXPECT_EQ(m.respond(text_chat({"Does the patient have stenosis based on the report: Mild stenosis. No effusion.?"})).text,
            "Yes.");
}

TEST(MockChat, GroundedProbeSeesPerceivableFindingInQuery) {
  auto f = fixture();
  f->visual_findings[sha256_hex("query-bytes")] = {"atelectasis"};
  MockChatModel m(ChatPersonality::grounded_probe, f);
  auto w = text_chat({"Does the patient have atelectasis?"});
  w.parts.push_back(ChatPart::image("query-bytes"));
  EXPECT_EQ(m.respond(w).text, "Yes.");
  w.parts.back().value = "other-bytes";
  EXPECT_EQ(m.respond(w).text, "No.");
}

TEST(MockChat, ContextLimit) {
  auto f = fixture();
  f->max_context_chars = 5;
  MockChatModel m(ChatPersonality::echo, f);
  EXPECT_THROW(m.respond(text_chat({"too long for the limit"})), ContextLengthError);
}

TEST(MockChat, ScriptedByDigest) {
  auto f = fixture();
  const auto w = text_chat({"hello"});
  f->scripted[request_digest(w)] = "scripted reply";
  f->scripted_default = "default";
  MockChatModel m(ChatPersonality::scripted, f);
  EXPECT_EQ(m.respond(w).text, "scripted reply");
  EXPECT_EQ(m.respond(text_chat({"other"})).text, "default");
}

TEST(MockChat, MechanicalRewriterAppliesAnswers) {
  MockChatModel m(ChatPersonality::mechanical_rewriter, fixture());
  const std::string prompt =
      "Consider the following chest X-ray report from a junior radiologist:\n"
      "-----begin report-----\nThere is atelectasis. The heart is normal.\n-----end report-----\n"
      "A senior radiologist has inspected the X-ray image and answered the following questions:\n"
      "-----begin questions----\n"
      "Q: Does the patient have atelectasis? A: No\n"
      "Q: Does the patient have pleural effusion? A: Yes\n"
      "-----end questions-----\n"
      "Please rewrite the junior radiologist's report to reflect the senior radiologist's answers.";
  EXPECT_EQ(m.respond(text_chat({prompt})).text, "The heart is normal. There is pleural effusion.");
}

TEST(MockChat, EmptyRequestRejected) {
  MockChatModel m(ChatPersonality::echo, fixture());
  EXPECT_THROW(m.respond(WireChat{}), InvalidInput);
}

TEST(Negation, SentenceScoped) {
  EXPECT_FALSE(mentions_affirmed("No pleural effusion.", "pleural effusion"));
  EXPECT_TRUE(mentions_affirmed("No pneumothorax. Small pleural effusion.", "pleural effusion"));
  EXPECT_FALSE(mentions_affirmed("Free of consolidation or effusion.", "effusion"));
  EXPECT_TRUE(mentions_affirmed("Known effusion; no change.", "effusion"));
  EXPECT_FALSE(mentions_affirmed("Effusions noted.", "effusion"));
}

TEST(Wire, ChatJsonRoundTrip) {
  ChatRequest r;
  r.parts = {ChatPart::text("hi"), ChatPart::image("images/a.bin")};
  r.max_tokens = 7;
  EXPECT_EQ(chat_request_from_json(to_json(r)), r);
  WireChat w;
  w.parts = {ChatPart::text("hi"), ChatPart::image(std::string("\x00\xff\x10", 3))};
  const auto back = wire_from_json(wire_to_json(w));
  ASSERT_EQ(back.parts.size(), 2u);
  EXPECT_EQ(back.parts[1].value, std::string("\x00\xff\x10", 3));
  EXPECT_EQ(wire_to_json(w)["parts"][1]["value"], base64_encode(std::string("\x00\xff\x10", 3)));
}

TEST(Wire, DigestUsesImageBytes) {
  TempDir dir;
  write_file(dir / "a.bin", "AAAA");
  write_file(dir / "b.bin", "AAAA");
  ImageStore store(dir.path());
  ChatRequest x{{ChatPart::text("q"), ChatPart::image("a.bin")}};
  ChatRequest y{{ChatPart::text("q"), ChatPart::image("b.bin")}};
  EXPECT_EQ(request_digest(x, store), request_digest(y, store));
  ChatRequest z{{ChatPart::text("q2"), ChatPart::image("b.bin")}};
  EXPECT_NE(request_digest(x, store), request_digest(z, store));
}

TEST(ImageStoreTest, MissingImageIsInvalidInput) {
  TempDir dir;
  EXPECT_THROW(ImageStore(dir.path()).read("nope.png"), InvalidInput);
}

// The same fixture served over loopback HTTP answers exactly like the
// in-process backends.
TEST(Loopback, HttpMatchesInProcess) {
  TempDir dir;
  auto f = fixture();
  f->visual_findings[sha256_hex("query-bytes")] = {"atelectasis"};
  write_file(dir / "q.bin", "query-bytes");
  write_file(dir / "r.bin", "reference-bytes");
  ImageStore store(dir.path());

  MockServer server(f, ChatPersonality::grounded_probe);
  server.start();
  HttpEmbedClient embed(server.url(), 32);
  HttpChatClient chat(server.url(), store);
  HttpChatClient echo(server.url() + "/echo", store);
  HttpNerClient ner(server.url());

  MockEmbedder local_embed(*f);
  LocalChatClient local_chat(std::make_shared<MockChatModel>(ChatPersonality::grounded_probe, f), store);
  LocalChatClient local_echo(std::make_shared<MockChatModel>(ChatPersonality::echo, f), store);
  GazetteerNer local_ner(f->gazetteer);

  EXPECT_EQ(embed.embed({"q", "query-bytes"}).vector, local_embed.embed({"q", "query-bytes"}).vector);
  const ChatRequest probe{{ChatPart::text("Here: mild stenosis."), ChatPart::image("r.bin"),
                           ChatPart::text("Does the patient have atelectasis?"), ChatPart::image("q.bin")}};
  EXPECT_EQ(chat.chat(probe).text, local_chat.chat(probe).text);
  EXPECT_EQ(chat.chat(probe).text, "Yes.");
  EXPECT_EQ(echo.chat(probe).text, local_echo.chat(probe).text);
  const std::string text = "Right lower lobe atelectasis and pleural effusion.";
  EXPECT_EQ(ner.ner({text}).entities, local_ner.ner({text}).entities);
  server.stop();
}

TEST(Loopback, ClientErrorsAreTyped) {
  auto f = fixture();
  f->max_context_chars = 3;
  MockServer server(f, ChatPersonality::echo);
  server.start();
  RetryPolicy fast;
  fast.base_delay = std::chrono::milliseconds(1);
  HttpChatClient chat(server.url(), ImageStore{}, fast);
  EXPECT_THROW(chat.chat({{ChatPart::text("far too long")}}), ContextLengthError);
  HttpEmbedClient embed(server.url(), 16, fast);  // server produces 32
  EXPECT_THROW(embed.embed({"a", "bytes"}), DimensionError);
  server.stop();
}

TEST(Loopback, UnreachableServerExhaustsRetries) {
  RetryPolicy fast;
  fast.max_attempts = 2;
  fast.base_delay = std::chrono::milliseconds(1);
  fast.timeout = std::chrono::milliseconds(200);
  HttpNerClient ner("http://127.0.0.1:1", fast);
  EXPECT_THROW(ner.ner({"text"}), TransportError);
}

TEST(FixtureJson, RoundTrip) {
  auto f = fixture();
  f->visual_findings["abc"] = {"atelectasis"};
  f->scripted["d"] = "x";
  const auto back = MockFixture::from_json(f->to_json());
  EXPECT_EQ(back.to_json(), f->to_json());
}

}  // namespace
}  // namespace vrag
