#include "vrag/rag.hpp"

#include <algorithm>
#include <cctype>

#include "vrag/error.hpp"

namespace vrag {

std::string_view to_string(RetrievalMode m) {
  switch (m) {
    case RetrievalMode::none: return "none";
    case RetrievalMode::image_only: return "image_only";
    case RetrievalMode::text_only: return "text_only";
    case RetrievalMode::rerank_text: return "rerank_text";
    case RetrievalMode::vrag: return "vrag";
  }
  return "?";
}

RetrievalMode parse_retrieval_mode(std::string_view s) {
  if (s == "none") return RetrievalMode::none;
  if (s == "image" || s == "image_only") return RetrievalMode::image_only;
  if (s == "text" || s == "text_only") return RetrievalMode::text_only;
  if (s == "rar" || s == "rerank_text") return RetrievalMode::rerank_text;
  if (s == "vrag") return RetrievalMode::vrag;
  throw InvalidInput("unknown retrieval mode: " + std::string(s));
}

void RetrievalConfig::validate() const {
  if (mode != RetrievalMode::none && k == 0) throw InvalidInput("retrieval k must be at least 1");
}

std::string_view to_string(Answer a) { return a == Answer::yes ? "yes" : "no"; }
std::string_view capitalized(Answer a) { return a == Answer::yes ? "Yes" : "No"; }

Answer parse_yes_no(std::string_view text) {
  auto is_alpha = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; };
  const auto begin = std::find_if(text.begin(), text.end(), is_alpha);
  const auto end = std::find_if_not(begin, text.end(), is_alpha);
  return to_lower(std::string_view(begin, end)) == "yes" ? Answer::yes : Answer::no;
}

std::string probe_question(std::string_view entity) { return "Does the patient have " + std::string(entity) + "?"; }

// --- retrieval --------------------------------------------------------------

Retriever::Retriever(std::shared_ptr<const Memory> memory, const std::vector<CorpusRecord>& records,
                     std::shared_ptr<EmbedClient> embedder, ImageStore images)
    : memory_(std::move(memory)), embedder_(std::move(embedder)), images_(std::move(images)) {
  if (!memory_->frozen()) throw StateError("retrieval requires a frozen memory");
  for (const auto& r : records) records_.emplace(r.id, r);
}

Eigen::VectorXf Retriever::embed(const Query& query) const {
  {
    std::lock_guard lock(cache_mu_);
    if (auto it = cache_.find(query.image_ref); it != cache_.end()) return it->second;
  }
  const auto resp = embedder_->embed({query.id, images_.read(query.image_ref)});
  check_embedding(resp, static_cast<std::size_t>(memory_->dim()));
  Eigen::VectorXf v = Eigen::Map<const Eigen::VectorXf>(resp.vector.data(), memory_->dim());
  std::lock_guard lock(cache_mu_);
  cache_.emplace(query.image_ref, v);
  return v;
}

std::vector<Reference> Retriever::retrieve(const Query& query, const RetrievalConfig& config) const {
  config.validate();
  if (config.mode == RetrievalMode::none) return {};
  const bool self_present = !query.id.empty() && memory_->contains(query.id);
  const auto hits = memory_->query(embed(query), config.k + (self_present ? 1 : 0), config.search);

  std::vector<Reference> out;
  for (const auto& n : hits) {
    if (n.id == query.id || out.size() == config.k) continue;
    const auto it = records_.find(n.id);
    if (it == records_.end()) throw StateError("memory id '" + n.id + "' has no corpus record");
    out.push_back({out.size() + 1, n.id, it->second.image, it->second.text, n.distance});
  }
  return out;
}

Memory build_memory(const std::vector<CorpusRecord>& records, EmbedClient& embedder, const ImageStore& images,
                    std::size_t dim, const HnswParams& params, std::size_t workers) {
  std::vector<EmbedResponse> vectors(records.size());
  parallel_for(records.size(), workers, [&](std::size_t i) {
    vectors[i] = embedder.embed({records[i].id, images.read(records[i].image)});
    check_embedding(vectors[i], dim);
  });
  Memory memory(static_cast<Eigen::Index>(dim), params);
  for (std::size_t i = 0; i < records.size(); ++i) {
    memory.insert(records[i].id, Eigen::Map<const Eigen::VectorXf>(vectors[i].vector.data(),
                                                                   static_cast<Eigen::Index>(dim)));
  }
  memory.freeze();
  return memory;
}

// --- prompts ----------------------------------------------------------------

namespace {

void check_inputs(const std::vector<Reference>& refs, std::string_view question, bool need_refs) {
  if (trim(question).empty()) throw InvalidInput("question is empty");
  if (need_refs && refs.empty()) throw InvalidInput("prompt needs at least one reference");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].rank != i + 1) throw InvalidInput("reference ranks must be contiguous from 1");
  }
}

std::string nth(std::size_t i) { return std::to_string(i) + "-th"; }

ChatRequest with_references(const std::vector<Reference>& refs, std::string_view question,
                            const std::string& query_image, bool images, bool texts) {
  check_inputs(refs, question, true);
  ChatRequest req;
  for (const auto& r : refs) {
    // Text-only prompts keep the full wording so they differ from V-RAG only by the image parts.
    req.parts.push_back(ChatPart::text(texts ? "This is the " + nth(r.rank) +
                                                   " similar image and its report for your reference."
                                             : "This is the " + nth(r.rank) + " similar image for your reference."));
    if (images) req.parts.push_back(ChatPart::image(r.image_ref));
    if (texts) req.parts.push_back(ChatPart::text(r.text));
  }
  const std::string_view clause =
      texts ? "the last query image and the reference images and reports" : "the last query image and the reference images";
  req.parts.push_back(ChatPart::text(std::string(kYesNoDirective) + " According to " + std::string(clause) + ", " +
                                     std::string(question)));
  req.parts.push_back(ChatPart::image(query_image));
  return req;
}

}  // namespace

ChatRequest assemble_vrag_prompt(const std::vector<Reference>& refs, std::string_view question,
                                 const std::string& query_image) {
  return with_references(refs, question, query_image, true, true);
}

ChatRequest assemble_text_rag_prompt(const std::vector<Reference>& refs, std::string_view question,
                                     const std::string& query_image) {
  return with_references(refs, question, query_image, false, true);
}

ChatRequest assemble_image_prompt(const std::vector<Reference>& refs, std::string_view question,
                                  const std::string& query_image) {
  return with_references(refs, question, query_image, true, false);
}

ChatRequest assemble_baseline_prompt(std::string_view question, const std::string& query_image) {
  check_inputs({}, question, false);
  ChatRequest req;
  req.parts.push_back(ChatPart::text(std::string(kYesNoDirective) + " According to the query image, " +
                                     std::string(question)));
  req.parts.push_back(ChatPart::image(query_image));
  return req;
}

ChatRequest assemble_prompt(RetrievalMode mode, const std::vector<Reference>& refs, std::string_view question,
                            const std::string& query_image) {
  switch (mode) {
    case RetrievalMode::none: return assemble_baseline_prompt(question, query_image);
    case RetrievalMode::image_only: return assemble_image_prompt(refs, question, query_image);
    case RetrievalMode::text_only:
    case RetrievalMode::rerank_text: return assemble_text_rag_prompt(refs, question, query_image);
    case RetrievalMode::vrag: return assemble_vrag_prompt(refs, question, query_image);
  }
  throw InvalidInput("unknown retrieval mode");
}

ChatRequest assemble_relevance_prompt(const Reference& ref, const std::string& query_image) {
  ChatRequest req;
  req.parts.push_back(
      ChatPart::text("On a scale 0-10, how relevant is this report to the query image? Report: " + ref.text));
  req.parts.push_back(ChatPart::image(query_image));
  return req;
}

int parse_relevance(std::string_view text) {
  const auto d = std::find_if(text.begin(), text.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
  if (d == text.end()) return 0;
  int value = 0;
  for (auto it = d; it != text.end() && std::isdigit(static_cast<unsigned char>(*it)) && value <= 10; ++it) {
    value = value * 10 + (*it - '0');
  }
  return std::clamp(value, 0, 10);
}

RerankResult rerank_references(const std::vector<Reference>& refs, const std::string& query_image, ChatClient& mllm) {
  RerankResult out;
  if (refs.size() < 2) {
    out.references = refs;
    return out;
  }
  std::vector<std::optional<int>> scores(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    try {
      scores[i] = parse_relevance(mllm.chat(assemble_relevance_prompt(refs[i], query_image)).text);
    } catch (const Error& e) {
      out.warnings.push_back("relevance scoring failed for '" + refs[i].id + "': " + e.what());
    }
  }
  // Scored references are sorted among the slots they occupy; failed ones stay put.
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (scores[i]) slots.push_back(i);
  }
  auto order = slots;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return *scores[a] > *scores[b]; });
  out.references = refs;
  for (std::size_t s = 0; s < slots.size(); ++s) out.references[slots[s]] = refs[order[s]];
  for (std::size_t i = 0; i < out.references.size(); ++i) out.references[i].rank = i + 1;
  return out;
}

ProbeAnswer answer_probe(const Query& query, std::string_view question, const Retriever& retriever, ChatClient& mllm,
                         const RetrievalConfig& config) {
  config.validate();
  ProbeAnswer out;
  std::vector<Reference> refs;
  if (config.mode != RetrievalMode::none) {
    refs = retriever.retrieve(query, config);
    if (config.mode == RetrievalMode::rerank_text) {
      auto rr = rerank_references(refs, query.image_ref, mllm);
      refs = std::move(rr.references);
      out.warnings = std::move(rr.warnings);
    }
  }
  for (const auto& r : refs) out.reference_ids.push_back(r.id);

  // With an empty memory (or only the query itself) there is nothing to add.
  const auto request = refs.empty() ? assemble_baseline_prompt(question, query.image_ref)
                                    : assemble_prompt(config.mode, refs, question, query.image_ref);
  out.prompt_digest = request_digest(request, retriever.images());
  out.raw = mllm.chat(request).text;
  out.parsed = parse_yes_no(out.raw);
  return out;
}

Json to_json(const Transcript& t) {
  Json j;
  j["item_id"] = t.item_id;
  j["mode"] = to_string(t.mode);
  j["prompt_digest"] = t.prompt_digest;
  j["raw"] = t.raw;
  j["parsed"] = to_string(t.parsed);
  j["references"] = t.references;
  if (!t.error.empty()) j["error"] = t.error;
  return j;
}

Transcript transcript_from_json(const Json& j) {
  try {
    Transcript t;
    t.item_id = j.at("item_id").get<std::string>();
    t.mode = parse_retrieval_mode(j.at("mode").get<std::string>());
    t.prompt_digest = j.value("prompt_digest", std::string{});
    t.raw = j.value("raw", std::string{});
    t.parsed = j.at("parsed").get<std::string>() == "yes" ? Answer::yes : Answer::no;
    t.references = j.value("references", std::vector<std::string>{});
    t.error = j.value("error", std::string{});
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad transcript: ") + e.what());
  }
}

}  // namespace vrag
