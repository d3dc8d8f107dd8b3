#include "vrag/rewrite.hpp"

#include <algorithm>

#include "vrag/error.hpp"

namespace vrag {

Json to_json(const EntityF1& f) { return {{"precision", f.precision}, {"recall", f.recall}, {"f1", f.f1}}; }

Json to_json(const RewriteCase& c) {
  Json qa = Json::array();
  for (const auto& p : c.qa_pairs) qa.push_back({{"question", p.question}, {"answer", capitalized(p.answer)}});
  Json j;
  j["query_id"] = c.query_id;
  j["image"] = c.image_ref;
  j["original_report"] = c.original_report;
  j["qa_pairs"] = std::move(qa);
  j["revised_report"] = c.revised_report;
  j["reference_report"] = c.reference_report;
  j["references"] = c.reference_ids;
  j["failed"] = c.failed;
  if (!c.error.empty()) j["error"] = c.error;
  j["original_entity_f1"] = to_json(c.original_f1);
  j["revised_entity_f1"] = to_json(c.revised_f1);
  return j;
}

std::set<std::string> report_entities(std::string_view report, NerClient& ner, const CanonicalMap& canonical,
                                      const std::set<std::string>& excluded) {
  std::set<std::string> out;
  for (const auto& [name, body] : section_report(report)) {
    if (excluded.contains(name) || trim(body).empty()) continue;
    const auto resp = ner.ner({body});
    check_entities(resp, body);
    for (const auto& e : resp.entities) {
      if (auto c = canonical.canonical(e.text); !c.empty()) out.insert(std::move(c));
    }
  }
  return out;
}

std::vector<std::string> collect_candidates(std::string_view generated_report, const std::vector<Reference>& refs,
                                            NerClient& ner, const CanonicalMap& canonical,
                                            const std::set<std::string>& excluded) {
  auto all = report_entities(generated_report, ner, canonical, excluded);
  for (const auto& r : refs) all.merge(report_entities(r.text, ner, canonical, excluded));
  return {all.begin(), all.end()};
}

std::vector<QaPair> probe_candidates(const Query& query, const std::vector<std::string>& candidates,
                                     const Retriever& retriever, ChatClient& mllm, const RetrievalConfig& config) {
  auto sorted = candidates;
  std::sort(sorted.begin(), sorted.end());
  std::vector<QaPair> out;
  for (const auto& e : sorted) {
    auto q = probe_question(e);
    const auto a = answer_probe(query, q, retriever, mllm, config);
    out.push_back({e, std::move(q), a.parsed});
  }
  return out;
}

std::string assemble_rewrite_prompt(std::string_view original_report, const std::vector<QaPair>& qa_pairs) {
  std::string out =
      "Consider the following chest X-ray report from a junior radiologist:\n"
      "-----begin report-----\n";
  out += original_report;
  out +=
      "\n-----end report-----\n"
      "A senior radiologist has inspected the X-ray image and answered the following questions:\n"
      "-----begin questions----\n";
  for (const auto& p : qa_pairs) out += "Q: " + p.question + " A: " + std::string(capitalized(p.answer)) + "\n";
  out +=
      "-----end questions-----\n"
      "Please rewrite the junior radiologist's report to reflect the senior radiologist's answers.";
  return out;
}

std::string rewrite_report(std::string_view original_report, const std::vector<QaPair>& qa_pairs, ChatClient& llm) {
  ChatRequest req;
  req.parts.push_back(ChatPart::text(assemble_rewrite_prompt(original_report, qa_pairs)));
  return llm.chat(req).text;
}

EntityF1 entity_f1(const std::set<std::string>& candidate, const std::set<std::string>& reference) {
  const auto common = static_cast<std::size_t>(std::count_if(
      candidate.begin(), candidate.end(), [&](const std::string& e) { return reference.contains(e); }));
  // Same conventions as probe metrics: tp = shared, fp = candidate only, fn = reference only.
  const auto m = ProbeMetrics::from_counts(common, candidate.size() - common, reference.size() - common, 0);
  return {m.precision, m.recall, m.f1};
}

EntityF1 entity_f1(std::string_view candidate_report, std::string_view reference_report, NerClient& ner,
                   const CanonicalMap& canonical, const std::set<std::string>& excluded) {
  return entity_f1(report_entities(candidate_report, ner, canonical, excluded),
                   report_entities(reference_report, ner, canonical, excluded));
}

ChatRequest findings_request(const std::string& query_image, std::string_view prompt) {
  ChatRequest req;
  req.parts.push_back(ChatPart::text(std::string(prompt)));
  req.parts.push_back(ChatPart::image(query_image));
  return req;
}

std::string generate_initial_report(const std::string& query_image, ChatClient& mllm, std::string_view prompt) {
  return mllm.chat(findings_request(query_image, prompt)).text;
}

RewriteCase run_rewrite_case(const CorpusRecord& query, const Retriever& retriever, const Clients& clients,
                             const CanonicalMap& canonical, const RewriteOptions& options,
                             const std::optional<std::string>& original_report) {
  RewriteCase c;
  c.query_id = query.id;
  c.image_ref = query.image;
  c.reference_report = query.text;
  try {
    c.original_report = original_report ? *original_report : generate_initial_report(query.image, *clients.mllm);
  } catch (const Error& e) {
    c.failed = true;
    c.error = std::string("report generation failed: ") + e.what();
    return c;
  }
  c.revised_report = c.original_report;
  try {
    const Query q{query.id, query.image};
    std::vector<Reference> refs;
    if (options.retrieval.mode != RetrievalMode::none) refs = retriever.retrieve(q, options.retrieval);
    for (const auto& r : refs) c.reference_ids.push_back(r.id);
    const auto candidates = collect_candidates(c.original_report, refs, *clients.ner, canonical, options.excluded);
    c.qa_pairs = probe_candidates(q, candidates, retriever, *clients.mllm, options.retrieval);
    if (!c.qa_pairs.empty()) c.revised_report = rewrite_report(c.original_report, c.qa_pairs, *clients.rewriter);
  } catch (const Error& e) {
    c.failed = true;
    c.error = e.what();
    c.revised_report = c.original_report;
  }
  try {
    c.original_f1 = entity_f1(c.original_report, c.reference_report, *clients.ner, canonical, options.excluded);
    c.revised_f1 = entity_f1(c.revised_report, c.reference_report, *clients.ner, canonical, options.excluded);
  } catch (const Error& e) {
    c.failed = true;
    c.error = std::string("scoring failed: ") + e.what();
  }
  return c;
}

}  // namespace vrag
