#pragma once

// Report correction: probe every candidate entity with retrieval-augmented
// questions, then have a text LLM revise the report to match the answers.

#include <set>
#include <string>
#include <vector>

#include "vrag/probing.hpp"
#include "vrag/rag.hpp"

namespace vrag {

struct QaPair {
  std::string entity;
  std::string question;
  Answer answer = Answer::no;

  friend bool operator==(const QaPair&, const QaPair&) = default;
};

struct EntityF1 {
  double precision = 0, recall = 0, f1 = 0;
};

Json to_json(const EntityF1& f);

struct RewriteCase {
  std::string query_id;
  std::string image_ref;
  std::string original_report;
  std::vector<QaPair> qa_pairs;  // entity order
  std::string revised_report;
  std::string reference_report;
  std::vector<std::string> reference_ids;
  bool failed = false;
  std::string error;
  EntityF1 original_f1;
  EntityF1 revised_f1;
};

Json to_json(const RewriteCase& c);

// Canonical entities NER finds in the report's non-excluded sections.
std::set<std::string> report_entities(std::string_view report, NerClient& ner, const CanonicalMap& canonical,
                                      const std::set<std::string>& excluded = default_excluded_sections());

// Union of the generated report's and every reference report's canonical
// entities, in lexicographic order.
std::vector<std::string> collect_candidates(std::string_view generated_report, const std::vector<Reference>& refs,
                                            NerClient& ner, const CanonicalMap& canonical,
                                            const std::set<std::string>& excluded = default_excluded_sections());

std::vector<QaPair> probe_candidates(const Query& query, const std::vector<std::string>& candidates,
                                     const Retriever& retriever, ChatClient& mllm, const RetrievalConfig& config);

std::string assemble_rewrite_prompt(std::string_view original_report, const std::vector<QaPair>& qa_pairs);

// Returns the LLM reply verbatim.
std::string rewrite_report(std::string_view original_report, const std::vector<QaPair>& qa_pairs, ChatClient& llm);

EntityF1 entity_f1(std::string_view candidate_report, std::string_view reference_report, NerClient& ner,
                   const CanonicalMap& canonical, const std::set<std::string>& excluded = default_excluded_sections());
EntityF1 entity_f1(const std::set<std::string>& candidate, const std::set<std::string>& reference);

ChatRequest findings_request(const std::string& query_image, std::string_view prompt = kDefaultFindingsPrompt);
std::string generate_initial_report(const std::string& query_image, ChatClient& mllm,
                                    std::string_view prompt = kDefaultFindingsPrompt);

struct RewriteOptions {
  RetrievalConfig retrieval;
  std::set<std::string> excluded = default_excluded_sections();
};

// Runs one case end to end. `original_report` replaces generation when given.
// Failures mark the case failed and keep the original report.
RewriteCase run_rewrite_case(const CorpusRecord& query, const Retriever& retriever, const Clients& clients,
                             const CanonicalMap& canonical, const RewriteOptions& options,
                             const std::optional<std::string>& original_report = std::nullopt);

}  // namespace vrag
