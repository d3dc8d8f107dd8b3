#pragma once

// Entity-probing VQA datasets: NER extraction, canonical entities, LLM-grounded
// gold answers, frequency strata, rare-entity balancing and scoring.

#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "vrag/clients.hpp"
#include "vrag/corpus.hpp"
#include "vrag/rag.hpp"

namespace vrag {

inline const std::set<std::string>& default_excluded_sections() {
  static const std::set<std::string> s{"INDICATION"};
  return s;
}

struct EntityOccurrence {
  std::string surface;
  std::string record_id;
  std::string section;
  std::size_t start = 0;  // byte offsets into the section body
  std::size_t end = 0;
};

// NER over every section not in `excluded`.
std::vector<EntityOccurrence> extract_entities(const std::vector<CorpusRecord>& records, NerClient& ner,
                                               const std::set<std::string>& excluded = default_excluded_sections(),
                                               std::size_t workers = 1);

// Lowercase with runs of whitespace collapsed to one space.
std::string normalize_entity(std::string_view e);

// Maps an entity to its shortest whitespace-token suffix that occurs in the
// training vocabulary, or to itself when none does.
class CanonicalMap {
 public:
  CanonicalMap() = default;
  explicit CanonicalMap(std::set<std::string> vocabulary);

  std::string canonical(std::string_view entity) const;
  const std::set<std::string>& vocabulary() const noexcept { return vocabulary_; }

 private:
  std::set<std::string> vocabulary_;
};

CanonicalMap build_canonical_map(const std::vector<std::string>& train_entities);

std::string grounding_prompt(std::string_view report, std::string_view entity);

// Yes/no gold answers from a text LLM reading a report, cached by
// (report digest, entity).
class Grounder {
 public:
  explicit Grounder(std::shared_ptr<ChatClient> llm) : llm_(std::move(llm)) {}

  Answer ground(std::string_view report, std::string_view entity);
  std::size_t backend_calls() const;

 private:
  std::shared_ptr<ChatClient> llm_;
  mutable std::mutex mu_;
  std::map<std::pair<std::string, std::string>, Answer> cache_;
  std::size_t calls_ = 0;
};

enum class Provenance { grounded, balanced_negative };
std::string_view to_string(Provenance p);

struct ProbeItem {
  std::string item_id;  // "<record id>::<entity>"
  std::string record_id;
  std::string image_ref;
  std::string entity;
  Answer gold = Answer::no;
  Provenance provenance = Provenance::grounded;

  friend bool operator==(const ProbeItem&, const ProbeItem&) = default;
};

std::string make_item_id(std::string_view record_id, std::string_view entity);
Json to_json(const ProbeItem& item);
ProbeItem probe_item_from_json(const Json& j, std::size_t line = 0);
std::vector<ProbeItem> load_probe_items(const std::filesystem::path& path);
std::string format_probe_items(const std::vector<ProbeItem>& items);

struct ProbeSet {
  std::vector<ProbeItem> items;  // sorted by item_id
  std::vector<std::string> warnings;
};

// One item per (record, canonical entity); gold answers grounded on the
// record's report with excluded sections removed.
ProbeSet build_probe_set(const std::vector<CorpusRecord>& records, const std::vector<EntityOccurrence>& occurrences,
                         const CanonicalMap& canonical, Grounder& grounder,
                         const std::set<std::string>& excluded = default_excluded_sections(), std::size_t workers = 1);

// Number of records mentioning each canonical entity.
std::map<std::string, std::size_t> entity_frequency(const std::vector<EntityOccurrence>& occurrences,
                                                    const CanonicalMap& canonical);

struct Strata {
  std::set<std::string> frequent_entities;
  std::vector<ProbeItem> frequent;
  std::vector<ProbeItem> rare;
};

// The top_n item entities by training frequency (ties by entity) are frequent.
Strata stratify(const std::vector<ProbeItem>& items, const std::map<std::string, std::size_t>& train_frequency,
                std::size_t top_n = 50);

struct BalanceOptions {
  std::uint64_t seed = 0;
  std::size_t attempts_per_negative = 20;
  std::set<std::string> excluded = default_excluded_sections();
};

struct BalanceResult {
  std::vector<ProbeItem> items;  // sorted by item_id
  std::vector<std::string> unbalanceable;
  std::vector<std::string> warnings;
};

// Adds verified negatives from `pool` until each entity has as many negatives
// as positives. Entities that run out of attempts keep their original items
// and are reported.
BalanceResult balance_rare(const std::vector<ProbeItem>& items, const std::vector<CorpusRecord>& pool,
                           Grounder& grounder, const BalanceOptions& options = {});

struct ProbeMetrics {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0, recall = 0, f1 = 0;

  static ProbeMetrics from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn);
};

Json to_json(const ProbeMetrics& m);

ProbeMetrics score(const std::vector<ProbeItem>& items, const std::map<std::string, Answer>& predictions);

// Uniform sample without replacement, returned in item_id order.
std::vector<ProbeItem> sample_items(const std::vector<ProbeItem>& items, std::size_t n, std::uint64_t seed);

// Asks the MLLM every item's question; failures become transcripts with an
// error. Output is in item order.
std::vector<Transcript> run_probes(const std::vector<ProbeItem>& items, const Retriever& retriever, ChatClient& mllm,
                                   const RetrievalConfig& config, std::size_t workers = 1);

std::map<std::string, Answer> predictions_of(const std::vector<Transcript>& transcripts);

}  // namespace vrag
