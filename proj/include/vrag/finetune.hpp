#pragma once

// Multi-image instruction-tuning datasets: image position, image focus and
// retrieval-augmented probing records.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vrag/corpus.hpp"
#include "vrag/probing.hpp"
#include "vrag/rag.hpp"

namespace vrag {

enum class FinetuneTask { position, focus, vrag };
std::string_view to_string(FinetuneTask t);
FinetuneTask parse_finetune_task(std::string_view s);

inline constexpr std::string_view kImageToken = "<image>";

struct FinetuneRecord {
  FinetuneTask task = FinetuneTask::position;
  std::vector<std::string> images;  // for vrag: neighbours in rank order, then the query
  std::string prompt;               // with one image placeholder per image
  std::string answer;
  std::optional<std::size_t> j;          // 1-based focus index (position, focus)
  std::vector<std::string> source_ids;   // parallel to images
  std::string entity;                    // vrag only
};

Json to_json(const FinetuneRecord& r);
FinetuneRecord finetune_record_from_json(const Json& j);
std::string format_finetune_records(const std::vector<FinetuneRecord>& records);

struct DistinctnessPredicate {
  enum class Mode { off, label_set };
  Mode mode = Mode::off;
  std::map<std::string, std::set<std::string>> labels;

  // Sidecar file: JSON object mapping record id to a list of labels.
  static DistinctnessPredicate load(const std::filesystem::path& path);
  // Throws InvalidInput when label_set mode lacks labels for a record.
  void require_labels(const std::vector<CorpusRecord>& records) const;
  // True when source j (1-based) has a label absent from every other source.
  bool satisfied(const std::vector<std::string>& ids, std::size_t j) const;
};

struct SamplingOptions {
  std::size_t count = 6000;
  std::size_t k_min = 1;
  std::size_t k_max = 5;
  std::uint64_t seed = 0;
  std::size_t attempts = 20;  // resamples per record under the predicate
  std::string original_prompt = std::string(kDefaultFindingsPrompt);

  void validate() const;
};

struct FinetuneResult {
  std::vector<FinetuneRecord> records;
  std::vector<std::string> warnings;
};

std::string position_prompt(std::size_t k, std::string_view answer_text, std::string_view original_prompt);
std::string focus_prompt(std::size_t j, std::string_view original_prompt);
std::string vrag_prompt(const std::vector<std::string>& reference_reports, std::string_view question);
std::string image_placeholders(std::size_t n);

FinetuneResult make_position(const std::vector<CorpusRecord>& records, const SamplingOptions& options,
                             const DistinctnessPredicate& predicate = {});
FinetuneResult make_focus(const std::vector<CorpusRecord>& records, const SamplingOptions& options,
                          const DistinctnessPredicate& predicate = {});

// One record per (query, entity) pair drawn in seeded order until `count`
// records exist. The answer is the grounded gold for the query's own report.
FinetuneResult make_vrag(const std::vector<CorpusRecord>& queries,
                         const std::map<std::string, std::vector<std::string>>& entities_by_record,
                         const Retriever& retriever, Grounder& grounder, const SamplingOptions& options,
                         const std::set<std::string>& excluded = default_excluded_sections());

// Empty when the record satisfies every invariant, otherwise the violations
// found. With `corpus`, position and focus answers are checked against the
// j-th source's report.
std::vector<std::string> check_record(const FinetuneRecord& r, const SamplingOptions& options,
                                      const std::map<std::string, CorpusRecord>* corpus = nullptr);

}  // namespace vrag
