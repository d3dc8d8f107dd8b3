#pragma once

// Retrieval-mode dispatch and prompt assembly for retrieval-augmented
// yes/no probing of a multimodal model.

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "vrag/clients.hpp"
#include "vrag/corpus.hpp"
#include "vrag/memory.hpp"

namespace vrag {

enum class RetrievalMode { none, image_only, text_only, rerank_text, vrag };

std::string_view to_string(RetrievalMode m);
// Accepts the enum names and the short CLI names none|image|text|rar|vrag.
RetrievalMode parse_retrieval_mode(std::string_view s);

struct RetrievalConfig {
  RetrievalMode mode = RetrievalMode::vrag;
  std::size_t k = 5;
  SearchMode search = SearchMode::approximate;

  void validate() const;
};

struct Reference {
  std::size_t rank = 0;  // 1-based
  std::string id;
  std::string image_ref;
  std::string text;
  double distance = 0.0;

  friend bool operator==(const Reference&, const Reference&) = default;
};

// The image being asked about. `id` is its corpus id when it has one, used
// to keep the image out of its own reference list.
struct Query {
  std::string id;
  std::string image_ref;
};

enum class Answer { no, yes };
std::string_view to_string(Answer a);
std::string_view capitalized(Answer a);  // "Yes" / "No"

// First alphabetic word, case-insensitive: "yes" is yes, everything else no.
Answer parse_yes_no(std::string_view text);

inline constexpr std::string_view kYesNoDirective =
    "Answer the question with only the word yes or no. Do not provide explanations.";

inline constexpr std::string_view kDefaultFindingsPrompt = "What are the findings of this image?";

std::string probe_question(std::string_view entity);

// Embeds query images and looks up references in a frozen memory whose ids
// are corpus record ids.
class Retriever {
 public:
  Retriever(std::shared_ptr<const Memory> memory, const std::vector<CorpusRecord>& records,
            std::shared_ptr<EmbedClient> embedder, ImageStore images);

  Eigen::VectorXf embed(const Query& query) const;
  std::vector<Reference> retrieve(const Query& query, const RetrievalConfig& config) const;

  const Memory& memory() const noexcept { return *memory_; }
  const ImageStore& images() const noexcept { return images_; }

 private:
  std::shared_ptr<const Memory> memory_;
  std::unordered_map<std::string, CorpusRecord> records_;
  std::shared_ptr<EmbedClient> embedder_;
  ImageStore images_;
  mutable std::mutex cache_mu_;
  mutable std::unordered_map<std::string, Eigen::VectorXf> cache_;
};

// Embeds every record image and inserts it into a fresh memory, then freezes it.
Memory build_memory(const std::vector<CorpusRecord>& records, EmbedClient& embedder, const ImageStore& images,
                    std::size_t dim, const HnswParams& params, std::size_t workers = 1);

ChatRequest assemble_vrag_prompt(const std::vector<Reference>& refs, std::string_view question,
                                 const std::string& query_image);
ChatRequest assemble_text_rag_prompt(const std::vector<Reference>& refs, std::string_view question,
                                     const std::string& query_image);
ChatRequest assemble_image_prompt(const std::vector<Reference>& refs, std::string_view question,
                                  const std::string& query_image);
ChatRequest assemble_baseline_prompt(std::string_view question, const std::string& query_image);
ChatRequest assemble_prompt(RetrievalMode mode, const std::vector<Reference>& refs, std::string_view question,
                            const std::string& query_image);

ChatRequest assemble_relevance_prompt(const Reference& ref, const std::string& query_image);
// First integer in the reply clamped to [0, 10]; 0 when there is none.
int parse_relevance(std::string_view text);

struct RerankResult {
  std::vector<Reference> references;
  std::vector<std::string> warnings;
};

// Orders references by MLLM relevance score, highest first, ties by rank.
// A reference whose scoring call fails keeps its position.
RerankResult rerank_references(const std::vector<Reference>& refs, const std::string& query_image, ChatClient& mllm);

struct ProbeAnswer {
  Answer parsed = Answer::no;
  std::string raw;
  std::vector<std::string> reference_ids;
  std::string prompt_digest;
  std::vector<std::string> warnings;
};

ProbeAnswer answer_probe(const Query& query, std::string_view question, const Retriever& retriever, ChatClient& mllm,
                         const RetrievalConfig& config);

struct Transcript {
  std::string item_id;
  RetrievalMode mode = RetrievalMode::vrag;
  std::string prompt_digest;
  std::string raw;
  Answer parsed = Answer::no;
  std::vector<std::string> references;
  std::string error;  // non-empty when the probe could not be answered
};

Json to_json(const Transcript& t);
Transcript transcript_from_json(const Json& j);

}  // namespace vrag
