#include "vrag/finetune.hpp"

#include <algorithm>

#include "vrag/error.hpp"

namespace vrag {

std::string_view to_string(FinetuneTask t) {
  switch (t) {
    case FinetuneTask::position: return "position";
    case FinetuneTask::focus: return "focus";
    case FinetuneTask::vrag: return "vrag";
  }
  return "?";
}

FinetuneTask parse_finetune_task(std::string_view s) {
  if (s == "position") return FinetuneTask::position;
  if (s == "focus") return FinetuneTask::focus;
  if (s == "vrag") return FinetuneTask::vrag;
  throw InvalidInput("unknown fine-tune task: " + std::string(s));
}

Json to_json(const FinetuneRecord& r) {
  Json j;
  j["task"] = to_string(r.task);
  j["images"] = r.images;
  Json human{{"from", "human"}, {"value", r.prompt}};
  Json assistant{{"from", "assistant"}, {"value", r.answer}};
  j["conversations"] = Json::array({std::move(human), std::move(assistant)});
  Json meta;
  if (r.j) meta["j"] = *r.j;
  meta["source_ids"] = r.source_ids;
  if (!r.entity.empty()) meta["entity"] = r.entity;
  j["meta"] = std::move(meta);
  return j;
}

FinetuneRecord finetune_record_from_json(const Json& j) {
  try {
    FinetuneRecord r;
    r.task = parse_finetune_task(j.at("task").get<std::string>());
    r.images = j.at("images").get<std::vector<std::string>>();
    const auto& conv = j.at("conversations");
    if (conv.size() != 2) throw ParseError("fine-tune record needs exactly two conversation turns");
    r.prompt = conv.at(0).at("value").get<std::string>();
    r.answer = conv.at(1).at("value").get<std::string>();
    const auto& meta = j.at("meta");
    if (meta.contains("j")) r.j = meta.at("j").get<std::size_t>();
    r.source_ids = meta.at("source_ids").get<std::vector<std::string>>();
    r.entity = meta.value("entity", std::string{});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad fine-tune record: ") + e.what());
  }
}

std::string format_finetune_records(const std::vector<FinetuneRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

DistinctnessPredicate DistinctnessPredicate::load(const std::filesystem::path& path) {
  DistinctnessPredicate p;
  p.mode = Mode::label_set;
  try {
    const auto j = Json::parse(read_file(path));
    for (const auto& [id, labels] : j.items()) {
      auto& dst = p.labels[id];
      for (const auto& l : labels) dst.insert(l.get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("label sidecar " + path.string() + ": " + e.what());
  }
  return p;
}

void DistinctnessPredicate::require_labels(const std::vector<CorpusRecord>& records) const {
  if (mode == Mode::off) return;
  for (const auto& r : records) {
    if (!labels.contains(r.id)) throw InvalidInput("no labels for record '" + r.id + "'");
  }
}

bool DistinctnessPredicate::satisfied(const std::vector<std::string>& ids, std::size_t j) const {
  if (mode == Mode::off) return true;
  const auto& own = labels.at(ids.at(j - 1));
  return std::any_of(own.begin(), own.end(), [&](const std::string& label) {
    for (std::size_t m = 0; m < ids.size(); ++m) {
      if (m != j - 1 && labels.at(ids[m]).contains(label)) return false;
    }
    return true;
  });
}

void SamplingOptions::validate() const {
  if (k_min < 1 || k_min > k_max) throw InvalidInput("need 1 <= k_min <= k_max");
  if (attempts == 0) throw InvalidInput("attempt budget must be positive");
}

std::string image_placeholders(std::size_t n) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out += std::string(kImageToken) + "\n";
  return out;
}

std::string position_prompt(std::size_t k, std::string_view answer_text, std::string_view original_prompt) {
  return "What image from 1 to " + std::to_string(k) + " does this " + std::string(answer_text) +
         " correspond to? " + std::string(original_prompt);
}

std::string focus_prompt(std::size_t j, std::string_view original_prompt) {
  std::string out = "Focus on the " + std::to_string(j) + "-th image, " + std::string(original_prompt);
  const auto t = trim(original_prompt);
  if (t.empty() || (t.back() != '.' && t.back() != '?' && t.back() != '!')) out += ".";
  return out;
}

std::string vrag_prompt(const std::vector<std::string>& reference_reports, std::string_view question) {
  std::vector<std::string> items;
  for (const auto& r : reference_reports) items.push_back(std::string(kImageToken) + ", " + r);
  return "Based on the query image, and the similar images and their reports: (" + join(items, ", ") + "), " +
         std::string(question) + "\n" + std::string(kImageToken);
}

namespace {

FinetuneResult sample_multi_image(FinetuneTask task, const std::vector<CorpusRecord>& records,
                                  const SamplingOptions& options, const DistinctnessPredicate& predicate) {
  options.validate();
  if (records.size() < options.k_max) {
    throw InvalidInput("need at least " + std::to_string(options.k_max) + " records, have " +
                       std::to_string(records.size()));
  }
  predicate.require_labels(records);

  FinetuneResult out;
  Rng rng(options.seed);
  for (std::size_t n = 0; n < options.count; ++n) {
    std::optional<FinetuneRecord> accepted;
    for (std::size_t attempt = 0; attempt < options.attempts && !accepted; ++attempt) {
      const auto k = static_cast<std::size_t>(
          rng.between(static_cast<std::int64_t>(options.k_min), static_cast<std::int64_t>(options.k_max)));
      const auto picks = rng.sample_distinct(records.size(), k);
      const auto j = static_cast<std::size_t>(rng.between(1, static_cast<std::int64_t>(k)));
      FinetuneRecord r;
      r.task = task;
      for (auto p : picks) {
        r.images.push_back(records[p].image);
        r.source_ids.push_back(records[p].id);
      }
      if (!predicate.satisfied(r.source_ids, j)) continue;
      r.j = j;
      const auto& target = records[picks[j - 1]];
      if (task == FinetuneTask::position) {
        r.prompt = image_placeholders(k) + position_prompt(k, target.text, options.original_prompt);
        r.answer = "The " + std::to_string(j) + "-th image.";
      } else {
        r.prompt = image_placeholders(k) + focus_prompt(j, options.original_prompt);
        r.answer = target.text;
      }
      accepted = std::move(r);
    }
    if (accepted) {
      out.records.push_back(std::move(*accepted));
    } else {
      out.warnings.push_back("sample " + std::to_string(n) + ": distinctness not satisfied within " +
                             std::to_string(options.attempts) + " attempts, skipped");
    }
  }
  return out;
}

}  // namespace

FinetuneResult make_position(const std::vector<CorpusRecord>& records, const SamplingOptions& options,
                             const DistinctnessPredicate& predicate) {
  return sample_multi_image(FinetuneTask::position, records, options, predicate);
}

FinetuneResult make_focus(const std::vector<CorpusRecord>& records, const SamplingOptions& options,
                          const DistinctnessPredicate& predicate) {
  return sample_multi_image(FinetuneTask::focus, records, options, predicate);
}

FinetuneResult make_vrag(const std::vector<CorpusRecord>& queries,
                         const std::map<std::string, std::vector<std::string>>& entities_by_record,
                         const Retriever& retriever, Grounder& grounder, const SamplingOptions& options,
                         const std::set<std::string>& excluded) {
  options.validate();
  if (queries.empty()) throw InvalidInput("no query records for the vrag task");

  std::vector<std::pair<const CorpusRecord*, std::string>> pairs;
  for (const auto& q : queries) {
    if (auto it = entities_by_record.find(q.id); it != entities_by_record.end()) {
      std::set<std::string> sorted(it->second.begin(), it->second.end());
      for (const auto& e : sorted) pairs.emplace_back(&q, e);
    }
  }
  Rng rng(options.seed);
  rng.shuffle(pairs);

  FinetuneResult out;
  for (const auto& [query, entity] : pairs) {
    if (out.records.size() == options.count) break;
    const auto k = static_cast<std::size_t>(
        rng.between(static_cast<std::int64_t>(options.k_min), static_cast<std::int64_t>(options.k_max)));
    const auto tag = make_item_id(query->id, entity);
    try {
      const auto refs = retriever.retrieve({query->id, query->image}, {RetrievalMode::vrag, k});
      if (refs.size() < options.k_min) {
        out.warnings.push_back(tag + ": only " + std::to_string(refs.size()) + " references, skipped");
        continue;
      }
      const auto gold = grounder.ground(report_body(*query, excluded), entity);
      FinetuneRecord r;
      r.task = FinetuneTask::vrag;
      std::vector<std::string> reports;
      for (const auto& ref : refs) {
        r.images.push_back(ref.image_ref);
        r.source_ids.push_back(ref.id);
        reports.push_back(ref.text);
      }
      r.images.push_back(query->image);
      r.source_ids.push_back(query->id);
      r.prompt = vrag_prompt(reports, probe_question(entity));
      r.answer = std::string(capitalized(gold));
      r.entity = entity;
      out.records.push_back(std::move(r));
    } catch (const Error& e) {
      out.warnings.push_back(tag + ": " + e.what() + ", skipped");
    }
  }
  if (out.records.size() < options.count) {
    out.warnings.push_back("only " + std::to_string(out.records.size()) + " of " + std::to_string(options.count) +
                           " vrag records could be built");
  }
  return out;
}

std::vector<std::string> check_record(const FinetuneRecord& r, const SamplingOptions& options,
                                      const std::map<std::string, CorpusRecord>* corpus) {
  std::vector<std::string> bad;
  std::size_t tokens = 0;
  for (auto p = r.prompt.find(kImageToken); p != std::string::npos; p = r.prompt.find(kImageToken, p + 1)) ++tokens;
  if (tokens != r.images.size()) bad.push_back("placeholder count differs from image count");
  if (r.source_ids.size() != r.images.size()) bad.push_back("source ids not parallel to images");

  const std::size_t k = r.task == FinetuneTask::vrag ? r.images.size() - (r.images.empty() ? 0 : 1) : r.images.size();
  if (k < options.k_min || k > options.k_max) bad.push_back("K=" + std::to_string(k) + " outside the sampling range");

  if (r.task == FinetuneTask::vrag) {
    if (r.answer != "Yes" && r.answer != "No") bad.push_back("vrag answer must be Yes or No");
    if (r.entity.empty()) bad.push_back("vrag record has no entity");
    if (!r.source_ids.empty() &&
        std::find(r.source_ids.begin(), r.source_ids.end() - 1, r.source_ids.back()) != r.source_ids.end() - 1) {
      bad.push_back("query appears among its own references");
    }
    if (r.prompt.find(probe_question(r.entity)) == std::string::npos) bad.push_back("question missing from prompt");
    return bad;
  }

  if (!r.j || *r.j < 1 || *r.j > k) {
    bad.push_back("j outside [1, K]");
    return bad;
  }
  if (std::set<std::string>(r.source_ids.begin(), r.source_ids.end()).size() != r.source_ids.size()) {
    bad.push_back("source records not distinct");
  }
  if (r.task == FinetuneTask::position && r.answer != "The " + std::to_string(*r.j) + "-th image.") {
    bad.push_back("position answer does not name j");
  }
  if (corpus) {
    const auto it = corpus->find(r.source_ids[*r.j - 1]);
    if (it == corpus->end()) {
      bad.push_back("unknown source id " + r.source_ids[*r.j - 1]);
    } else if (r.task == FinetuneTask::focus && r.answer != it->second.text) {
      bad.push_back("focus answer is not the j-th report");
    } else if (r.task == FinetuneTask::position && r.prompt.find(it->second.text) == std::string::npos) {
      bad.push_back("position prompt does not quote the j-th report");
    }
  }
  return bad;
}

}  // namespace vrag
