#include "vrag/probing.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_map>

#include "vrag/error.hpp"

namespace vrag {

std::vector<EntityOccurrence> extract_entities(const std::vector<CorpusRecord>& records, NerClient& ner,
                                               const std::set<std::string>& excluded, std::size_t workers) {
  std::vector<std::vector<EntityOccurrence>> per_record(records.size());
  parallel_for(records.size(), workers, [&](std::size_t i) {
    for (const auto& [name, body] : sections_of(records[i])) {
      if (excluded.contains(name) || body.empty()) continue;
      const auto resp = ner.ner({body});
      check_entities(resp, body);
      for (const auto& e : resp.entities) per_record[i].push_back({e.text, records[i].id, name, e.start, e.end});
    }
  });
  std::vector<EntityOccurrence> out;
  for (auto& v : per_record) std::move(v.begin(), v.end(), std::back_inserter(out));
  return out;
}

std::string normalize_entity(std::string_view e) { return join(split_whitespace(to_lower(e)), " "); }

CanonicalMap::CanonicalMap(std::set<std::string> vocabulary) {
  for (const auto& v : vocabulary) {
    if (auto n = normalize_entity(v); !n.empty()) vocabulary_.insert(std::move(n));
  }
}

std::string CanonicalMap::canonical(std::string_view entity) const {
  const auto tokens = split_whitespace(to_lower(entity));
  // One suffix per token count, so the first hit from the short end is the
  // unique shortest.
  for (std::size_t n = 1; n <= tokens.size(); ++n) {
    const std::vector<std::string> suffix(tokens.end() - static_cast<std::ptrdiff_t>(n), tokens.end());
    auto candidate = join(suffix, " ");
    if (vocabulary_.contains(candidate)) return candidate;
  }
  return join(tokens, " ");
}

CanonicalMap build_canonical_map(const std::vector<std::string>& train_entities) {
  return CanonicalMap(std::set<std::string>(train_entities.begin(), train_entities.end()));
}

std::string grounding_prompt(std::string_view report, std::string_view entity) {
  return "Does the patient have " + std::string(entity) + " based on the report: " + std::string(report) + "?";
}

Answer Grounder::ground(std::string_view report, std::string_view entity) {
  if (trim(entity).empty()) throw InvalidInput("grounding entity is empty");
  auto key = std::make_pair(sha256_hex(report), std::string(entity));
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    ++calls_;
  }
  ChatRequest req;
  req.parts.push_back(ChatPart::text(grounding_prompt(report, entity)));
  const auto answer = parse_yes_no(llm_->chat(req).text);
  std::lock_guard lock(mu_);
  cache_.insert_or_assign(std::move(key), answer);
  return answer;
}

std::size_t Grounder::backend_calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

std::string_view to_string(Provenance p) { return p == Provenance::grounded ? "grounded" : "balanced_negative"; }

std::string make_item_id(std::string_view record_id, std::string_view entity) {
  return std::string(record_id) + "::" + std::string(entity);
}

Json to_json(const ProbeItem& item) {
  return {{"item_id", item.item_id},     {"record_id", item.record_id}, {"image", item.image_ref},
          {"entity", item.entity},       {"gold", to_string(item.gold)},
          {"provenance", to_string(item.provenance)}};
}

ProbeItem probe_item_from_json(const Json& j, std::size_t line) {
  try {
    ProbeItem p;
    p.item_id = j.at("item_id").get<std::string>();
    p.record_id = j.at("record_id").get<std::string>();
    p.image_ref = j.at("image").get<std::string>();
    p.entity = j.at("entity").get<std::string>();
    const auto gold = j.at("gold").get<std::string>();
    if (gold != "yes" && gold != "no") throw ParseError("gold must be yes or no", line);
    p.gold = gold == "yes" ? Answer::yes : Answer::no;
    const auto prov = j.value("provenance", std::string("grounded"));
    if (prov != "grounded" && prov != "balanced_negative") throw ParseError("unknown provenance " + prov, line);
    p.provenance = prov == "grounded" ? Provenance::grounded : Provenance::balanced_negative;
    if (p.entity.empty()) throw ParseError("probe item entity is empty", line);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad probe item: ") + e.what(), line);
  }
}

std::vector<ProbeItem> load_probe_items(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open probe set " + path.string());
  std::vector<ProbeItem> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (trim(line).empty()) continue;
    try {
      out.push_back(probe_item_from_json(Json::parse(line), n));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), n);
    }
  }
  return out;
}

std::string format_probe_items(const std::vector<ProbeItem>& items) {
  std::string out;
  for (const auto& i : items) out += to_json(i).dump() + "\n";
  return out;
}

namespace {

bool by_item_id(const ProbeItem& a, const ProbeItem& b) { return a.item_id < b.item_id; }

}  // namespace

ProbeSet build_probe_set(const std::vector<CorpusRecord>& records, const std::vector<EntityOccurrence>& occurrences,
                         const CanonicalMap& canonical, Grounder& grounder, const std::set<std::string>& excluded,
                         std::size_t workers) {
  std::map<std::string, std::set<std::string>> entities;  // record id -> canonical entities
  for (const auto& o : occurrences) {
    if (auto c = canonical.canonical(o.surface); !c.empty()) entities[o.record_id].insert(std::move(c));
  }

  struct Job {
    const CorpusRecord* record;
    std::string entity;
  };
  std::vector<Job> jobs;
  for (const auto& r : records) {
    if (auto it = entities.find(r.id); it != entities.end()) {
      for (const auto& e : it->second) jobs.push_back({&r, e});
    }
  }

  std::vector<std::optional<ProbeItem>> slots(jobs.size());
  std::vector<std::string> errors(jobs.size());
  parallel_for(jobs.size(), workers, [&](std::size_t i) {
    const auto& [rec, entity] = jobs[i];
    try {
      const auto gold = grounder.ground(report_body(*rec, excluded), entity);
      slots[i] = ProbeItem{make_item_id(rec->id, entity), rec->id, rec->image, entity, gold, Provenance::grounded};
    } catch (const Error& e) {
      errors[i] = "skipping " + make_item_id(rec->id, entity) + ": grounding failed: " + e.what();
    }
  });

  ProbeSet out;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (slots[i]) out.items.push_back(std::move(*slots[i]));
    if (!errors[i].empty()) out.warnings.push_back(std::move(errors[i]));
  }
  std::sort(out.items.begin(), out.items.end(), by_item_id);
  return out;
}

std::map<std::string, std::size_t> entity_frequency(const std::vector<EntityOccurrence>& occurrences,
                                                    const CanonicalMap& canonical) {
  std::set<std::pair<std::string, std::string>> seen;  // (entity, record)
  for (const auto& o : occurrences) seen.emplace(canonical.canonical(o.surface), o.record_id);
  std::map<std::string, std::size_t> freq;
  for (const auto& [entity, record] : seen) ++freq[entity];
  return freq;
}

Strata stratify(const std::vector<ProbeItem>& items, const std::map<std::string, std::size_t>& train_frequency,
                std::size_t top_n) {
  std::set<std::string> distinct;
  for (const auto& i : items) distinct.insert(i.entity);
  std::vector<std::pair<std::size_t, std::string>> ranked;
  for (const auto& e : distinct) {
    const auto it = train_frequency.find(e);
    ranked.emplace_back(it == train_frequency.end() ? 0 : it->second, e);
  }
  std::sort(ranked.begin(), ranked.end(),
            [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });

  Strata out;
  for (std::size_t i = 0; i < ranked.size() && i < top_n; ++i) out.frequent_entities.insert(ranked[i].second);
  for (const auto& item : items) (out.frequent_entities.contains(item.entity) ? out.frequent : out.rare).push_back(item);
  return out;
}

BalanceResult balance_rare(const std::vector<ProbeItem>& items, const std::vector<CorpusRecord>& pool,
                           Grounder& grounder, const BalanceOptions& options) {
  BalanceResult out;
  out.items = items;
  std::map<std::string, std::vector<const ProbeItem*>> by_entity;
  for (const auto& i : items) by_entity[i.entity].push_back(&i);

  Rng rng(options.seed);
  std::vector<ProbeItem> added;
  for (const auto& [entity, group] : by_entity) {
    const auto positives = std::count_if(group.begin(), group.end(), [](auto* i) { return i->gold == Answer::yes; });
    auto negatives = static_cast<std::ptrdiff_t>(group.size()) - positives;
    if (negatives >= positives) continue;

    std::set<std::string> used;
    for (const auto* i : group) used.insert(i->record_id);
    std::vector<ProbeItem> fresh;
    bool exhausted = pool.empty();
    while (!exhausted && negatives < positives) {
      bool found = false;
      for (std::size_t attempt = 0; attempt < options.attempts_per_negative && !found; ++attempt) {
        const auto& rec = pool[rng.index(pool.size())];
        if (used.contains(rec.id)) continue;
        try {
          if (grounder.ground(report_body(rec, options.excluded), entity) != Answer::no) continue;
        } catch (const Error& e) {
          out.warnings.push_back("verifying " + make_item_id(rec.id, entity) + " failed: " + e.what());
          continue;
        }
        used.insert(rec.id);
        fresh.push_back({make_item_id(rec.id, entity), rec.id, rec.image, entity, Answer::no,
                         Provenance::balanced_negative});
        found = true;
      }
      if (found) {
        ++negatives;
      } else {
        exhausted = true;
      }
    }
    if (exhausted) {
      out.unbalanceable.push_back(entity);
    } else {
      std::move(fresh.begin(), fresh.end(), std::back_inserter(added));
    }
  }
  std::move(added.begin(), added.end(), std::back_inserter(out.items));
  std::sort(out.items.begin(), out.items.end(), by_item_id);
  return out;
}

ProbeMetrics ProbeMetrics::from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  auto ratio = [](double num, double den) { return den == 0 ? 0.0 : num / den; };
  ProbeMetrics m{tp, fp, fn, tn};
  m.precision = ratio(static_cast<double>(tp), static_cast<double>(tp + fp));
  m.recall = ratio(static_cast<double>(tp), static_cast<double>(tp + fn));
  // Harmonic mean of precision and recall in its exact count form.
  m.f1 = ratio(2.0 * static_cast<double>(tp), static_cast<double>(2 * tp + fp + fn));
  return m;
}

Json to_json(const ProbeMetrics& m) {
  return {{"tp", m.tp},         {"fp", m.fp},         {"fn", m.fn}, {"tn", m.tn},
          {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

ProbeMetrics score(const std::vector<ProbeItem>& items, const std::map<std::string, Answer>& predictions) {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (const auto& item : items) {
    const auto it = predictions.find(item.item_id);
    if (it == predictions.end()) throw InvalidInput("no prediction for item " + item.item_id);
    const bool gold = item.gold == Answer::yes;
    const bool pred = it->second == Answer::yes;
    (gold ? (pred ? tp : fn) : (pred ? fp : tn)) += 1;
  }
  return ProbeMetrics::from_counts(tp, fp, fn, tn);
}

std::vector<ProbeItem> sample_items(const std::vector<ProbeItem>& items, std::size_t n, std::uint64_t seed) {
  if (n >= items.size()) return items;
  Rng rng(seed);
  std::vector<ProbeItem> out;
  for (auto i : rng.sample_distinct(items.size(), n)) out.push_back(items[i]);
  std::sort(out.begin(), out.end(), by_item_id);
  return out;
}

std::vector<Transcript> run_probes(const std::vector<ProbeItem>& items, const Retriever& retriever, ChatClient& mllm,
                                   const RetrievalConfig& config, std::size_t workers) {
  std::vector<Transcript> out(items.size());
  parallel_for(items.size(), workers, [&](std::size_t i) {
    const auto& item = items[i];
    auto& t = out[i];
    t.item_id = item.item_id;
    t.mode = config.mode;
    try {
      auto a = answer_probe({item.record_id, item.image_ref}, probe_question(item.entity), retriever, mllm, config);
      t.prompt_digest = std::move(a.prompt_digest);
      t.raw = std::move(a.raw);
      t.parsed = a.parsed;
      t.references = std::move(a.reference_ids);
    } catch (const Error& e) {
      t.error = e.what();
    }
  });
  return out;
}

std::map<std::string, Answer> predictions_of(const std::vector<Transcript>& transcripts) {
  std::map<std::string, Answer> out;
  for (const auto& t : transcripts) {
    if (t.error.empty()) out[t.item_id] = t.parsed;
  }
  return out;
}

}  // namespace vrag
