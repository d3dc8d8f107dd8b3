#include "vrag/cli.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "vrag/config.hpp"
#include "vrag/corpus.hpp"
#include "vrag/error.hpp"
#include "vrag/finetune.hpp"
#include "vrag/mock.hpp"
#include "vrag/probing.hpp"
#include "vrag/rag.hpp"
#include "vrag/rewrite.hpp"

namespace vrag::cli {

namespace fs = std::filesystem;

namespace {

std::shared_ptr<spdlog::logger> logger() {
  static auto log = [] {
    auto l = spdlog::stderr_color_mt("vrag");
    l->set_pattern("%Y-%m-%dT%H:%M:%S.%e %^%l%$ %v");
    return l;
  }();
  return log;
}

// Raised for missing inputs detected before any work starts.
class ValidationError : public Error {
 public:
  using Error::Error;
};

void require_file(const fs::path& p, std::string_view what) {
  if (p.empty()) throw ValidationError(std::string(what) + " path is required");
  if (!fs::is_regular_file(p)) throw ValidationError(std::string(what) + " not found: " + p.string());
}

struct Corpus {
  std::vector<CorpusRecord> records;
  ImageStore images;
};

Corpus load_corpus(const fs::path& manifest) {
  require_file(manifest, "manifest");
  return {load_manifest(manifest), ImageStore(manifest.parent_path())};
}

bool any_split(const std::vector<CorpusRecord>& records) {
  return std::any_of(records.begin(), records.end(), [](const auto& r) { return r.split.has_value(); });
}

// "all" selects everything; a corpus without split labels is used whole.
std::vector<CorpusRecord> select_split(const std::vector<CorpusRecord>& records, const std::string& split) {
  if (split == "all") return records;
  if (!any_split(records)) {
    logger()->warn("manifest has no split labels; using all {} records for '{}'", records.size(), split);
    return records;
  }
  return filter_split(records, parse_split(split));
}

fs::path or_default(const fs::path& p, const RunConfig& c, std::string_view name) {
  return p.empty() ? c.run_dir / std::string(name) : p;
}

std::shared_ptr<const Memory> load_index(const fs::path& idx) {
  require_file(idx, "index");
  return std::make_shared<const Memory>(Memory::load(idx));
}

template <typename T>
void write_jsonl(const fs::path& path, const std::vector<T>& rows) {
  std::string out;
  for (const auto& r : rows) out += to_json(r).dump() + "\n";
  write_file(path, out);
}

void warn_all(const std::vector<std::string>& warnings, std::size_t limit = 20) {
  for (std::size_t i = 0; i < warnings.size() && i < limit; ++i) logger()->warn("{}", warnings[i]);
  if (warnings.size() > limit) logger()->warn("... {} more warnings", warnings.size() - limit);
}

// Canonical vocabulary and document frequencies from training reports.
struct Vocabulary {
  CanonicalMap canonical;
  std::map<std::string, std::size_t> frequency;
};

Vocabulary train_vocabulary(const std::vector<CorpusRecord>& train, Clients& clients, const RunConfig& c) {
  const auto occ = extract_entities(train, *clients.ner, c.excluded_sections, c.workers);
  std::vector<std::string> surfaces;
  for (const auto& o : occ) surfaces.push_back(normalize_entity(o.surface));
  Vocabulary v{build_canonical_map(surfaces), {}};
  v.frequency = entity_frequency(occ, v.canonical);
  return v;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) out.push_back(trim(item));
  return out;
}

struct Options {
  // global
  fs::path config_path;
  std::string backend;
  fs::path fixture;
  fs::path run_dir;
  std::size_t workers = 0;
  std::uint64_t seed = 0;
  std::string mode;
  std::size_t k = 0;
  std::string search;

  // shared by subcommands
  fs::path manifest;
  fs::path out;
  fs::path idx;
  fs::path probes;
  std::string split;

  // ingest
  std::string split_mode = "official";
  std::string ratios = "0.8,0.1,0.1";
  // index
  std::string embedder_url;
  fs::path image;
  // probe-build
  bool balance = false;
  std::size_t top_n = 50;
  fs::path frequency_out;
  // probe-score
  fs::path transcripts;
  fs::path frequency;
  bool strata = false;
  std::size_t sample = 0;
  // make-ft-data
  std::string task;
  std::size_t count = 6000;
  std::size_t k_min = 1;
  std::size_t k_max = 5;
  fs::path labels;
  std::string prompt = std::string(kDefaultFindingsPrompt);
  // rewrite
  std::size_t limit = 0;
  // mock-serve
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string chat = "grounded-probe";
};

RunConfig effective_config(const Options& o, const CLI::App& app) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : RunConfig::load(o.config_path);
  auto given = [&](const char* name) { return app.get_option(name)->count() > 0; };
  if (given("--backend")) {
    if (o.backend != "mock" && o.backend != "url") throw InvalidInput("--backend must be mock or url");
    c.backend = o.backend == "mock" ? Backend::mock : Backend::url;
  }
  if (given("--fixture")) c.fixture = o.fixture;
  if (given("--run-dir")) c.run_dir = o.run_dir;
  if (given("--workers")) c.workers = o.workers;
  if (given("--seed")) c.seed = o.seed;
  if (given("--mode")) c.retrieval.mode = parse_retrieval_mode(o.mode);
  if (given("-k")) c.retrieval.k = o.k;
  if (given("--search")) {
    if (o.search != "approximate" && o.search != "exact") throw InvalidInput("--search must be approximate or exact");
    c.retrieval.search = o.search == "exact" ? SearchMode::exact : SearchMode::approximate;
  }
  if (c.workers == 0) throw InvalidInput("--workers must be positive");
  c.retrieval.validate();
  if (c.backend == Backend::mock) require_file(c.fixture, "mock fixture");
  return c;
}

// --- subcommands --------------------------------------------------------------

void cmd_ingest(const Options& o, const RunConfig& c) {
  require_file(o.manifest, "manifest");
  SplitPolicy policy;
  if (o.split_mode != "official" && o.split_mode != "ratio") throw InvalidInput("--split-mode must be official or ratio");
  policy.mode = o.split_mode == "ratio" ? SplitPolicy::Mode::ratio : SplitPolicy::Mode::official;
  const auto parts = split_csv(o.ratios);
  if (parts.size() != 3) throw InvalidInput("--ratios needs three comma-separated values");
  for (std::size_t i = 0; i < 3; ++i) {
    try {
      policy.ratios[i] = std::stod(parts[i]);
    } catch (const std::exception&) {
      throw InvalidInput("bad ratio: " + parts[i]);
    }
  }
  policy.seed = c.seed;

  const auto out = or_default(o.out, c, "corpus.jsonl");
  auto records = split_corpus(load_manifest(o.manifest), policy);
  records = rebase_images(std::move(records), o.manifest.parent_path(), out.parent_path());
  write_file(out, format_manifest(records));

  std::array<std::size_t, 3> counts{};
  for (const auto& r : records) ++counts[static_cast<std::size_t>(*r.split)];
  logger()->info("ingested {} records: train {}, validation {}, test {} -> {}", records.size(), counts[0], counts[1],
                 counts[2], out.string());

  RunManifest m("ingest", c);
  m.seed("split", policy.seed);
  m.input(o.manifest);
  m.output(out);
  m.note("counts", {{"train", counts[0]}, {"validation", counts[1]}, {"test", counts[2]}});
  m.write();
}

void cmd_index_build(const Options& o, const RunConfig& c) {
  auto corpus = load_corpus(o.manifest);
  auto clients = make_clients(c, corpus.images);
  if (!o.embedder_url.empty()) {
    RetryPolicy policy = c.retry;
    policy.jitter_seed = c.seed;
    clients.embedder = std::make_shared<HttpEmbedClient>(o.embedder_url, c.dim, policy);
  }
  const auto records = select_split(corpus.records, o.split.empty() ? "train" : o.split);
  const auto out = or_default(o.out, c, "index.hnsw");
  const auto memory = build_memory(records, *clients.embedder, corpus.images, c.dim, c.hnsw, c.workers);
  memory.save(out);
  logger()->info("indexed {} records (dim {}, max level {}) -> {}", memory.size(), memory.dim(), memory.max_level(),
                 out.string());

  RunManifest m("index-build", c);
  m.seed("level_seed", c.hnsw.level_seed);
  m.input(o.manifest);
  m.output(out);
  m.write();
}

void cmd_index_query(const Options& o, const RunConfig& c) {
  const auto memory = load_index(o.idx);
  require_file(o.image, "image");
  auto clients = make_clients(c, ImageStore{});
  const auto resp = clients.embedder->embed({o.image.filename().string(), read_file(o.image)});
  check_embedding(resp, static_cast<std::size_t>(memory->dim()));
  const Eigen::Map<const Eigen::VectorXf> q(resp.vector.data(), memory->dim());
  const auto hits = memory->query(q, c.retrieval.k, c.retrieval.search);

  std::string text;
  for (const auto& h : hits) text += Json{{"id", h.id}, {"distance", h.distance}}.dump() + "\n";
  if (o.out.empty()) {
    std::cout << text;
  } else {
    write_file(o.out, text);
    RunManifest m("index-query", c);
    m.input(o.idx);
    m.input(o.image);
    m.output(o.out);
    m.write();
  }
}

void cmd_probe_build(const Options& o, const RunConfig& c) {
  auto corpus = load_corpus(o.manifest);
  auto clients = make_clients(c, corpus.images);
  const auto train = select_split(corpus.records, "train");
  const auto target = select_split(corpus.records, o.split.empty() ? "test" : o.split);
  const auto vocab = train_vocabulary(train, clients, c);

  Grounder grounder(clients.grounder);
  const auto occ = extract_entities(target, *clients.ner, c.excluded_sections, c.workers);
  auto set = build_probe_set(target, occ, vocab.canonical, grounder, c.excluded_sections, c.workers);
  warn_all(set.warnings);
  auto items = std::move(set.items);

  Json balance_note;
  if (o.balance) {
    const auto strata = stratify(items, vocab.frequency, o.top_n);
    BalanceOptions bo;
    bo.seed = c.seed;
    bo.excluded = c.excluded_sections;
    auto bal = balance_rare(strata.rare, target, grounder, bo);
    warn_all(bal.warnings);
    for (const auto& e : bal.unbalanceable) logger()->warn("rare entity '{}' could not be balanced", e);
    items = strata.frequent;
    items.insert(items.end(), bal.items.begin(), bal.items.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.item_id < b.item_id; });
    balance_note = {{"top_n", o.top_n}, {"unbalanceable", bal.unbalanceable}};
  }

  const auto out = or_default(o.out, c, "probes.jsonl");
  const auto freq_out = o.frequency_out.empty() ? out.parent_path() / "frequency.json" : o.frequency_out;
  write_file(out, format_probe_items(items));
  Json freq = Json::object();
  for (const auto& [e, n] : vocab.frequency) freq[e] = n;
  write_file(freq_out, freq.dump(2) + "\n");

  const auto positives = std::count_if(items.begin(), items.end(), [](const auto& i) { return i.gold == Answer::yes; });
  logger()->info("built {} probe items ({} positive) over {} records, {} grounding calls -> {}", items.size(),
                 positives, target.size(), grounder.backend_calls(), out.string());

  RunManifest m("probe-build", c);
  m.seed("balance", c.seed);
  m.input(o.manifest);
  m.output(out);
  m.output(freq_out);
  if (o.balance) m.note("balance", balance_note);
  m.write();
}

void cmd_probe(const Options& o, const RunConfig& c) {
  require_file(o.manifest, "manifest");
  require_file(o.idx, "index");
  require_file(o.probes, "probe set");
  auto corpus = load_corpus(o.manifest);
  const auto memory = load_index(o.idx);
  const auto items = load_probe_items(o.probes);
  auto clients = make_clients(c, corpus.images);
  const Retriever retriever(memory, corpus.records, clients.embedder, corpus.images);

  const auto transcripts = run_probes(items, retriever, *clients.mllm, c.retrieval, c.workers);
  const auto out = or_default(o.out, c, "transcripts.jsonl");
  write_jsonl(out, transcripts);
  const auto errors = std::count_if(transcripts.begin(), transcripts.end(), [](const auto& t) { return !t.error.empty(); });
  if (errors) logger()->warn("{} of {} probes failed; see the error field in {}", errors, transcripts.size(), out.string());
  logger()->info("probed {} items in mode {} (k={}) -> {}", transcripts.size(), to_string(c.retrieval.mode),
                 c.retrieval.k, out.string());

  RunManifest m("probe", c);
  m.input(o.manifest);
  m.input(o.idx);
  m.input(o.probes);
  m.output(out);
  m.write();
}

void cmd_probe_score(const Options& o, const RunConfig& c) {
  require_file(o.probes, "probe set");
  require_file(o.transcripts, "transcripts");
  if (o.strata) require_file(o.frequency, "frequency file");

  auto items = load_probe_items(o.probes);
  if (o.sample) items = sample_items(items, o.sample, c.seed);
  std::vector<Transcript> transcripts;
  {
    std::istringstream in(read_file(o.transcripts));
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
      if (trim(line).empty()) continue;
      try {
        transcripts.push_back(transcript_from_json(Json::parse(line)));
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("malformed transcript: ") + e.what(), n);
      }
    }
  }
  const auto predictions = predictions_of(transcripts);
  std::vector<ProbeItem> scored;
  std::size_t missing = 0;
  for (const auto& i : items) {
    if (predictions.contains(i.item_id)) {
      scored.push_back(i);
    } else {
      ++missing;
    }
  }
  if (missing) logger()->warn("{} items have no usable prediction and are not scored", missing);

  Json out = to_json(score(scored, predictions));
  out["items"] = scored.size();
  out["unscored"] = missing;
  if (o.strata) {
    std::map<std::string, std::size_t> freq;
    const auto parsed = Json::parse(read_file(o.frequency));
    for (const auto& [e, n] : parsed.items()) freq[e] = n.get<std::size_t>();
    const auto s = stratify(scored, freq, o.top_n);
    Json fm = to_json(score(s.frequent, predictions));
    fm["items"] = s.frequent.size();
    Json rm = to_json(score(s.rare, predictions));
    rm["items"] = s.rare.size();
    out["strata"] = {{"top_n", o.top_n}, {"frequent", std::move(fm)}, {"rare", std::move(rm)}};
  }

  const auto path = or_default(o.out, c, "metrics.json");
  write_file(path, out.dump(2) + "\n");
  logger()->info("precision {:.4f} recall {:.4f} f1 {:.4f} over {} items -> {}", out["precision"].get<double>(),
                 out["recall"].get<double>(), out["f1"].get<double>(), scored.size(), path.string());

  RunManifest m("probe-score", c);
  if (o.sample) m.seed("sample", c.seed);
  m.input(o.probes);
  m.input(o.transcripts);
  if (o.strata) m.input(o.frequency);
  m.output(path);
  m.write();
}

void cmd_make_ft_data(const Options& o, const RunConfig& c) {
  const auto task = parse_finetune_task(o.task);
  auto corpus = load_corpus(o.manifest);
  if (!o.labels.empty()) require_file(o.labels, "label sidecar");
  if (task == FinetuneTask::vrag) require_file(o.idx, "index");

  SamplingOptions so;
  so.count = o.count;
  so.k_min = o.k_min;
  so.k_max = o.k_max;
  so.seed = c.seed;
  so.original_prompt = o.prompt;

  FinetuneResult result;
  if (task == FinetuneTask::vrag) {
    auto clients = make_clients(c, corpus.images);
    const auto memory = load_index(o.idx);
    const auto vocab = train_vocabulary(select_split(corpus.records, "train"), clients, c);
    const auto queries = select_split(corpus.records, o.split.empty() ? "validation" : o.split);
    std::map<std::string, std::vector<std::string>> entities;
    for (const auto& occ : extract_entities(queries, *clients.ner, c.excluded_sections, c.workers)) {
      entities[occ.record_id].push_back(vocab.canonical.canonical(occ.surface));
    }
    const Retriever retriever(memory, corpus.records, clients.embedder, corpus.images);
    Grounder grounder(clients.grounder);
    result = make_vrag(queries, entities, retriever, grounder, so, c.excluded_sections);
  } else {
    const auto pool = select_split(corpus.records, o.split.empty() ? "train" : o.split);
    const auto predicate = o.labels.empty() ? DistinctnessPredicate{} : DistinctnessPredicate::load(o.labels);
    result = task == FinetuneTask::position ? make_position(pool, so, predicate) : make_focus(pool, so, predicate);
  }
  warn_all(result.warnings);

  const auto out = or_default(o.out, c, "ft_" + std::string(to_string(task)) + ".jsonl");
  write_file(out, format_finetune_records(result.records));
  logger()->info("wrote {} {} records -> {}", result.records.size(), to_string(task), out.string());

  RunManifest m("make-ft-data", c);
  m.seed("sampling", c.seed);
  m.input(o.manifest);
  if (!o.labels.empty()) m.input(o.labels);
  if (task == FinetuneTask::vrag) m.input(o.idx);
  m.output(out);
  m.note("task", to_string(task));
  m.write();
}

void cmd_rewrite(const Options& o, const RunConfig& c) {
  auto corpus = load_corpus(o.manifest);
  const auto memory = load_index(o.idx);
  auto clients = make_clients(c, corpus.images);
  const auto vocab = train_vocabulary(select_split(corpus.records, "train"), clients, c);
  auto queries = select_split(corpus.records, o.split.empty() ? "test" : o.split);
  if (o.limit && queries.size() > o.limit) queries.resize(o.limit);

  const Retriever retriever(memory, corpus.records, clients.embedder, corpus.images);
  RewriteOptions ro;
  ro.retrieval = c.retrieval;
  ro.excluded = c.excluded_sections;
  std::vector<RewriteCase> cases(queries.size());
  parallel_for(queries.size(), c.workers,
               [&](std::size_t i) { cases[i] = run_rewrite_case(queries[i], retriever, clients, vocab.canonical, ro); });

  const auto out = or_default(o.out, c, "cases.jsonl");
  write_jsonl(out, cases);
  double before = 0, after = 0;
  std::size_t failed = 0;
  for (const auto& k : cases) {
    before += k.original_f1.f1;
    after += k.revised_f1.f1;
    failed += k.failed;
  }
  const double n = cases.empty() ? 1.0 : static_cast<double>(cases.size());
  if (failed) logger()->warn("{} of {} cases failed and kept their original report", failed, cases.size());
  logger()->info("rewrote {} reports: mean entity F1 {:.4f} -> {:.4f} -> {}", cases.size(), before / n, after / n,
                 out.string());

  RunManifest m("rewrite", c);
  m.input(o.manifest);
  m.input(o.idx);
  m.output(out);
  m.note("mean_entity_f1", {{"original", before / n}, {"revised", after / n}});
  m.write();
}

void cmd_mock_serve(const Options& o, const RunConfig& c) {
  require_file(c.fixture, "mock fixture");
  auto fixture = std::make_shared<const MockFixture>(MockFixture::load(c.fixture));
  MockServer server(fixture, parse_chat_personality(o.chat));
  logger()->info("mock backends listening on http://{}:{}", o.host, o.port);
  server.run(o.host, o.port);
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Retrieval-augmented multimodal probing pipeline", "vrag"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;

  app.add_option("--config", o.config_path, "Run configuration (JSON)");
  app.add_option("--backend", o.backend, "Model backends: mock or url");
  app.add_option("--fixture", o.fixture, "Mock fixture file");
  app.add_option("--run-dir", o.run_dir, "Directory for outputs, run manifests and the lock");
  app.add_option("--workers", o.workers, "Parallel backend calls");
  app.add_option("--seed", o.seed, "Seed for every sampling step");
  app.add_option("--mode", o.mode, "Retrieval mode: none|image|text|rar|vrag");
  app.add_option("-k", o.k, "Number of references");
  app.add_option("--search", o.search, "approximate or exact");

  auto* ingest = app.add_subcommand("ingest", "Validate a manifest and assign splits");
  ingest->add_option("--manifest", o.manifest, "Input manifest (JSON lines)")->required();
  ingest->add_option("--split-mode", o.split_mode, "official or ratio")->capture_default_str();
  ingest->add_option("--ratios", o.ratios, "train,validation,test ratios")->capture_default_str();
  ingest->add_option("--out", o.out, "Output manifest");

  auto* index = app.add_subcommand("index", "Build or query the embedding index");
  index->require_subcommand(1);
  auto* build = index->add_subcommand("build", "Embed images and build the index");
  build->add_option("--manifest", o.manifest)->required();
  build->add_option("--embedder", o.embedder_url, "Embedder base URL (overrides the backend)");
  build->add_option("--split", o.split, "Records to index (default train; all for every record)");
  build->add_option("--out", o.out, "Index file");
  auto* query = index->add_subcommand("query", "Nearest neighbours of one image");
  query->add_option("--idx", o.idx)->required();
  query->add_option("--image", o.image)->required();
  query->add_option("--out", o.out, "Write JSON lines here instead of stdout");

  auto* pbuild = app.add_subcommand("probe-build", "Build the entity-probing set");
  pbuild->add_option("--manifest", o.manifest)->required();
  pbuild->add_option("--split", o.split, "Split to probe (default test)");
  pbuild->add_option("--out", o.out, "Probe set (JSON lines)");
  pbuild->add_option("--frequency-out", o.frequency_out, "Training entity frequencies");
  pbuild->add_flag("--balance", o.balance, "Balance rare entities with verified negatives");
  pbuild->add_option("--top-n", o.top_n, "Frequent stratum size")->capture_default_str();

  auto* probe = app.add_subcommand("probe", "Answer every probe with the multimodal model");
  probe->add_option("--manifest", o.manifest)->required();
  probe->add_option("--idx", o.idx)->required();
  probe->add_option("--probes", o.probes)->required();
  probe->add_option("--out", o.out, "Transcripts (JSON lines)");

  auto* pscore = app.add_subcommand("probe-score", "Precision, recall and F1 of transcripts");
  pscore->add_option("--probes", o.probes)->required();
  pscore->add_option("--transcripts", o.transcripts)->required();
  pscore->add_option("--out", o.out, "Metrics (JSON)");
  pscore->add_flag("--strata", o.strata, "Also score frequent and rare strata");
  pscore->add_option("--frequency", o.frequency, "Training entity frequencies from probe-build");
  pscore->add_option("--top-n", o.top_n)->capture_default_str();
  pscore->add_option("--sample", o.sample, "Score a uniform sample of n items");

  auto* ft = app.add_subcommand("make-ft-data", "Emit a multi-image fine-tuning dataset");
  ft->add_option("--task", o.task, "position, focus or vrag")->required();
  ft->add_option("--manifest", o.manifest)->required();
  ft->add_option("--count", o.count)->capture_default_str();
  ft->add_option("--k-min", o.k_min)->capture_default_str();
  ft->add_option("--k-max", o.k_max)->capture_default_str();
  ft->add_option("--labels", o.labels, "Label sidecar enabling the distinctness constraint");
  ft->add_option("--idx", o.idx, "Index over training images (vrag task)");
  ft->add_option("--split", o.split, "Source split (default train; validation for vrag)");
  ft->add_option("--prompt", o.prompt, "Original per-image prompt")->capture_default_str();
  ft->add_option("--out", o.out);

  auto* rw = app.add_subcommand("rewrite", "Generate, probe and rewrite reports");
  rw->add_option("--manifest", o.manifest)->required();
  rw->add_option("--idx", o.idx)->required();
  rw->add_option("--split", o.split, "Split to rewrite (default test)");
  rw->add_option("--limit", o.limit, "At most this many cases");
  rw->add_option("--out", o.out, "Cases (JSON lines)");

  auto* serve = app.add_subcommand("mock-serve", "Serve the mock backends over HTTP");
  serve->add_option("--host", o.host)->capture_default_str();
  serve->add_option("--port", o.port)->capture_default_str();
  serve->add_option("--chat", o.chat, "Personality behind /chat")->capture_default_str();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*serve) {
      RunConfig c = o.config_path.empty() ? RunConfig{} : RunConfig::load(o.config_path);
      if (!o.fixture.empty()) c.fixture = o.fixture;
      cmd_mock_serve(o, c);
      return kExitOk;
    }
    const auto c = effective_config(o, app);
    RunLock lock(c.run_dir);
    if (*ingest) cmd_ingest(o, c);
    if (*build) cmd_index_build(o, c);
    if (*query) cmd_index_query(o, c);
    if (*pbuild) cmd_probe_build(o, c);
    if (*probe) cmd_probe(o, c);
    if (*pscore) cmd_probe_score(o, c);
    if (*ft) cmd_make_ft_data(o, c);
    if (*rw) cmd_rewrite(o, c);
    return kExitOk;
  } catch (const ValidationError& e) {
    logger()->error("startup validation failed: {}", e.what());
  } catch (const Error& e) {
    logger()->error("{}", e.what());
  } catch (const std::exception& e) {
    logger()->error("unexpected failure: {}", e.what());
  }
  return kExitRuntime;
}

}  // namespace vrag::cli
