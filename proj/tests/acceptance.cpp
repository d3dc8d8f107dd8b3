// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any failed.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

#include "golden_cases.hpp"
#include "pipeline.hpp"
#include "support.hpp"
#include "vrag/finetune.hpp"
#include "vrag/probing.hpp"
#include "vrag/rewrite.hpp"

namespace vrag {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

Eigen::MatrixXf random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<float> n;
  Eigen::MatrixXf m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = n(gen);
  }
  return m;
}

// Few well-separated centres plus noise; the structure real image embeddings have.
Eigen::MatrixXf clustered_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  const Eigen::Index centres = 100;
  const Eigen::MatrixXf c = random_matrix(rows, centres, seed);
  Eigen::MatrixXf m = 0.3f * random_matrix(rows, cols, seed + 1);
  for (Eigen::Index i = 0; i < cols; ++i) m.col(i) += c.col(i % centres);
  return m;
}

struct HnswRun {
  double recall = 0, speedup = 0, seconds = 0;
};

HnswRun measure_hnsw(const Eigen::MatrixXf& data, const Eigen::MatrixXf& queries, std::size_t k) {
  const auto start = Clock::now();
  Memory mem(data.rows());
  for (Eigen::Index i = 0; i < data.cols(); ++i) mem.insert("v" + std::to_string(i), data.col(i));
  mem.freeze();

  std::vector<std::vector<Neighbor>> approx(queries.cols()), exact(queries.cols());
  const auto t_approx = Clock::now();
  for (Eigen::Index q = 0; q < queries.cols(); ++q) approx[q] = mem.search(queries.col(q), k);
  const double approx_s = seconds_since(t_approx);
  HnswRun r;
  r.seconds = seconds_since(start);
  const auto t_exact = Clock::now();
  for (Eigen::Index q = 0; q < queries.cols(); ++q) exact[q] = mem.exact_search(queries.col(q), k);
  const double exact_s = seconds_since(t_exact);

  std::size_t hits = 0;
  for (Eigen::Index q = 0; q < queries.cols(); ++q) {
    std::set<std::string> truth;
    for (const auto& n : exact[q]) truth.insert(n.id);
    for (const auto& n : approx[q]) hits += truth.contains(n.id);
  }
  r.recall = static_cast<double>(hits) / static_cast<double>(k * queries.cols());
  r.speedup = exact_s / approx_s;
  return r;
}

Verdict criterion_hnsw() {
  const auto data = random_matrix(512, 10000, 11);
  const auto queries = random_matrix(512, 200, 12);
  const auto r = measure_hnsw(data, queries, 5);
  const auto cl = measure_hnsw(clustered_matrix(512, 10000, 13), clustered_matrix(512, 200, 13).eval(), 5);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "random 10k x 512: recall@5 %.3f, build+query %.1f s, speedup %.1fx "
                "(clustered 10k x 512 for reference: recall@5 %.3f, speedup %.1fx)",
                r.recall, r.seconds, r.speedup, cl.recall, cl.speedup);
  return {r.recall >= 0.95 && r.seconds < 60 && r.speedup >= 10, buf};
}

Verdict criterion_persistence() {
  testing::TempDir dir("acc-persist");
  const auto data = random_matrix(512, 2000, 21);
  Memory mem(512);
  for (Eigen::Index i = 0; i < data.cols(); ++i) mem.insert("v" + std::to_string(i), data.col(i));
  mem.freeze();
  const auto path = dir / "index.hnsw";
  mem.save(path);
  const auto loaded = Memory::load(path);
  const auto queries = random_matrix(512, 100, 22);
  std::size_t same = 0;
  for (Eigen::Index q = 0; q < queries.cols(); ++q) {
    // operator== on Neighbor compares the double distance exactly.
    same += mem.search(queries.col(q), 5) == loaded.search(queries.col(q), 5) &&
            mem.exact_search(queries.col(q), 5) == loaded.exact_search(queries.col(q), 5);
  }
  return {same == 100, std::to_string(same) + "/100 queries bit-identical after save/load"};
}

Verdict criterion_golden() {
  std::size_t ok = 0, total = 0;
  std::string bad;
  for (const auto& [name, text] : testing::golden_cases()) {
    ++total;
    const auto path = testing::golden_path(name);
    if (std::filesystem::exists(path) && read_file(path) == text) {
      ++ok;
    } else {
      bad += " " + name;
    }
  }
  for (const auto& [name, phrases] : testing::golden_phrases()) {
    for (const auto& p : phrases) {
      if (testing::golden_cases().at(name).find(p) == std::string::npos) bad += " " + name + "(phrase)";
    }
  }
  return {bad.empty(), std::to_string(ok) + "/" + std::to_string(total) + " prompt files match" +
                           (bad.empty() ? "" : "; mismatched:" + bad)};
}

Verdict criterion_metrics() {
  struct Row {
    std::size_t tp, fp, fn, tn;
    double p, r, f1;
  };
  const std::vector<Row> table{
      {2, 1, 3, 4, 2.0 / 3, 0.4, 0.5},  {5, 0, 0, 5, 1, 1, 1},         {0, 0, 4, 6, 0, 0, 0},
      {0, 3, 0, 1, 0, 0, 0},            {0, 0, 0, 9, 0, 0, 0},         {1, 1, 1, 1, 0.5, 0.5, 0.5},
      {3, 1, 0, 0, 0.75, 1, 6.0 / 7},   {1, 0, 3, 0, 1, 0.25, 0.4},    {4, 4, 2, 0, 0.5, 2.0 / 3, 8.0 / 14},
      {0, 2, 2, 2, 0, 0, 0}};
  std::size_t ok = 0;
  for (const auto& row : table) {
    std::vector<ProbeItem> items;
    std::map<std::string, Answer> pred;
    int n = 0;
    auto add = [&](std::size_t count, Answer gold, Answer p) {
      for (std::size_t i = 0; i < count; ++i) {
        ProbeItem it;
        it.record_id = "r" + std::to_string(n++);
        it.entity = "e";
        it.item_id = make_item_id(it.record_id, it.entity);
        it.gold = gold;
        items.push_back(it);
        pred[it.item_id] = p;
      }
    };
    add(row.tp, Answer::yes, Answer::yes);
    add(row.fp, Answer::no, Answer::yes);
    add(row.fn, Answer::yes, Answer::no);
    add(row.tn, Answer::no, Answer::no);
    const auto m = score(items, pred);
    auto near = [](double a, double b) { return std::abs(a - b) < 1e-12; };
    ok += m.tp == row.tp && m.fp == row.fp && m.fn == row.fn && m.tn == row.tn && near(m.precision, row.p) &&
          near(m.recall, row.r) && near(m.f1, row.f1);
  }
  return {ok == table.size(), std::to_string(ok) + "/" + std::to_string(table.size()) + " confusion matrices"};
}

Verdict criterion_canonical() {
  const std::vector<std::string> words{"right", "left", "lower", "upper", "lobe", "atelectasis", "effusion",
                                       "pleural", "small", "nodule", "opacity", "basilar", "mild", "edema"};
  Rng rng(99);
  auto phrase = [&] {
    std::vector<std::string> t(1 + rng.index(4));
    for (auto& w : t) w = words[rng.index(words.size())];
    return join(t, " ");
  };
  std::vector<std::string> vocab;
  for (int i = 0; i < 25; ++i) vocab.push_back(phrase());
  const auto m = build_canonical_map(vocab);
  const std::set<std::string> vs(vocab.begin(), vocab.end());
  std::size_t ok = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto e = phrase();
    const auto c = m.canonical(e);
    const auto te = split_whitespace(e), tc = split_whitespace(c);
    bool good = m.canonical(c) == c && tc.size() <= te.size() &&
                std::equal(tc.begin(), tc.end(), te.end() - static_cast<std::ptrdiff_t>(tc.size()));
    if (c != e) good = good && vs.contains(c);
    for (std::size_t n = 1; n < tc.size(); ++n) {
      good = good && !vs.contains(join({te.end() - static_cast<std::ptrdiff_t>(n), te.end()}, " "));
    }
    ok += good;
  }
  return {ok == 1000, std::to_string(ok) + "/1000 fuzzed entities idempotent, suffix-shaped and shortest"};
}

Json load_json(const std::filesystem::path& p) { return Json::parse(read_file(p)); }

// Criteria 6, 7 and 10 share two pipeline runs over one 300-record corpus.
struct E2E {
  testing::TempDir dir{"acc-e2e"};
  testing::PipelineResult a, b;
  E2E() {
    synth::Options o;
    o.records = 300;
    synth::write(synth::generate(o), dir / "corpus");
    a = testing::run_pipeline(dir / "corpus", dir / "run_a");
    b = testing::run_pipeline(dir / "corpus", dir / "run_b");
  }
  Json metrics(const std::string& mode) const { return load_json(dir / ("run_a/metrics_" + mode + ".json")); }
};

Verdict criterion_ordering(const E2E& e) {
  if (!e.a.ok()) return {false, "pipeline stage failed"};
  std::map<std::string, double> f1;
  std::string detail = "F1";
  for (const std::string m : {"none", "image", "text", "rar", "vrag"}) {
    f1[m] = e.metrics(m)["f1"].get<double>();
    char buf[48];
    std::snprintf(buf, sizeof buf, " %s=%.3f", m.c_str(), f1[m]);
    detail += buf;
  }
  detail += " (300 records)";
  return {f1["vrag"] >= f1["text"] && f1["text"] >= f1["image"] && f1["image"] >= f1["none"] &&
              f1["vrag"] - f1["none"] >= 0.2,
          detail};
}

Verdict criterion_rare(const E2E& e) {
  if (!e.a.ok()) return {false, "pipeline stage failed"};
  const auto v = e.metrics("vrag")["strata"]["rare"];
  const auto n = e.metrics("none")["strata"]["rare"];
  char buf[160];
  std::snprintf(buf, sizeof buf, "rare stratum (top_n=12, balanced, %zu items): F1 vrag=%.3f none=%.3f",
                v["items"].get<std::size_t>(), v["f1"].get<double>(), n["f1"].get<double>());
  return {v["items"].get<std::size_t>() > 0 && v["f1"].get<double>() > n["f1"].get<double>(), buf};
}

Verdict criterion_determinism(const E2E& e) {
  if (!e.a.ok() || !e.b.ok()) return {false, "pipeline stage failed"};
  return {e.a.digests == e.b.digests && !e.a.digests.empty(),
          std::to_string(e.a.digests.size()) + " outputs compared, " +
              (e.a.digests == e.b.digests ? "all digests equal" : "digests differ")};
}

Verdict criterion_finetune() {
  testing::TempDir dir("acc-ft");
  synth::Options o;
  o.records = 3400;
  synth::write(synth::generate(o), dir / "corpus");
  const auto corpus = (dir / "run/corpus.jsonl").string();
  const auto idx = (dir / "run/index.hnsw").string();
  const std::vector<std::string> common{"--run-dir", (dir / "run").string(), "--fixture",
                                        (dir / "corpus/fixture.json").string(), "--seed", "5"};
  auto cli = [&](std::vector<std::string> extra) {
    auto args = common;
    args.insert(args.end(), extra.begin(), extra.end());
    return testing::run_cli(args);
  };
  if (cli({"ingest", "--manifest", (dir / "corpus/manifest.jsonl").string(), "--split-mode", "ratio", "--out",
           corpus}) != 0 ||
      cli({"index", "build", "--manifest", corpus, "--out", idx}) != 0) {
    return {false, "ingest or index build failed"};
  }
  const auto labels = (dir / "corpus/labels.json").string();
  auto make = [&](const std::string& task, const std::string& out) {
    std::vector<std::string> args{"make-ft-data", "--task", task, "--manifest", corpus, "--count", "1000", "--out", out};
    if (task == "vrag") {
      args.insert(args.end(), {"--idx", idx});
    } else {
      args.insert(args.end(), {"--labels", labels});
    }
    return cli(args);
  };

  const auto records = load_manifest(corpus);
  std::map<std::string, CorpusRecord> by_id;
  for (const auto& r : records) by_id[r.id] = r;
  const auto predicate = DistinctnessPredicate::load(labels);
  SamplingOptions so;

  std::string detail;
  bool pass = true;
  for (const std::string task : {"position", "focus", "vrag"}) {
    const auto f1 = (dir / ("run/" + task + "_1.jsonl")).string();
    const auto f2 = (dir / ("run/" + task + "_2.jsonl")).string();
    if (make(task, f1) != 0 || make(task, f2) != 0) return {false, task + ": make-ft-data failed"};
    std::size_t n = 0, valid = 0, distinct = 0;
    std::istringstream lines(read_file(f1));
    for (std::string line; std::getline(lines, line);) {
      if (line.empty()) continue;
      const auto r = finetune_record_from_json(Json::parse(line));
      ++n;
      valid += check_record(r, so, &by_id).empty();
      if (task != "vrag") distinct += r.j && predicate.satisfied(r.source_ids, *r.j);
    }
    const bool same = read_file(f1) == read_file(f2);
    const bool ok = n == 1000 && valid == n && (task == "vrag" || distinct == n) && same;
    pass = pass && ok;
    detail += task + ": " + std::to_string(n) + " records, " + std::to_string(valid) + " valid" +
              (task == "vrag" ? "" : ", " + std::to_string(distinct) + " distinct") +
              (same ? ", byte-identical" : ", NOT byte-identical") + "; ";
  }
  detail.resize(detail.size() - 2);
  return {pass, detail};
}

Verdict criterion_rewrite() {
  synth::Options o;
  o.records = 300;
  testing::SynthEnv env(o);
  const auto vocab = build_canonical_map(env.corpus.fixture.gazetteer);
  const auto queries = env.split(Split::test);
  double plain_before = 0, plain_after = 0, planted_before = 0, planted_after = 0;
  for (const auto& q : queries) {
    const auto plain = run_rewrite_case(q, *env.retriever, env.clients, vocab, RewriteOptions{});
    plain_before += plain.original_f1.f1;
    plain_after += plain.revised_f1.f1;

    // Plant a finding absent from every record of the query's cluster.
    const auto cluster = env.corpus.cluster_of[std::stoul(q.id.substr(3))];
    std::set<std::string> seen;
    for (std::size_t i = 0; i < env.corpus.records.size(); ++i) {
      if (env.corpus.cluster_of[i] != cluster) continue;
      const auto& t = env.corpus.truth.at(env.corpus.records[i].id);
      seen.insert(t.begin(), t.end());
    }
    std::string planted;
    for (const auto& f : synth::common_findings()) {
      if (!seen.contains(f)) {
        planted = f;
        break;
      }
    }
    const std::string report = plain.original_report + " There is " + planted + ".";
    const auto c = run_rewrite_case(q, *env.retriever, env.clients, vocab, RewriteOptions{}, report);
    planted_before += c.original_f1.f1;
    planted_after += c.revised_f1.f1;
  }
  const double n = static_cast<double>(queries.size());
  char buf[200];
  std::snprintf(buf, sizeof buf, "%zu queries; mean entity F1 plain %.3f -> %.3f, planted %.3f -> %.3f",
                queries.size(), plain_before / n, plain_after / n, planted_before / n, planted_after / n);
  return {!queries.empty() && plain_after >= plain_before && planted_after > planted_before, buf};
}

}  // namespace
}  // namespace vrag

int main() {
  using namespace vrag;
  std::vector<std::pair<std::string, std::function<Verdict()>>> criteria;
  criteria.emplace_back("HNSW recall, runtime and speedup", criterion_hnsw);
  criteria.emplace_back("index round trip", criterion_persistence);
  criteria.emplace_back("prompt golden files", criterion_golden);
  criteria.emplace_back("probe metrics", criterion_metrics);
  criteria.emplace_back("entity canonicalisation", criterion_canonical);
  std::unique_ptr<E2E> e2e;
  auto shared = [&]() -> const E2E& {
    if (!e2e) e2e = std::make_unique<E2E>();
    return *e2e;
  };
  criteria.emplace_back("retrieval mode ordering", [&] { return criterion_ordering(shared()); });
  criteria.emplace_back("rare-entity gain", [&] { return criterion_rare(shared()); });
  criteria.emplace_back("fine-tuning data", criterion_finetune);
  criteria.emplace_back("report rewriting", criterion_rewrite);
  criteria.emplace_back("end-to-end determinism", [&] { return criterion_determinism(shared()); });

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    const auto start = Clock::now();
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s criterion %zu (%s): %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                v.detail.c_str(), seconds_since(start));
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
