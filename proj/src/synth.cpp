#include "vrag/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vrag/error.hpp"

namespace vrag::synth {

const std::vector<std::string>& common_findings() {
  static const std::vector<std::string> v{"atelectasis", "cardiomegaly",     "consolidation", "emphysema",
                                          "fibrosis",    "granuloma",        "hyperinflation", "nodule",
                                          "pneumonia",   "pleural effusion", "pneumothorax",   "pulmonary edema"};
  return v;
}

namespace {

const std::vector<std::string>& modifiers() {
  static const std::vector<std::string> v{"right lower lobe", "left lower lobe", "bibasilar", "small", "moderate"};
  return v;
}

const std::vector<std::string>& symptoms() {
  static const std::vector<std::string> v{"cough", "fever", "shortness of breath", "chest pain", "fall", "hypoxia"};
  return v;
}

double gaussian(Rng& rng) {
  return std::sqrt(-2.0 * std::log(rng.unit())) * std::cos(2.0 * std::numbers::pi * rng.unit());
}

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

}  // namespace

// Made-up single-token names, so no token suffix collides with a common finding.
std::string rare_finding(std::size_t cluster) {
  static const char* const head[] = {"xantho", "myelo", "lipo",  "sarco", "angio",
                                     "histio", "osteo", "chondro", "neuro", "fibro"};
  static const char* const mid[] = {"lympho", "cysto", "plasmo", "granulo", "hemo",
                                    "melano", "adeno", "papillo", "reticulo", "spleno"};
  static const char* const tail[] = {"matosis", "cytosis", "sclerosis", "dysplasia",
                                     "blastosis", "philia", "trophy", "ectasis"};
  return std::string(head[cluster % 10]) + mid[(cluster / 10) % 10] + tail[(cluster / 100) % 8];
}

Corpus generate(const Options& o) {
  if (o.records_per_cluster == 0 || o.image_bytes == 0) throw InvalidInput("synthetic corpus options must be positive");
  const std::size_t clusters = std::max<std::size_t>(1, (o.records + o.records_per_cluster - 1) / o.records_per_cluster);
  if (clusters > 800) throw InvalidInput("synthetic corpus supports at most 800 clusters");
  const auto& common = common_findings();

  Rng rng(o.seed);
  Corpus c;
  c.common_findings = common;

  struct Cluster {
    std::string prototype;
    std::vector<std::string> findings;
    std::string rare;
  };
  std::vector<Cluster> cl(clusters);
  for (std::size_t k = 0; k < clusters; ++k) {
    cl[k].prototype.resize(o.image_bytes);
    for (auto& b : cl[k].prototype) b = static_cast<char>(rng.index(256));
    for (auto i : rng.sample_distinct(common.size(), 2)) cl[k].findings.push_back(common[i]);
    cl[k].rare = rare_finding(k);
    c.rare_findings.push_back(cl[k].rare);
  }

  std::set<std::string> gazetteer(common.begin(), common.end());
  for (const auto& base : common) {
    for (const auto& m : modifiers()) gazetteer.insert(m + " " + base);
  }
  gazetteer.insert(c.rare_findings.begin(), c.rare_findings.end());

  auto surface = [&](const std::string& base) {
    return rng.unit() < o.long_form_rate ? modifiers()[rng.index(modifiers().size())] + " " + base : base;
  };

  for (std::size_t n = 0; n < o.records; ++n) {
    const std::size_t k = n % clusters;
    const auto& cluster = cl[k];
    CorpusRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "syn%05zu", n);
    r.id = id;
    r.image = "images/" + r.id + ".bin";

    std::string bytes = cluster.prototype;
    for (auto& b : bytes) {
      const double v = static_cast<unsigned char>(b) + o.noise * gaussian(rng);
      b = static_cast<char>(static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L)));
    }

    std::set<std::string> present;
    std::vector<std::string> sentences;
    for (const auto& f : cluster.findings) {
      if (rng.unit() < o.frequent_rate) {
        present.insert(f);
        sentences.push_back("There is " + surface(f) + ".");
      }
    }
    if (rng.unit() < o.rare_rate) {
      present.insert(cluster.rare);
      sentences.push_back("Findings are consistent with " + cluster.rare + ".");
    }
    if (rng.unit() < o.negation_rate) {
      std::vector<std::string> others;
      for (const auto& f : common) {
        if (std::find(cluster.findings.begin(), cluster.findings.end(), f) == cluster.findings.end()) {
          others.push_back(f);
        }
      }
      sentences.push_back("No " + others[rng.index(others.size())] + ".");
    }
    if (present.empty()) sentences.push_back("No acute cardiopulmonary abnormality.");
    rng.shuffle(sentences);

    const std::string impression =
        present.empty() ? "Normal study." : capitalize(*present.begin()) + (present.size() > 1 ? " and other findings." : ".");
    r.text = "INDICATION: History of " + symptoms()[rng.index(symptoms().size())] + ".\nFINDINGS: " +
             join(sentences, " ") + "\nIMPRESSION: " + impression;

    auto& truth = c.fixture.visual_findings[sha256_hex(bytes)];
    truth.insert(present.begin(), present.end());
    c.truth[r.id] = present;
    c.labels[r.id] = present.empty() ? std::set<std::string>{"no finding"} : present;
    c.images[r.image] = std::move(bytes);
    c.cluster_of.push_back(k);
    c.records.push_back(std::move(r));
  }

  c.fixture.seed = o.seed;
  c.fixture.dim = o.dim;
  c.fixture.embedder = EmbedderPersonality::projection;
  c.fixture.gazetteer.assign(gazetteer.begin(), gazetteer.end());
  c.fixture.perceivable.insert(common.begin(), common.end());
  c.fixture.perception_rate = o.perception_rate;
  return c;
}

void write(const Corpus& corpus, const std::filesystem::path& dir) {
  write_file(dir / "manifest.jsonl", format_manifest(corpus.records));
  for (const auto& [path, bytes] : corpus.images) write_file(dir / path, bytes);
  write_file(dir / "fixture.json", corpus.fixture.to_json().dump(2) + "\n");
  Json labels = Json::object();
  for (const auto& [id, ls] : corpus.labels) labels[id] = ls;
  write_file(dir / "labels.json", labels.dump(2) + "\n");
}

}  // namespace vrag::synth
