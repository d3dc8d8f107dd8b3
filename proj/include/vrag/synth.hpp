#pragma once

// Synthetic image/report corpus with cluster structure: images in a cluster
// are noisy copies of one prototype and their reports share findings, so
// nearest neighbours carry the query's entities.

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vrag/corpus.hpp"
#include "vrag/mock.hpp"

namespace vrag::synth {

struct Options {
  std::size_t records = 30;
  std::size_t records_per_cluster = 10;
  std::uint64_t seed = 7;
  std::size_t image_bytes = 256;
  double noise = 12.0;           // per-byte Gaussian noise around the prototype
  double frequent_rate = 0.85;   // chance a record shows each cluster finding
  double rare_rate = 0.9;        // chance a record shows the cluster's rare finding
  double long_form_rate = 0.3;   // chance a finding is written with a location modifier
  double negation_rate = 0.5;    // chance of one negated out-of-cluster finding
  double perception_rate = 0.5;
  std::size_t dim = 512;
};

struct Corpus {
  std::vector<CorpusRecord> records;            // image paths relative to the corpus directory
  std::map<std::string, std::string> images;    // relative path -> bytes
  MockFixture fixture;
  std::map<std::string, std::set<std::string>> labels;  // record id -> present findings
  std::map<std::string, std::set<std::string>> truth;   // record id -> present canonical findings
  std::vector<std::string> common_findings;
  std::vector<std::string> rare_findings;       // one per cluster
  std::vector<std::size_t> cluster_of;          // parallel to records
};

const std::vector<std::string>& common_findings();
std::string rare_finding(std::size_t cluster);

Corpus generate(const Options& options);

// Writes manifest.jsonl, images/, fixture.json and labels.json.
void write(const Corpus& corpus, const std::filesystem::path& dir);

}  // namespace vrag::synth
