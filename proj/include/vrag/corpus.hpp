#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace vrag {

using Json = nlohmann::ordered_json;

enum class Split { train, validation, test };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

// Section name -> body, in order of first appearance. Repeated headers are
// merged into the first occurrence.
using Sections = std::vector<std::pair<std::string, std::string>>;

struct CorpusRecord {
  std::string id;
  std::string image;  // path, relative to the manifest directory unless absolute
  std::string text;
  std::optional<Split> split;
  Sections sections;
};

struct SplitPolicy {
  enum class Mode { official, ratio };
  Mode mode = Mode::official;
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;

  void validate() const;
};

Json to_json(const CorpusRecord& r);
CorpusRecord record_from_json(const Json& j, std::size_t line = 0);

std::vector<CorpusRecord> parse_manifest(std::istream& in);
std::vector<CorpusRecord> load_manifest(const std::filesystem::path& path);
std::string format_manifest(const std::vector<CorpusRecord>& records);

// Rewrites relative image paths so they stay valid when the manifest moves
// from `from_dir` to `to_dir`.
std::vector<CorpusRecord> rebase_images(std::vector<CorpusRecord> records, const std::filesystem::path& from_dir,
                                        const std::filesystem::path& to_dir);

std::vector<CorpusRecord> split_corpus(std::vector<CorpusRecord> records, const SplitPolicy& policy);

// Uppercase words followed by a colon at line start; group 1 is the name.
const std::regex& default_section_header();

Sections section_report(std::string_view text, const std::regex& header = default_section_header());

// Stored sections when present, otherwise computed from the text.
Sections sections_of(const CorpusRecord& r);

// Bodies of every section not in `excluded`, joined by newlines.
std::string report_body(const CorpusRecord& r, const std::set<std::string>& excluded);

std::vector<CorpusRecord> filter_split(const std::vector<CorpusRecord>& records, Split split);

}  // namespace vrag
