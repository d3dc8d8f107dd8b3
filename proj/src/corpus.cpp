#include "vrag/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "vrag/error.hpp"
#include "vrag/util.hpp"

namespace vrag {

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "validation" || s == "val") return Split::validation;
  if (s == "test") return Split::test;
  throw InvalidInput("unknown split: " + std::string(s));
}

void SplitPolicy::validate() const {
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::any_of(ratios.begin(), ratios.end(), [](double r) { return r < 0 || !std::isfinite(r); })) {
    throw InvalidInput("split ratios must be non-negative");
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("split ratios must sum to 1");
}

Json to_json(const CorpusRecord& r) {
  Json j;
  j["id"] = r.id;
  j["image"] = r.image;
  j["text"] = r.text;
  if (r.split) j["split"] = to_string(*r.split);
  if (!r.sections.empty()) {
    Json s = Json::object();
    for (const auto& [name, body] : r.sections) s[name] = body;
    j["sections"] = std::move(s);
  }
  return j;
}

CorpusRecord record_from_json(const Json& j, std::size_t line) {
  try {
    if (!j.is_object()) throw ParseError("record is not a JSON object", line);
    CorpusRecord r;
    r.id = j.at("id").get<std::string>();
    r.image = j.at("image").get<std::string>();
    r.text = j.at("text").get<std::string>();
    if (r.id.empty()) throw ParseError("record id is empty", line);
    if (auto it = j.find("split"); it != j.end() && !it->is_null()) r.split = parse_split(it->get<std::string>());
    if (auto it = j.find("sections"); it != j.end() && !it->is_null()) {
      for (const auto& [name, body] : it->items()) r.sections.emplace_back(name, body.get<std::string>());
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad record: ") + e.what(), line);
  } catch (const InvalidInput& e) {
    throw ParseError(e.what(), line);
  }
}

std::vector<CorpusRecord> parse_manifest(std::istream& in) {
  std::vector<CorpusRecord> out;
  std::unordered_map<std::string, std::size_t> seen;  // id -> line
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (trim(line).empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
    }
    auto rec = record_from_json(j, lineno);
    if (auto [it, fresh] = seen.emplace(rec.id, lineno); !fresh) {
      throw ConflictError("duplicate record id \"" + rec.id + "\" on lines " + std::to_string(it->second) + " and " +
                          std::to_string(lineno));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<CorpusRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  return parse_manifest(in);
}

std::string format_manifest(const std::vector<CorpusRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

std::vector<CorpusRecord> rebase_images(std::vector<CorpusRecord> records, const std::filesystem::path& from_dir,
                                        const std::filesystem::path& to_dir) {
  namespace fs = std::filesystem;
  const auto from = fs::absolute(from_dir).lexically_normal();
  const auto to = fs::absolute(to_dir).lexically_normal();
  if (from == to) return records;
  for (auto& r : records) {
    fs::path p(r.image);
    if (p.is_absolute()) continue;
    r.image = (from / p).lexically_normal().lexically_relative(to).generic_string();
  }
  return records;
}

std::vector<CorpusRecord> split_corpus(std::vector<CorpusRecord> records, const SplitPolicy& policy) {
  policy.validate();
  const auto assigned = static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const CorpusRecord& r) { return r.split.has_value(); }));
  if (policy.mode == SplitPolicy::Mode::official) {
    if (assigned != records.size()) throw InvalidInput("official split mode requires every record to carry a split");
    return records;
  }
  if (assigned != 0) throw InvalidInput("ratio split mode requires records without pre-assigned splits");

  // Largest-remainder apportionment keeps every split within one of its ratio.
  const std::size_t n = records.size();
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainders{};
  std::size_t total = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const double exact = policy.ratios[s] * static_cast<double>(n);
    counts[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainders[s] = exact - static_cast<double>(counts[s]);
    total += counts[s];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainders[a] > remainders[b]; });
  for (std::size_t i = 0; total < n; ++i, ++total) ++counts[order[i % 3]];

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(policy.seed);
  rng.shuffle(perm);
  std::size_t pos = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t c = 0; c < counts[s]; ++c) records[perm[pos++]].split = static_cast<Split>(s);
  }
  return records;
}

const std::regex& default_section_header() {
  static const std::regex re("^([A-Z][A-Z /]*):");
  return re;
}

Sections section_report(std::string_view text, const std::regex& header) {
  Sections out;
  std::string preamble;
  std::string* body = &preamble;
  bool any_header = false;

  auto add_line = [](std::string& dst, std::string_view line) {
    if (!dst.empty()) dst += '\n';
    dst += line;
  };

  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    const auto line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    std::match_results<std::string_view::const_iterator> m;
    if (std::regex_search(line.begin(), line.end(), m, header, std::regex_constants::match_continuous)) {
      any_header = true;
      const std::string name = trim(m.size() > 1 ? m[1].str() : m[0].str());
      auto it = std::find_if(out.begin(), out.end(), [&](const auto& s) { return s.first == name; });
      if (it == out.end()) {
        out.emplace_back(name, std::string{});
        it = std::prev(out.end());
      }
      body = &it->second;
      add_line(*body, line.substr(static_cast<std::size_t>(m.length(0))));
    } else {
      add_line(*body, line);
    }
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }

  if (!any_header) return {{"", std::string(text)}};
  for (auto& [name, b] : out) b = trim(b);
  if (auto p = trim(preamble); !p.empty()) out.insert(out.begin(), {"", p});
  return out;
}

Sections sections_of(const CorpusRecord& r) { return r.sections.empty() ? section_report(r.text) : r.sections; }

std::string report_body(const CorpusRecord& r, const std::set<std::string>& excluded) {
  std::vector<std::string> parts;
  for (const auto& [name, body] : sections_of(r)) {
    if (!excluded.contains(name) && !body.empty()) parts.push_back(body);
  }
  return join(parts, "\n");
}

std::vector<CorpusRecord> filter_split(const std::vector<CorpusRecord>& records, Split split) {
  std::vector<CorpusRecord> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

}  // namespace vrag
