#pragma once

// Embedding memory: a hierarchical navigable small-world graph over
// fixed-dimension image embeddings, plus an exact full-scan oracle.
//
// Lifecycle: insert() during the build phase (single writer), freeze(), then
// search()/exact_search() from any number of threads. load() returns a
// frozen memory.

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <queue>
#include <string>
#include <string_view>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <vector>

#include <zlib.h>

#include "vrag/error.hpp"
#include "vrag/util.hpp"

namespace vrag {

enum class Metric : std::uint8_t { cosine = 0, l2 = 1 };

enum class SearchMode { approximate, exact };

struct HnswParams {
  std::uint32_t m = 16;
  std::uint32_t ef_construction = 200;
  std::uint32_t ef_search = 128;
  Metric metric = Metric::cosine;
  std::uint64_t level_seed = 42;

  void validate() const {
    if (m == 0) throw InvalidInput("hnsw: m must be positive");
    if (ef_construction < m) throw InvalidInput("hnsw: ef_construction must be >= m");
    if (ef_search == 0) throw InvalidInput("hnsw: ef_search must be >= 1");
  }
};

struct Neighbor {
  std::string id;
  double distance = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

template <typename Scalar>
struct BasicEmbedding {
  std::string id;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> values;
};

using Embedding = BasicEmbedding<float>;

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  template <typename UInt>
  void le(UInt v) {
    static_assert(std::is_unsigned_v<UInt>);
    for (std::size_t i = 0; i < sizeof(UInt); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u8(std::uint8_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void i32(std::int32_t v) { le(static_cast<std::uint32_t>(v)); }
  void i64(std::int64_t v) { le(static_cast<std::uint64_t>(v)); }
  std::string& str() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data) : data_(data) {}
  template <typename UInt>
  UInt le() {
    need(sizeof(UInt));
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
      v |= static_cast<UInt>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(UInt);
    return v;
  }
  std::uint8_t u8() { return le<std::uint8_t>(); }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(le<std::uint32_t>()); }
  std::int64_t i64() { return static_cast<std::int64_t>(le<std::uint64_t>()); }
  std::string_view take(std::size_t n) {
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError("index file ends unexpectedly");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

template <typename Scalar>
using ScalarBits = std::conditional_t<sizeof(Scalar) == 4, std::uint32_t, std::uint64_t>;

}  // namespace detail

template <typename Scalar>
class BasicMemory {
  static_assert(std::is_floating_point_v<Scalar> && (sizeof(Scalar) == 4 || sizeof(Scalar) == 8));

 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  static constexpr std::uint32_t kFormatVersion = 1;
  static constexpr std::string_view kMagic{"VRAGHNSW", 8};

  explicit BasicMemory(Eigen::Index dim = 512, HnswParams params = {})
      : dim_(dim), stride_((dim + kPad - 1) / kPad * kPad), params_(params) {
    if (dim <= 0) throw InvalidInput("memory dimension must be positive");
    params_.validate();
    level_mult_ = params_.m > 1 ? 1.0 / std::log(static_cast<double>(params_.m)) : 0.0;
    rng_ = Rng(params_.level_seed);
  }

  Eigen::Index dim() const noexcept { return dim_; }
  const HnswParams& params() const noexcept { return params_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  bool frozen() const noexcept { return frozen_; }
  bool contains(const std::string& id) const { return index_of_.contains(id); }

  void insert(const BasicEmbedding<Scalar>& e) { insert(e.id, e.values); }

  void insert(const std::string& id, const Eigen::Ref<const Vector>& values) {
    if (frozen_) throw StateError("memory is frozen; inserts are rejected");
    check_vector(values);
    if (index_of_.contains(id)) throw ConflictError("duplicate embedding id: " + id);

    const auto node = static_cast<std::uint32_t>(ids_.size());
    append_column(values);
    ids_.push_back(id);
    index_of_.emplace(id, node);
    const int level = draw_level();
    links_.emplace_back(static_cast<std::size_t>(level) + 1);

    if (entry_ < 0) {
      entry_ = node;
      max_level_ = level;
      return;
    }

    const Vector q = padded(values);
    const Scalar qn = sq_norms_[node];
    auto ep = static_cast<std::uint32_t>(entry_);
    for (int l = max_level_; l > level; --l) ep = greedy_step(q, qn, ep, l);

    std::vector<std::uint32_t> entry_points{ep};
    for (int l = std::min(level, max_level_); l >= 0; --l) {
      auto found = search_layer(q, qn, entry_points, params_.ef_construction, l);
      auto chosen = select_neighbors(found, params_.m);
      auto& own = links_[node][static_cast<std::size_t>(l)];
      own.reserve(chosen.size());
      for (const auto& c : chosen) own.push_back(c.second);
      for (const auto& c : chosen) connect(c.second, node, l);
      entry_points.clear();
      for (const auto& c : found) entry_points.push_back(c.second);
    }
    if (level > max_level_) {
      entry_ = node;
      max_level_ = level;
    }
  }

  void freeze() noexcept { frozen_ = true; }

  // Approximate top-k. Sorted ascending by distance, ties broken by id.
  std::vector<Neighbor> search(const Eigen::Ref<const Vector>& query, std::size_t k) const {
    const Vector q = prepare_query(query, k);
    if (entry_ < 0) return {};
    const Scalar qn = q.dot(q);
    auto ep = static_cast<std::uint32_t>(entry_);
    for (int l = max_level_; l > 0; --l) ep = greedy_step(q, qn, ep, l);
    const std::size_t ef = std::max<std::size_t>(params_.ef_search, k);
    return finish(search_layer(q, qn, {ep}, ef, 0), k);
  }

  // Exact top-k by full scan, same distances and tie rule as search().
  std::vector<Neighbor> exact_search(const Eigen::Ref<const Vector>& query, std::size_t k) const {
    const Vector q = prepare_query(query, k);
    const Scalar qn = q.dot(q);
    std::vector<Neighbor> all;
    all.reserve(size());
    for (std::uint32_t i = 0; i < size(); ++i) all.push_back({ids_[i], distance(q, qn, i)});
    const std::size_t keep = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), by_distance_then_id);
    all.resize(keep);
    return all;
  }

  std::vector<Neighbor> query(const Eigen::Ref<const Vector>& q, std::size_t k, SearchMode mode) const {
    return mode == SearchMode::exact ? exact_search(q, k) : search(q, k);
  }

  // Distance between two vectors under this memory's metric.
  double distance_between(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) const {
    check_vector(a);
    check_vector(b);
    const Vector va = padded(a), vb = padded(b);
    return metric_distance(va, va.dot(va), vb, vb.dot(vb));
  }

  // Graph introspection.
  const std::string& id_at(std::size_t node) const { return ids_.at(node); }
  Vector vector_at(std::size_t node) const {
    if (node >= size()) throw InvalidInput("node out of range");
    return data_.col(static_cast<Eigen::Index>(node)).head(dim_);
  }
  int level_of(std::size_t node) const { return static_cast<int>(links_.at(node).size()) - 1; }
  int max_level() const noexcept { return max_level_; }
  std::int64_t entry_point() const noexcept { return entry_; }
  const std::vector<std::uint32_t>& links(std::size_t node, int layer) const {
    return links_.at(node).at(static_cast<std::size_t>(layer));
  }

  std::string serialize() const {
    detail::ByteWriter w;
    w.bytes(kMagic.data(), kMagic.size());
    w.u32(kFormatVersion);
    w.u32(sizeof(Scalar));
    w.u32(static_cast<std::uint32_t>(dim_));
    w.u32(params_.m);
    w.u32(params_.ef_construction);
    w.u32(params_.ef_search);
    w.u8(static_cast<std::uint8_t>(params_.metric));
    w.u64(params_.level_seed);
    w.u64(size());
    w.i64(entry_);
    w.i32(max_level_);
    for (std::size_t i = 0; i < size(); ++i) {
      w.u32(static_cast<std::uint32_t>(ids_[i].size()));
      w.bytes(ids_[i].data(), ids_[i].size());
      w.i32(level_of(i));
      const auto col = data_.col(static_cast<Eigen::Index>(i));
      for (Eigen::Index c = 0; c < dim_; ++c) w.le(std::bit_cast<detail::ScalarBits<Scalar>>(col[c]));
      for (const auto& layer : links_[i]) {
        w.u32(static_cast<std::uint32_t>(layer.size()));
        for (auto n : layer) w.u32(n);
      }
    }
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(w.str().data()), static_cast<uInt>(w.str().size()));
    w.u32(static_cast<std::uint32_t>(crc));
    return std::move(w.str());
  }

  void save(const std::filesystem::path& path) const {
    auto tmp = path;
    tmp += ".tmp";
    write_file(tmp, serialize());
    std::filesystem::rename(tmp, path);
  }

  static BasicMemory deserialize(std::string_view data) {
    if (data.size() < kMagic.size() || data.substr(0, kMagic.size()) != kMagic) {
      throw FormatError("not a memory index file (bad magic)");
    }
    if (data.size() < kMagic.size() + 8) throw ChecksumError("index file truncated");
    const auto body = data.substr(0, data.size() - 4);
    detail::ByteReader tail(data.substr(data.size() - 4));
    const auto stored = tail.u32();
    const auto actual = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
    if (stored != actual) throw ChecksumError("index checksum mismatch (truncated or corrupt file)");

    detail::ByteReader r(body);
    r.take(kMagic.size());
    if (const auto v = r.u32(); v != kFormatVersion) {
      throw FormatError("index format version " + std::to_string(v) + " is not supported (expected " +
                        std::to_string(kFormatVersion) + ")");
    }
    if (r.u32() != sizeof(Scalar)) throw FormatError("index scalar width does not match");
    const auto dim = static_cast<Eigen::Index>(r.u32());
    HnswParams params;
    params.m = r.u32();
    params.ef_construction = r.u32();
    params.ef_search = r.u32();
    const auto metric = r.u8();
    if (metric > 1) throw FormatError("unknown metric tag");
    params.metric = static_cast<Metric>(metric);
    params.level_seed = r.u64();

    BasicMemory mem(dim, params);
    const auto count = r.u64();
    mem.entry_ = r.i64();
    mem.max_level_ = r.i32();
    if (mem.entry_ >= static_cast<std::int64_t>(count) || (count > 0 && mem.entry_ < 0)) {
      throw FormatError("entry point out of range");
    }
    for (std::uint64_t i = 0; i < count; ++i) {
      std::string id(r.take(r.u32()));
      const auto level = r.i32();
      if (level < 0 || level > mem.max_level_) throw FormatError("node level out of range");
      Vector v(dim);
      for (Eigen::Index c = 0; c < dim; ++c) v[c] = std::bit_cast<Scalar>(r.le<detail::ScalarBits<Scalar>>());
      std::vector<std::vector<std::uint32_t>> layers(static_cast<std::size_t>(level) + 1);
      for (auto& layer : layers) {
        layer.resize(r.u32());
        for (auto& n : layer) {
          n = r.u32();
          if (n >= count) throw FormatError("link target out of range");
        }
      }
      if (!mem.index_of_.emplace(id, static_cast<std::uint32_t>(i)).second) {
        throw FormatError("duplicate id in index file: " + id);
      }
      mem.append_column(v);
      mem.ids_.push_back(std::move(id));
      mem.links_.push_back(std::move(layers));
    }
    if (!r.done()) throw FormatError("trailing bytes in index file");
    mem.frozen_ = true;
    return mem;
  }

  static BasicMemory load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

 private:
  using Candidate = std::pair<double, std::uint32_t>;

  static bool by_distance_then_id(const Neighbor& a, const Neighbor& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  }

  void check_vector(const Eigen::Ref<const Vector>& v) const {
    if (v.size() != dim_) {
      throw DimensionError("expected dimension " + std::to_string(dim_) + ", got " + std::to_string(v.size()));
    }
    if (!v.allFinite()) throw InvalidInput("embedding has non-finite components");
    if (params_.metric == Metric::cosine && v.isZero(0)) {
      throw InvalidInput("zero vector has no cosine distance");
    }
  }

  Vector prepare_query(const Eigen::Ref<const Vector>& query, std::size_t k) const {
    if (!frozen_) throw StateError("memory must be frozen before querying");
    if (k == 0) throw InvalidInput("k must be positive");
    check_vector(query);
    return padded(query);
  }

  // Columns are zero-padded to a multiple of kPad scalars so every column
  // and every padded query start on the same alignment boundary; Eigen then
  // reduces both in the same order and self-distances come out exactly 0.
  Vector padded(const Eigen::Ref<const Vector>& v) const {
    Vector out = Vector::Zero(stride_);
    out.head(dim_) = v;
    return out;
  }

  void append_column(const Eigen::Ref<const Vector>& v) {
    const auto n = static_cast<Eigen::Index>(ids_.size());
    if (n >= data_.cols()) data_.conservativeResize(stride_, std::max<Eigen::Index>(16, 2 * data_.cols()));
    data_.col(n).setZero();
    data_.col(n).head(dim_) = v;
    sq_norms_.push_back(data_.col(n).dot(data_.col(n)));
  }

  template <typename A, typename B>
  double metric_distance(const A& a, Scalar an, const B& b, Scalar bn) const {
    if (params_.metric == Metric::l2) return std::sqrt(static_cast<double>((a - b).squaredNorm()));
    // sqrt(x*x) == x exactly, so identical vectors land on distance 0.
    const double cosine = static_cast<double>(a.dot(b)) / std::sqrt(static_cast<double>(an) * static_cast<double>(bn));
    return std::clamp(1.0 - cosine, 0.0, 2.0);
  }

  double distance(const Vector& q, Scalar qn, std::uint32_t node) const {
    return metric_distance(data_.col(node), sq_norms_[node], q, qn);
  }

  double node_distance(std::uint32_t a, std::uint32_t b) const {
    return metric_distance(data_.col(b), sq_norms_[b], data_.col(a), sq_norms_[a]);
  }

  void prefetch(std::uint32_t node) const {
#if defined(__GNUC__)
    __builtin_prefetch(data_.col(node).data());
#endif
  }

  int draw_level() {
    const int level = static_cast<int>(std::floor(-std::log(rng_.unit()) * level_mult_));
    return std::min(level, 32);
  }

  std::size_t capacity(int layer) const { return layer == 0 ? 2 * std::size_t{params_.m} : params_.m; }

  std::uint32_t greedy_step(const Vector& q, Scalar qn, std::uint32_t ep, int layer) const {
    return search_layer(q, qn, {ep}, 1, layer).front().second;
  }

  // Beam search restricted to one layer; result sorted ascending.
  std::vector<Candidate> search_layer(const Vector& q, Scalar qn, const std::vector<std::uint32_t>& entry_points,
                                      std::size_t ef, int layer) const {
    auto& visited = visited_marks();
    std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> frontier;
    std::priority_queue<Candidate> best;
    for (auto ep : entry_points) {
      if (visited[ep]) continue;
      visited[ep] = 1;
      const Candidate c{distance(q, qn, ep), ep};
      frontier.push(c);
      best.push(c);
      if (best.size() > ef) best.pop();
    }
    while (!frontier.empty()) {
      const auto current = frontier.top();
      if (best.size() >= ef && current.first > best.top().first) break;
      frontier.pop();
      const auto& adj = links_[current.second];
      if (static_cast<std::size_t>(layer) >= adj.size()) continue;
      const auto& row = adj[static_cast<std::size_t>(layer)];
      for (auto n : row) prefetch(n);
      for (auto n : row) {
        if (visited[n]) continue;
        visited[n] = 1;
        const Candidate c{distance(q, qn, n), n};
        if (best.size() < ef || c < best.top()) {
          frontier.push(c);
          best.push(c);
          if (best.size() > ef) best.pop();
        }
      }
    }
    std::vector<Candidate> out(best.size());
    for (auto i = out.size(); i-- > 0; best.pop()) out[i] = best.top();
    return out;
  }

  // Diversity heuristic: keep a candidate only if it is closer to the base
  // than to every neighbor already kept.
  std::vector<Candidate> select_neighbors(const std::vector<Candidate>& sorted, std::size_t limit) const {
    std::vector<Candidate> kept;
    for (const auto& c : sorted) {
      if (kept.size() >= limit) break;
      const bool diverse = std::all_of(kept.begin(), kept.end(),
                                       [&](const Candidate& k) { return node_distance(c.second, k.second) >= c.first; });
      if (diverse) kept.push_back(c);
    }
    return kept;
  }

  void connect(std::uint32_t from, std::uint32_t to, int layer) {
    auto& adj = links_[from][static_cast<std::size_t>(layer)];
    adj.push_back(to);
    if (adj.size() <= capacity(layer)) return;
    std::vector<Candidate> cands;
    cands.reserve(adj.size());
    for (auto n : adj) cands.emplace_back(node_distance(from, n), n);
    std::sort(cands.begin(), cands.end());
    const auto kept = select_neighbors(cands, capacity(layer));
    adj.clear();
    for (const auto& c : kept) adj.push_back(c.second);
  }

  // Per-thread scratch; cleared on every use so concurrent readers never share state.
  std::vector<char>& visited_marks() const {
    thread_local std::vector<char> marks;
    marks.assign(size(), 0);
    return marks;
  }

  std::vector<Neighbor> finish(const std::vector<Candidate>& found, std::size_t k) const {
    std::vector<Neighbor> out;
    out.reserve(found.size());
    for (const auto& [d, n] : found) out.push_back({ids_[n], d});
    std::sort(out.begin(), out.end(), by_distance_then_id);
    if (out.size() > k) out.resize(k);
    return out;
  }

  static constexpr Eigen::Index kPad = 16;

  Eigen::Index dim_;
  Eigen::Index stride_;
  HnswParams params_;
  double level_mult_ = 0.0;
  Rng rng_{0};
  bool frozen_ = false;

  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> data_;
  std::vector<Scalar> sq_norms_;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::uint32_t> index_of_;
  std::vector<std::vector<std::vector<std::uint32_t>>> links_;
  std::int64_t entry_ = -1;
  int max_level_ = 0;
};

using Memory = BasicMemory<float>;

}  // namespace vrag
