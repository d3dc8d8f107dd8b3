#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"
#include "vrag/memory.hpp"

namespace vrag {
namespace {

using testing::TempDir;

Eigen::VectorXf random_vector(Rng& rng, Eigen::Index dim) {
  Eigen::VectorXf v(dim);
  for (auto& x : v) x = static_cast<float>(std::sqrt(-2.0 * std::log(rng.unit())) * std::cos(2 * std::numbers::pi * rng.unit()));
  return v;
}

Memory filled(std::size_t n, Eigen::Index dim, std::uint64_t seed, HnswParams params = {}) {
  Memory m(dim, params);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) m.insert("v" + std::to_string(i), random_vector(rng, dim));
  m.freeze();
  return m;
}

TEST(Memory, SelfQueryIsExactlyZero) {
  for (Eigen::Index dim : {3, 7, 33, 512}) {
    for (auto metric : {Metric::cosine, Metric::l2}) {
      HnswParams p;
      p.metric = metric;
      Memory m(dim, p);
      Rng rng(static_cast<std::uint64_t>(dim));
      std::vector<Eigen::VectorXf> vs;
      for (int i = 0; i < 50; ++i) {
        vs.push_back(random_vector(rng, dim));
        m.insert("v" + std::to_string(i), vs.back());
      }
      m.freeze();
      for (int i = 0; i < 50; ++i) {
        const auto hit = m.search(vs[i], 1);
        ASSERT_EQ(hit.size(), 1u);
        EXPECT_EQ(hit[0].id, "v" + std::to_string(i)) << "dim " << dim;
        EXPECT_EQ(hit[0].distance, 0.0) << "dim " << dim;
        EXPECT_EQ(m.exact_search(vs[i], 1)[0].distance, 0.0);
      }
    }
  }
}

TEST(Memory, InsertThenSearchReturnsSelf) {
  Memory m(4);
  Eigen::VectorXf v(4);
  v << 1, 2, 3, 4;
  m.insert("a", v);
  m.freeze();
  const auto hit = m.search(v, 1);
  ASSERT_EQ(hit.size(), 1u);
  EXPECT_EQ(hit[0].id, "a");
  EXPECT_EQ(hit[0].distance, 0.0);
}

TEST(Memory, WrongDimensionRejected) {
  Memory m(4);
  EXPECT_THROW(m.insert("a", Eigen::VectorXf::Ones(5)), DimensionError);
  m.insert("a", Eigen::VectorXf::Ones(4));
  m.freeze();
  EXPECT_THROW(m.search(Eigen::VectorXf::Ones(3), 1), DimensionError);
}

TEST(Memory, DuplicateIdConflicts) {
  Memory m(2);
  m.insert("a", Eigen::Vector2f(1, 0));
  EXPECT_THROW(m.insert("a", Eigen::Vector2f(0, 1)), ConflictError);
}

TEST(Memory, FrozenRejectsInsertAndUnfrozenRejectsSearch) {
  Memory m(2);
  m.insert("a", Eigen::Vector2f(1, 0));
  EXPECT_THROW(m.search(Eigen::Vector2f(1, 0), 1), StateError);
  m.freeze();
  EXPECT_THROW(m.insert("b", Eigen::Vector2f(0, 1)), StateError);
}

TEST(Memory, ZeroVectorRejectedUnderCosine) {
  Memory m(3);
  EXPECT_THROW(m.insert("z", Eigen::Vector3f::Zero()), InvalidInput);
}

TEST(Memory, EmptyIndexReturnsNothing) {
  Memory m(3);
  m.freeze();
  EXPECT_TRUE(m.search(Eigen::Vector3f(1, 0, 0), 5).empty());
  EXPECT_TRUE(m.exact_search(Eigen::Vector3f(1, 0, 0), 5).empty());
}

TEST(Memory, OrthogonalUnitVectors) {
  Memory m(3);
  m.insert("x", Eigen::Vector3f(1, 0, 0));
  m.insert("y", Eigen::Vector3f(0, 1, 0));
  m.insert("z", Eigen::Vector3f(0, 0, 1));
  m.freeze();
  const auto hits = m.search(Eigen::Vector3f(1, 0, 0), 3);
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].id, "x");
  EXPECT_EQ(hits[0].distance, 0.0);
  EXPECT_EQ(hits[1].id, "y");  // equal distances break ties by id
  EXPECT_DOUBLE_EQ(hits[1].distance, 1.0);
  EXPECT_EQ(hits[2].id, "z");
  EXPECT_DOUBLE_EQ(hits[2].distance, 1.0);
}

TEST(Memory, ExactSearchSingleVectorAndClamp) {
  Memory m(2);
  m.insert("only", Eigen::Vector2f(3, 4));
  m.freeze();
  EXPECT_EQ(m.exact_search(Eigen::Vector2f(-1, 7), 1)[0].id, "only");
  EXPECT_EQ(m.exact_search(Eigen::Vector2f(-1, 7), 10).size(), 1u);
}

TEST(Memory, ExactSearchHandComputedCosine) {
  Memory m(2);
  m.insert("e1", Eigen::Vector2f(1, 0));
  m.insert("e2", Eigen::Vector2f(1, 1));
  m.freeze();
  const auto hits = m.exact_search(Eigen::Vector2f(1, 0), 2);
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].id, "e1");
  EXPECT_EQ(hits[0].distance, 0.0);
  EXPECT_EQ(hits[1].id, "e2");
  EXPECT_NEAR(hits[1].distance, 1.0 - 1.0 / std::sqrt(2.0), 1e-6);
}

TEST(Memory, L2Distance) {
  HnswParams p;
  p.metric = Metric::l2;
  Memory m(2, p);
  m.insert("o", Eigen::Vector2f(0, 0));
  m.insert("p", Eigen::Vector2f(3, 4));
  m.freeze();
  const auto hits = m.exact_search(Eigen::Vector2f(0, 0), 2);
  EXPECT_EQ(hits[1].id, "p");
  EXPECT_NEAR(hits[1].distance, 5.0, 1e-6);
}

TEST(Memory, ThousandInsertsAllFindable) {
  const auto m = filled(1000, 16, 3);
  Rng rng(3);
  std::size_t found = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const auto v = random_vector(rng, 16);
    const auto hit = m.search(v, 1);
    found += !hit.empty() && hit[0].id == "v" + std::to_string(i);
  }
  EXPECT_GE(found, 995u);
}

TEST(Memory, RecallOnLowDimensionalData) {
  const auto m = filled(3000, 16, 11);
  Rng rng(99);
  double recall = 0;
  const int queries = 200;
  for (int q = 0; q < queries; ++q) {
    const auto v = random_vector(rng, 16);
    const auto approx = m.search(v, 5);
    const auto exact = m.exact_search(v, 5);
    int hit = 0;
    for (const auto& a : approx) {
      for (const auto& e : exact) hit += a.id == e.id;
    }
    recall += hit / 5.0;
  }
  EXPECT_GE(recall / queries, 0.95);
}

TEST(Memory, DeterministicGraphAndResults) {
  const auto a = filled(500, 32, 5);
  const auto b = filled(500, 32, 5);
  EXPECT_EQ(a.serialize(), b.serialize());
  Rng rng(8);
  for (int q = 0; q < 20; ++q) {
    const auto v = random_vector(rng, 32);
    EXPECT_EQ(a.search(v, 5), b.search(v, 5));
  }
}

TEST(Memory, QueryDispatchesOnMode) {
  const auto m = filled(200, 8, 1);
  Rng rng(4);
  const auto v = random_vector(rng, 8);
  EXPECT_EQ(m.query(v, 3, SearchMode::exact), m.exact_search(v, 3));
  EXPECT_EQ(m.query(v, 3, SearchMode::approximate), m.search(v, 3));
}

TEST(MemoryPersistence, EmptyRoundTrip) {
  TempDir dir;
  Memory m(8);
  m.freeze();
  m.save(dir / "empty.hnsw");
  const auto l = Memory::load(dir / "empty.hnsw");
  EXPECT_EQ(l.size(), 0u);
  EXPECT_EQ(l.dim(), 8);
  EXPECT_TRUE(l.search(Eigen::VectorXf::Ones(8), 3).empty());
}

TEST(MemoryPersistence, RoundTripPreservesResultsBitExact) {
  TempDir dir;
  const auto m = filled(1000, 64, 21);
  m.save(dir / "m.hnsw");
  const auto l = Memory::load(dir / "m.hnsw");
  EXPECT_EQ(l.size(), m.size());
  EXPECT_EQ(l.serialize(), m.serialize());
  Rng rng(77);
  for (int q = 0; q < 100; ++q) {
    const auto v = random_vector(rng, 64);
    const auto before = m.search(v, 5);
    const auto after = l.search(v, 5);
    ASSERT_EQ(before.size(), after.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
      EXPECT_EQ(before[i].id, after[i].id);
      EXPECT_EQ(std::bit_cast<std::uint64_t>(before[i].distance), std::bit_cast<std::uint64_t>(after[i].distance));
    }
    EXPECT_EQ(m.exact_search(v, 5), l.exact_search(v, 5));
  }
}

TEST(MemoryPersistence, LoadedVectorsMatchInserted) {
  Memory m(5);
  Rng rng(2);
  std::vector<Eigen::VectorXf> vs;
  for (int i = 0; i < 30; ++i) {
    vs.push_back(random_vector(rng, 5));
    m.insert("v" + std::to_string(i), vs.back());
  }
  m.freeze();
  const auto l = Memory::deserialize(m.serialize());
  for (std::size_t i = 0; i < vs.size(); ++i) {
    EXPECT_EQ(l.id_at(i), "v" + std::to_string(i));
    EXPECT_EQ(l.vector_at(i), vs[i]);
  }
}

TEST(MemoryPersistence, TruncatedFileRaisesChecksumError) {
  const auto bytes = filled(100, 16, 9).serialize();
  for (std::size_t cut : {bytes.size() - 1, bytes.size() / 2, std::size_t{20}}) {
    EXPECT_THROW(Memory::deserialize(std::string_view(bytes).substr(0, cut)), ChecksumError) << cut;
  }
}

TEST(MemoryPersistence, CorruptByteRaisesChecksumError) {
  auto bytes = filled(50, 16, 9).serialize();
  bytes[bytes.size() / 2] ^= 0x20;
  EXPECT_THROW(Memory::deserialize(bytes), ChecksumError);
}

TEST(MemoryPersistence, BadMagicIsFormatError) {
  EXPECT_THROW(Memory::deserialize("not an index at all"), FormatError);
}

TEST(MemoryPersistence, DoublePrecisionRoundTrip) {
  BasicMemory<double> m(3);
  m.insert("a", Eigen::Vector3d(1, 2, 3));
  m.insert("b", Eigen::Vector3d(-1, 0.5, 2));
  m.freeze();
  const auto l = BasicMemory<double>::deserialize(m.serialize());
  EXPECT_EQ(l.search(Eigen::Vector3d(1, 2, 3), 2), m.search(Eigen::Vector3d(1, 2, 3), 2));
  EXPECT_THROW(Memory::deserialize(m.serialize()), FormatError);
}

}  // namespace
}  // namespace vrag
