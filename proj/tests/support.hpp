#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "vrag/clients.hpp"
#include "vrag/error.hpp"
#include "vrag/mock.hpp"
#include "vrag/util.hpp"

namespace vrag::testing {

// Unique scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("vrag-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// Text parts verbatim; image parts as "<<image:handle>>" lines.
inline std::string render(const ChatRequest& r) {
  std::string out;
  for (const auto& p : r.parts) {
    out += p.is_image() ? "<<image:" + p.value + ">>" : p.value;
    out += "\n";
  }
  return out;
}

// Chat client returning a fixed reply and counting calls.
class FixedChat : public ChatClient {
 public:
  explicit FixedChat(std::string reply) : reply_(std::move(reply)) {}
  ChatResponse chat(const ChatRequest& r) override {
    ++calls;
    last = r;
    return {reply_};
  }
  std::atomic<int> calls{0};
  ChatRequest last;

 private:
  std::string reply_;
};

class FailingChat : public ChatClient {
 public:
  ChatResponse chat(const ChatRequest&) override { throw TransportError("backend unavailable"); }
};

inline std::filesystem::path source_dir() { return VRAG_SOURCE_DIR; }

}  // namespace vrag::testing

#include "vrag/config.hpp"
#include "vrag/corpus.hpp"
#include "vrag/rag.hpp"
#include "vrag/synth.hpp"

namespace vrag::testing {

// A synthetic corpus on disk with an 8:1:1 split, mock clients and a
// frozen memory over the training images.
struct SynthEnv {
  explicit SynthEnv(synth::Options options = {}, std::uint64_t split_seed = 1) : dir("synth") {
    corpus = synth::generate(options);
    synth::write(corpus, dir.path());
    SplitPolicy policy;
    policy.mode = SplitPolicy::Mode::ratio;
    policy.seed = split_seed;
    records = split_corpus(corpus.records, policy);
    images = ImageStore(dir.path());
    config.fixture = dir / "fixture.json";
    config.dim = options.dim;
    clients = make_clients(config, images);
    memory = std::make_shared<const Memory>(
        build_memory(split(Split::train), *clients.embedder, images, config.dim, config.hnsw));
    retriever = std::make_unique<Retriever>(memory, records, clients.embedder, images);
  }

  std::vector<CorpusRecord> split(Split s) const { return filter_split(records, s); }

  TempDir dir;
  synth::Corpus corpus;
  std::vector<CorpusRecord> records;
  ImageStore images;
  RunConfig config;
  Clients clients;
  std::shared_ptr<const Memory> memory;
  std::unique_ptr<Retriever> retriever;
};

}  // namespace vrag::testing
