#pragma once

#include "retgen/retriever/dual_encoder.hpp"
#include "retgen/text/corpus.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <vector>

namespace retgen {

struct LshConfig {
  int tables = 16;
  int bits = 8;
  /// Buckets probed per table: the query's own bucket plus the next
  /// (probes - 1) cheapest single-bit flips, ordered by hyperplane margin.
  int probes = 4;
  std::uint64_t seed = 0;
};

enum class RetrievalMode { kLsh, kExhaustive };

RetrievalMode parse_retrieval_mode(const std::string& s);
std::string to_string(RetrievalMode m);

/// Top-K documents, descending score, ties by ascending document index.
struct RetrievalResult {
  std::vector<int> ids;
  std::vector<double> scores;
  std::vector<double> probs;  // softmax over `scores`

  std::size_t size() const { return ids.size(); }
};

/// Softmax over the scores; fills `probs`.
void normalize(RetrievalResult& r);

/// Snapshot of document embeddings bucketed by L random-hyperplane
/// signatures. Documents are embedded with the usual MIPS-to-cosine
/// augmentation [h / M, sqrt(1 - |h|^2 / M^2)] (M = max norm) and queries
/// with [h / |h|, 0], so that bucket collisions follow inner-product order.
class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;

  /// `embeddings` is n x d, one row per document.
  static EmbeddingIndex build(Tensor embeddings, const LshConfig& config, long snapshot_step);

  int size() const { return static_cast<int>(embeddings_.rows()); }
  int dim() const { return static_cast<int>(embeddings_.cols()); }
  const LshConfig& config() const { return config_; }
  long snapshot_step() const { return snapshot_step_; }
  const Tensor& embeddings() const { return embeddings_; }

  /// Signature of document `doc` in table `table`.
  std::uint32_t signature(int table, int doc) const { return signatures_[table][doc]; }
  /// Number of tables document `doc` is stored in (always L).
  int table_count(int doc) const;

  /// Ascending document indices found in the probed buckets.
  std::vector<int> candidates(const RowVector& query) const;

  /// Exhaustive top-K when mode is exhaustive; otherwise top-K among LSH
  /// candidates, falling back to exhaustive when fewer than K are found.
  RetrievalResult retrieve(const RowVector& query, int k, RetrievalMode mode) const;

  void save(const std::filesystem::path& path, const Json& meta = {}) const;
  static EmbeddingIndex load(const std::filesystem::path& path, Json* meta = nullptr);

  bool operator==(const EmbeddingIndex& o) const;

 private:
  void rebuild_buckets();
  std::uint32_t hash(const RowVector& augmented, int table, RowVector* margins) const;

  LshConfig config_;
  long snapshot_step_ = 0;
  Tensor embeddings_;
  double max_norm_ = 0.0;
  Tensor hyperplanes_;  // (tables * bits) x (dim + 1)
  std::vector<std::vector<std::uint32_t>> signatures_;
  std::vector<std::unordered_map<std::uint32_t, std::vector<int>>> buckets_;
};

/// Embeds every document with the current document encoder.
Tensor embed_documents(const DocumentStore& docs, const DualEncoder& encoder);

EmbeddingIndex build_index(const DocumentStore& docs, const DualEncoder& encoder, const LshConfig& config,
                           long snapshot_step = 0);

/// Exact top-K over arbitrary candidate rows; shared by both modes.
RetrievalResult top_k(const Tensor& embeddings, const RowVector& query, std::span<const int> candidates, int k);

/// Candidate selection from the (possibly stale) index, then every returned
/// score recomputed with the current encoder and re-sorted.
RetrievalResult retrieve_fresh(const EmbeddingIndex& index, const DualEncoder& encoder, const DocumentStore& docs,
                               std::span<const int> query, int k, RetrievalMode mode);

/// Holder that readers copy a snapshot out of while a refresh swaps in a
/// newly built index.
class IndexSlot {
 public:
  IndexSlot() = default;
  explicit IndexSlot(EmbeddingIndex index) : current_(std::make_shared<const EmbeddingIndex>(std::move(index))) {}

  std::shared_ptr<const EmbeddingIndex> load() const {
    std::lock_guard lock(mu_);
    return current_;
  }
  void store(EmbeddingIndex index) {
    auto next = std::make_shared<const EmbeddingIndex>(std::move(index));
    std::lock_guard lock(mu_);
    current_ = std::move(next);
  }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const EmbeddingIndex> current_;
};

/// Rebuilds embeddings and tables iff current_step - snapshot_step >= period.
/// Returns whether a rebuild happened.
bool refresh_if_due(IndexSlot& slot, const DocumentStore& docs, const DualEncoder& encoder, long current_step,
                    int period);

}  // namespace retgen
