#pragma once

#include "retgen/text/vocab.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <unordered_map>
#include <string>
#include <vector>

namespace retgen {

struct CorpusLimits {
  int max_context = 256;
  int max_target = 128;
  int doc_cap = 100;
};

struct CorpusExample {
  std::string id;
  std::vector<int> context;
  std::vector<int> target;
  std::string oracle_doc_id;  // empty when unknown
  int oracle_doc = -1;        // index into the DocumentStore, -1 when unresolved
};

struct Document {
  std::string id;
  std::string title;
  std::string raw_text;
  std::vector<int> tokens;
};

/// Immutable after construction; documents are addressed by their position,
/// which is also the tie-breaking order used by retrieval.
class DocumentStore {
 public:
  DocumentStore() = default;
  explicit DocumentStore(std::vector<Document> docs);

  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  const Document& operator[](std::size_t i) const { return docs_[i]; }
  std::optional<int> find(const std::string& id) const;
  auto begin() const { return docs_.begin(); }
  auto end() const { return docs_.end(); }

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, int> by_id_;
};

struct LoadStats {
  std::size_t read = 0;
  std::size_t kept = 0;
  std::size_t malformed = 0;
  std::size_t dropped_length = 0;
  std::size_t dropped_single_sentence = 0;
  std::size_t truncated = 0;
};

/// Raw JSONL records as written by synth-data / consumed by ingest.
struct RawExample {
  std::string id;
  std::string context;
  std::string target;
  std::string oracle_doc_id;
};

struct RawDocument {
  std::string id;
  std::string title;
  std::string text;
};

/// Number of sentences in a token sequence: runs terminated by '.', '!' or
/// '?', plus a trailing unterminated run.
int count_sentences(std::span<const std::string> words);

/// Corpus records {"id","context","target","oracle_doc_id"?}. Over-length
/// examples are dropped and counted; malformed lines are skipped with a
/// warning on stderr. Throws if every record is malformed.
std::vector<CorpusExample> load_corpus(const std::filesystem::path& path, const Vocabulary& vocab,
                                       const CorpusLimits& limits = {}, LoadStats* stats = nullptr);

/// Document records {"id","title","text"}. Single-sentence documents are
/// dropped; longer ones are truncated to doc_cap tokens.
DocumentStore load_documents(const std::filesystem::path& path, const Vocabulary& vocab,
                             const CorpusLimits& limits = {}, LoadStats* stats = nullptr);

std::vector<RawExample> read_raw_corpus(const std::filesystem::path& path, LoadStats* stats = nullptr);
std::vector<RawDocument> read_raw_documents(const std::filesystem::path& path, LoadStats* stats = nullptr);

/// Tokenizes raw records with the same filters as the loaders.
std::vector<CorpusExample> tokenize_corpus(const std::vector<RawExample>& raw, const Vocabulary& vocab,
                                           const CorpusLimits& limits = {}, LoadStats* stats = nullptr);
DocumentStore tokenize_documents(const std::vector<RawDocument>& raw, const Vocabulary& vocab,
                                 const CorpusLimits& limits = {}, LoadStats* stats = nullptr);

/// Fills oracle_doc from oracle_doc_id. Returns how many resolved.
std::size_t resolve_oracles(std::vector<CorpusExample>& examples, const DocumentStore& docs);

/// JSONL writers. `header` (if not null) is written as a first line
/// {"_header": {...}}.
std::string corpus_to_jsonl(const std::vector<RawExample>& examples, const Json& header);
std::string documents_to_jsonl(const std::vector<RawDocument>& docs, const Json& header);

}  // namespace retgen
