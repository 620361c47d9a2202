#pragma once

#include "retgen/text/corpus.hpp"

#include <cstdint>

namespace retgen {

/// Grounded-copy corpus. Each document is "<key words> . <fact words> .";
/// each example's context holds one document's key words shuffled among
/// distractors and its target is that document's fact words.
struct SyntheticConfig {
  int n_docs = 100;
  int vocab_size = 400;  // distinct word types available for keys + content
  int key_len = 2;
  int fact_len = 3;
  int distractor_len = 3;
  int n_examples = 2000;
  int n_valid = 200;
  /// The last heldout_docs documents never appear in train or valid
  /// examples. n_heldout examples are drawn from them only.
  int heldout_docs = 0;
  int n_heldout = 0;
  /// Extra (context, oracle document) pairs over all documents, for
  /// retriever warm-start only.
  int n_retriever_pairs = 0;
};

struct SyntheticCorpus {
  std::vector<RawDocument> documents;
  std::vector<RawExample> train;
  std::vector<RawExample> valid;
  std::vector<RawExample> heldout;
  std::vector<RawExample> retriever_pairs;
};

SyntheticCorpus make_synthetic_grounded_corpus(const SyntheticConfig& config, std::uint64_t seed);

}  // namespace retgen
