#pragma once

#include "retgen/retriever/index.hpp"
#include "retgen/text/corpus.hpp"
#include "retgen/text/stopwords.hpp"

#include <optional>
#include <string>
#include <vector>

namespace retgen {

using Words = std::vector<std::string>;

// ---------------------------------------------------------------------- KMR

/// Keyword matching ratio for one instance: for each document,
/// K-words = set(z) \ set(x) after stopword removal and
/// KMR_z = |set(y) & K-words| / |K-words|; the max over documents is
/// returned. Documents with empty K-words are skipped; nullopt when every
/// document is skipped.
std::optional<double> kmr(const Words& hypothesis, const Words& context, const std::vector<Words>& documents,
                          const StopwordList& stopwords);

struct MeanWithCount {
  double mean = 0.0;
  std::size_t count = 0;      // instances that contributed
  std::size_t undefined = 0;  // instances excluded as undefined
};

/// Average over instances, excluding (and counting) undefined ones.
MeanWithCount mean_defined(const std::vector<std::optional<double>>& values);

// --------------------------------------------------------------------- BLEU

struct BleuStats {
  double score = 0.0;
  std::vector<double> precisions;  // modified n-gram precision per order
  double brevity_penalty = 1.0;
  long hyp_length = 0;
  long ref_length = 0;
};

/// Corpus BLEU: clipped n-gram counts against the max count over each
/// instance's references, closest-reference-length brevity penalty,
/// uniform weights, no smoothing. Throws on an empty hypothesis list or
/// misaligned inputs.
BleuStats bleu(const std::vector<Words>& hypotheses, const std::vector<std::vector<Words>>& references,
               int max_order = 4);

/// Mean over instances of max over references of single-reference sentence
/// BLEU (multi-reference max-pooling).
double bleu_max_pooled(const std::vector<Words>& hypotheses, const std::vector<std::vector<Words>>& references,
                       int max_order = 4);

// ---------------------------------------------------------------- diversity

/// Unique n-grams / total n-grams over the whole corpus; nullopt when no
/// hypothesis has n tokens.
std::optional<double> distinct_n(const std::vector<Words>& hypotheses, int n);
/// Shannon entropy (natural log) of the corpus n-gram distribution.
std::optional<double> entropy_n(const std::vector<Words>& hypotheses, int n);

// ---------------------------------------------------------------- retrieval

struct RecallStats {
  double recall = 0.0;
  std::size_t count = 0;
  std::size_t skipped = 0;  // oracle missing from the pool
};

/// Fraction of examples whose oracle document is in the top-K. Exhaustive
/// over freshly embedded documents unless an index and lsh mode are given.
RecallStats recall_at_k(const DualEncoder& encoder, const DocumentStore& docs, const std::vector<CorpusExample>& data,
                        int k, RetrievalMode mode = RetrievalMode::kExhaustive, const EmbeddingIndex* index = nullptr);

// ------------------------------------------------------------------- report

struct EvalReport {
  struct Entry {
    std::string metric;
    std::optional<double> value;
    std::size_t count = 0;
    std::size_t undefined = 0;
  };
  std::vector<Entry> entries;
  std::vector<std::pair<std::string, std::string>> config;

  void add(std::string metric, std::optional<double> value, std::size_t count, std::size_t undefined = 0);
  const Entry* find(const std::string& metric) const;
  /// "# key value" config lines, then "metric<TAB>value<TAB>count<TAB>undefined".
  std::string to_text() const;
};

}  // namespace retgen
