#pragma once

#include "retgen/core/random.hpp"
#include "retgen/generator/grounded_lm.hpp"
#include "retgen/retriever/index.hpp"
#include "retgen/text/corpus.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace retgen {

enum class DecodeMode { kGreedy, kTopKSampling };

DecodeMode parse_decode_mode(const std::string& s);
std::string to_string(DecodeMode m);

struct DecodeConfig {
  int k = 4;
  DecodeMode mode = DecodeMode::kGreedy;
  int sample_topk = 10;
  double temperature = 1.0;
  int max_len = 32;
  bool correction = true;
  int num_hypotheses = 16;
  /// MMI averages backward log-probs instead of backward probabilities.
  bool mmi_mean_of_logs = false;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

/// Running state of one MoE decode.
struct DecodeState {
  std::vector<int> prefix;
  std::vector<double> prefix_logp;  // log p(prefix | z_k, x), per document
  std::vector<double> base_probs;   // p(z_k | x)
  std::vector<double> weights;      // p(z_k | x, prefix)
  int t = 0;

  static DecodeState start(std::span<const double> base_probs);
  /// Appends `token` and adds log dist_k[token] to each document's prefix
  /// log-prob, then recomputes the corrected weights.
  void advance(int token, std::span<const RowVector> dists);
};

struct Correction {
  std::vector<double> log_factor;  // log F_t per document
  std::vector<double> weights;     // base_k * F_k, a simplex
};

/// F_t = p(prefix | z_k, x) / sum_j p(prefix | z_j, x) p(z_j | x), in log space.
Correction correction_factor(const DecodeState& state);

/// sum_k weights_k * dists_k.
RowVector moe_next_dist(std::span<const double> weights, std::span<const RowVector> dists);

struct DecodeStep {
  int token = 0;
  std::vector<double> weights;  // mixture weights used to pick `token`
};

struct DecodeResult {
  std::vector<int> tokens;      // without the final EOS
  double forward_score = 0.0;   // sum of log mixture probabilities of the emitted tokens
  std::vector<DecodeStep> trace;
  RetrievalResult retrieval;
};

/// MoE decode over an already retrieved top-K. Sampling draws from `rng`.
DecodeResult decode_with_retrieval(const GroundedLM& generator, const DocumentStore& docs,
                                   std::span<const int> context, const RetrievalResult& retrieval,
                                   const DecodeConfig& config, Rng& rng);

/// Retrieves top-K once, then decodes with an RNG seeded from config.seed.
DecodeResult decode(const GroundedLM& generator, const DualEncoder& retriever, const EmbeddingIndex& index,
                    const DocumentStore& docs, std::span<const int> context, const DecodeConfig& config,
                    RetrievalMode retrieval_mode = RetrievalMode::kLsh);

/// Decode of a generator trained without retrieval: one empty document.
DecodeResult decode_without_document(const GroundedLM& generator, std::span<const int> context,
                                     const DecodeConfig& config);

}  // namespace retgen
