#pragma once

#include "retgen/decoder/moe.hpp"

#include <vector>

namespace retgen {

struct Hypothesis {
  std::vector<int> tokens;
  double forward_score = 0.0;
  double backward_score = 0.0;
};

/// num_hypotheses top-k samples. Hypothesis i draws from its own sub-stream
/// of config.seed, so it does not depend on num_hypotheses.
std::vector<Hypothesis> generate_hypotheses(const GroundedLM& generator, const DocumentStore& docs,
                                            std::span<const int> context, const RetrievalResult& retrieval,
                                            const DecodeConfig& config);

/// log of the mean over documents of p(z_k, x | y), or the mean of the logs.
double mmi_score(const GroundedLM& backward, const DocumentStore& docs, std::span<const int> context,
                 const RetrievalResult& retrieval, std::span<const int> hypothesis, bool mean_of_logs = false);

/// Scores every hypothesis and stable-sorts by backward score, then forward
/// score, both descending.
std::vector<Hypothesis> mmi_rerank(const GroundedLM& backward, const DocumentStore& docs,
                                   std::span<const int> context, const RetrievalResult& retrieval,
                                   std::vector<Hypothesis> hypotheses, bool mean_of_logs = false);

}  // namespace retgen
