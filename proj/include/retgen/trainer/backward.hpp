#pragma once

#include "retgen/generator/grounded_lm.hpp"
#include "retgen/text/corpus.hpp"

#include <cstdint>
#include <vector>

namespace retgen {

struct BackwardConfig {
  int steps = 1000;
  int batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Fits the MMI backward model on -log p(z, x | y) with z the oracle
/// document. Examples without a resolved oracle are ignored; throws if none
/// has one. Returns the per-step batch mean loss.
std::vector<double> train_backward_model(GroundedLM& backward, const std::vector<CorpusExample>& data,
                                         const DocumentStore& docs, const BackwardConfig& config);

}  // namespace retgen
