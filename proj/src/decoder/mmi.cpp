#include "retgen/decoder/mmi.hpp"
#include "retgen/core/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace retgen {

std::vector<Hypothesis> generate_hypotheses(const GroundedLM& generator, const DocumentStore& docs,
                                            std::span<const int> context, const RetrievalResult& retrieval,
                                            const DecodeConfig& config) {
  config.validate();
  DecodeConfig one = config;
  one.mode = DecodeMode::kTopKSampling;
  one.threads = 1;
  return ordered_map(static_cast<std::size_t>(config.num_hypotheses), config.threads, [&](std::size_t i) {
    Rng rng(mix_seed(config.seed, 1000 + i));
    DecodeResult r = decode_with_retrieval(generator, docs, context, retrieval, one, rng);
    return Hypothesis{std::move(r.tokens), r.forward_score, 0.0};
  });
}

double mmi_score(const GroundedLM& backward, const DocumentStore& docs, std::span<const int> context,
                 const RetrievalResult& retrieval, std::span<const int> hypothesis, bool mean_of_logs) {
  if (retrieval.size() == 0) throw Error("mmi_score: empty retrieval");
  Tensor logs(1, static_cast<Index>(retrieval.size()));
  for (std::size_t k = 0; k < retrieval.size(); ++k) {
    logs(0, static_cast<Index>(k)) = backward.backward_log_prob(docs[retrieval.ids[k]].tokens, context, hypothesis);
  }
  if (mean_of_logs) return logs.mean();
  return logsumexp(logs) - std::log(static_cast<double>(retrieval.size()));
}

std::vector<Hypothesis> mmi_rerank(const GroundedLM& backward, const DocumentStore& docs,
                                   std::span<const int> context, const RetrievalResult& retrieval,
                                   std::vector<Hypothesis> hypotheses, bool mean_of_logs) {
  for (auto& h : hypotheses) h.backward_score = mmi_score(backward, docs, context, retrieval, h.tokens, mean_of_logs);
  std::stable_sort(hypotheses.begin(), hypotheses.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.backward_score != b.backward_score) return a.backward_score > b.backward_score;
    return a.forward_score > b.forward_score;
  });
  return hypotheses;
}

}  // namespace retgen
