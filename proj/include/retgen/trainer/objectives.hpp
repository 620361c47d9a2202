#pragma once

#include "retgen/generator/grounded_lm.hpp"
#include "retgen/retriever/index.hpp"

#include <span>
#include <vector>

namespace retgen {

/// -log sum_k exp(log_rewards_k) * softmax_k(scores). Both inputs are 1xK.
/// Throws if every reward is exactly zero.
Var marginal_nll(Var log_rewards, Var scores);

/// Plain-value version over a retrieval result: rewards are
/// p_theta(y | x, z_k) for the retrieved documents, probabilities are the
/// retrieval's softmax.
double marginal_nll(const GroundedLM& generator, std::span<const int> context, std::span<const int> target,
                    const RetrievalResult& retrieval, const DocumentStore& docs);

enum class ControlVariate { kExpectedReward, kZero, kConstant };

ControlVariate parse_control_variate(const std::string& s);
std::string to_string(ControlVariate c);

struct Baseline {
  ControlVariate mode = ControlVariate::kExpectedReward;
  double constant = 0.0;  // used when mode == kConstant
};

/// Per-document rewards p(y | z_k, x), retrieval probabilities, the control
/// variate C and the marginal p(y | x) = sum_k reward_k prob_k.
struct RewardRecord {
  std::vector<double> rewards;
  std::vector<double> probs;
  double baseline = 0.0;
  double marginal = 0.0;
};

RewardRecord make_reward_record(std::span<const double> rewards, std::span<const double> probs,
                                const Baseline& baseline);

/// Score-function estimate of grad_phi p(y | x):
///   sum_k [reward_k - C] p(z_k | x) grad_phi log p(z_k | x)
/// with the K documents held fixed and rewards treated as constants. The
/// scores are recomputed from `encoder` on a fresh tape.
Gradients retriever_grad_ac(const DualEncoder& encoder, std::span<const int> context,
                            std::span<const std::span<const int>> docs, std::span<const double> rewards,
                            const Baseline& baseline);

/// grad_phi (-log p(y | x)) = -grad_phi p(y | x) / p(y | x), from the same
/// estimator. Rewards are passed as log-rewards and rescaled by their max,
/// which leaves the ratio unchanged and avoids underflow on long targets.
Gradients retriever_grad_ac_nll(const DualEncoder& encoder, std::span<const int> context,
                                std::span<const std::span<const int>> docs, std::span<const double> log_rewards,
                                const Baseline& baseline);

/// y followed by EOS; the LM is trained and scored on this sequence.
std::vector<int> with_eos(std::span<const int> target);

}  // namespace retgen
