#include "retgen/trainer/objectives.hpp"
#include "retgen/text/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace retgen {

Var marginal_nll(Var log_rewards, Var scores) {
  if (log_rewards.rows() != 1 || scores.rows() != 1 || log_rewards.cols() != scores.cols() || scores.cols() < 1) {
    throw ShapeError("marginal_nll: expected 1xK rewards and scores, got " + shape_str(log_rewards.value()) + " and " +
                     shape_str(scores.value()));
  }
  if (log_rewards.value().maxCoeff() == -std::numeric_limits<double>::infinity()) {
    throw Error("marginal_nll: every document reward is exactly zero, log of zero is undefined");
  }
  return scale(logsumexp(add(log_rewards, log_softmax(scores))), -1.0);
}

double marginal_nll(const GroundedLM& generator, std::span<const int> context, std::span<const int> target,
                    const RetrievalResult& retrieval, const DocumentStore& docs) {
  if (retrieval.ids.empty()) throw Error("marginal_nll: need at least one retrieved document");
  const auto k = static_cast<Index>(retrieval.ids.size());
  Tensor logr(1, k);
  Tensor s(1, k);
  for (Index i = 0; i < k; ++i) {
    logr(0, i) = generator.log_prob(target, context, docs[retrieval.ids[i]].tokens);
    s(0, i) = retrieval.scores[i];
  }
  Tape tape(Tape::Mode::kInference);
  return marginal_nll(tape.constant(logr), tape.constant(s)).item();
}

ControlVariate parse_control_variate(const std::string& s) {
  if (s == "expected_reward") return ControlVariate::kExpectedReward;
  if (s == "zero") return ControlVariate::kZero;
  throw Error("unknown control variate '" + s + "' (expected expected_reward or zero)");
}

std::string to_string(ControlVariate c) {
  switch (c) {
    case ControlVariate::kExpectedReward: return "expected_reward";
    case ControlVariate::kZero: return "zero";
    case ControlVariate::kConstant: return "constant";
  }
  return "?";
}

RewardRecord make_reward_record(std::span<const double> rewards, std::span<const double> probs,
                                const Baseline& baseline) {
  if (rewards.size() != probs.size()) throw ShapeError("reward record: rewards and probs differ in length");
  RewardRecord r{{rewards.begin(), rewards.end()}, {probs.begin(), probs.end()}, 0.0, 0.0};
  for (std::size_t i = 0; i < rewards.size(); ++i) r.marginal += rewards[i] * probs[i];
  switch (baseline.mode) {
    case ControlVariate::kExpectedReward: r.baseline = r.marginal; break;
    case ControlVariate::kZero: r.baseline = 0.0; break;
    case ControlVariate::kConstant: r.baseline = baseline.constant; break;
  }
  return r;
}

namespace {

// Backprop of sum_k weights_k * log_softmax_k(s) through the encoder.
Gradients weighted_log_prob_grad(const DualEncoder& encoder, std::span<const int> context,
                                 std::span<const std::span<const int>> docs, const Tensor& weights) {
  Tape tape;
  Var hx = encoder.encode_query(tape, context);
  std::vector<Var> scores;
  scores.reserve(docs.size());
  for (const auto& doc : docs) scores.push_back(score(hx, encoder.encode_document(tape, doc)));
  Var logp = log_softmax(concat(scores, 1));
  Var surrogate = matmul(logp, tape.constant(weights.transpose()));
  return tape.backward(surrogate, encoder.parameters());
}

std::vector<double> softmax_probs(const DualEncoder& encoder, std::span<const int> context,
                                  std::span<const std::span<const int>> docs) {
  const RowVector hx = encoder.query_vector(context);
  Tensor s(1, static_cast<Index>(docs.size()));
  for (std::size_t i = 0; i < docs.size(); ++i) s(0, static_cast<Index>(i)) = score(hx, encoder.document_vector(docs[i]));
  const Tensor p = softmax_rows(s);
  return {p.data(), p.data() + p.size()};
}

}  // namespace

Gradients retriever_grad_ac(const DualEncoder& encoder, std::span<const int> context,
                            std::span<const std::span<const int>> docs, std::span<const double> rewards,
                            const Baseline& baseline) {
  if (docs.size() != rewards.size() || docs.empty()) throw ShapeError("retriever_grad_ac: need one reward per document");
  const auto probs = softmax_probs(encoder, context, docs);
  const RewardRecord rec = make_reward_record(rewards, probs, baseline);
  Tensor w(1, static_cast<Index>(docs.size()));
  for (std::size_t k = 0; k < docs.size(); ++k) w(0, static_cast<Index>(k)) = (rec.rewards[k] - rec.baseline) * rec.probs[k];
  return weighted_log_prob_grad(encoder, context, docs, w);
}

Gradients retriever_grad_ac_nll(const DualEncoder& encoder, std::span<const int> context,
                                std::span<const std::span<const int>> docs, std::span<const double> log_rewards,
                                const Baseline& baseline) {
  if (docs.size() != log_rewards.size() || docs.empty()) {
    throw ShapeError("retriever_grad_ac_nll: need one reward per document");
  }
  const double top = *std::max_element(log_rewards.begin(), log_rewards.end());
  if (!std::isfinite(top)) throw Error("retriever_grad_ac_nll: every document reward is zero");
  std::vector<double> scaled(log_rewards.size());
  for (std::size_t k = 0; k < scaled.size(); ++k) scaled[k] = std::exp(log_rewards[k] - top);
  Baseline b = baseline;
  if (b.mode == ControlVariate::kConstant) b.constant *= std::exp(-top);
  const auto probs = softmax_probs(encoder, context, docs);
  const RewardRecord rec = make_reward_record(scaled, probs, b);
  Tensor w(1, static_cast<Index>(docs.size()));
  for (std::size_t k = 0; k < docs.size(); ++k) {
    w(0, static_cast<Index>(k)) = -(rec.rewards[k] - rec.baseline) * rec.probs[k] / rec.marginal;
  }
  return weighted_log_prob_grad(encoder, context, docs, w);
}

std::vector<int> with_eos(std::span<const int> target) {
  std::vector<int> out(target.begin(), target.end());
  out.push_back(Vocabulary::kEos);
  return out;
}

}  // namespace retgen
