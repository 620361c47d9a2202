#include "retgen/trainer/joint.hpp"
#include "retgen/core/parallel.hpp"
#include "retgen/eval/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace retgen {

void JointConfig::validate() const {
  if (k < 1) throw Error("joint config: K must be >= 1");
  if (refresh_period < 1) throw Error("joint config: refresh period M must be >= 1");
  if (batch_size < 1) throw Error("joint config: batch size must be >= 1");
}

JointTrainer::JointTrainer(JointModel model, const DocumentStore& docs, JointConfig config, LshConfig lsh)
    : model_(std::move(model)),
      docs_(docs),
      config_(config),
      opt_generator_(AdamConfig{config.lr_generator}),
      opt_retriever_(AdamConfig{config.lr_retriever}),
      rng_(mix_seed(config.seed, 31)) {
  config_.validate();
  if (config_.use_retrieval) {
    if (docs_.empty()) throw Error("joint trainer: empty document store");
    if (config_.k > static_cast<int>(docs_.size())) throw Error("joint trainer: K exceeds the number of documents");
    index_.store(build_index(docs_, model_.retriever, lsh, 0));
  }
}

JointTrainer::ExampleResult JointTrainer::run_example(const CorpusExample& ex, const EmbeddingIndex* index) const {
  const std::vector<int> target = with_eos(ex.target);
  const bool train_phi = !config_.freeze_retriever && config_.use_retrieval;
  ExampleResult out;

  Tape tape;
  if (!config_.use_retrieval) {
    Var logp = model_.generator.log_prob(tape, target, ex.context, {});
    Var loss = scale(logp, -1.0);
    out.loss = loss.item();
    out.expected_reward = std::exp(logp.item());
    if (!std::isfinite(out.loss)) throw Error("train_step: non-finite loss on example '" + ex.id + "'");
    if (!config_.freeze_generator) out.grads = tape.backward(loss);
    return out;
  }

  // Candidates come from the snapshot; scores are recomputed on the tape so
  // the retriever gradient sees the current parameters.
  const RetrievalResult picked = index->retrieve(model_.retriever.query_vector(ex.context), config_.k,
                                                 config_.retrieval_mode);
  Var hx = model_.retriever.encode_query(tape, ex.context);
  std::vector<Var> scores;
  std::vector<Var> log_rewards;
  std::vector<std::span<const int>> doc_tokens;
  for (int id : picked.ids) {
    const auto& z = docs_[id].tokens;
    doc_tokens.emplace_back(z);
    scores.push_back(score(hx, model_.retriever.encode_document(tape, z)));
    log_rewards.push_back(model_.generator.log_prob(tape, target, ex.context, z));
  }
  Var s = concat(scores, 1);
  Var logr = concat(log_rewards, 1);
  Var loss = marginal_nll(logr, s);
  out.loss = loss.item();
  if (!std::isfinite(out.loss)) {
    std::ostringstream msg;
    msg << "train_step: non-finite loss on example '" << ex.id << "' (log rewards " << logr.value() << "; scores "
        << s.value() << ")";
    throw Error(msg.str());
  }
  const Tensor probs = softmax_rows(s.value());
  out.expected_reward = (logr.value().array().exp() * probs.array()).sum();

  const bool ac = train_phi && config_.phi_estimator == PhiEstimator::kActorCritic;
  if (!config_.freeze_generator || (train_phi && !ac)) out.grads = tape.backward(loss);
  if (ac) {
    // Replace whatever the tape produced for Phi with the score-function
    // estimate of the same quantity.
    Gradients phi = retriever_grad_ac_nll(model_.retriever, ex.context, doc_tokens,
                                          std::span<const double>(logr.value().data(), logr.value().size()),
                                          config_.baseline);
    Gradients merged;
    for (const Parameter* p : model_.generator.parameters()) {
      if (const Tensor* g = out.grads.find(*p)) merged.accumulate(*p, *g);
    }
    merged.add_scaled(phi, 1.0);
    out.grads = std::move(merged);
  }
  return out;
}

StepMetrics JointTrainer::train_step(std::span<const CorpusExample* const> batch) {
  if (batch.empty()) throw Error("train_step: empty batch");
  const auto t0 = std::chrono::steady_clock::now();
  model_.generator.set_trainable(!config_.freeze_generator);
  model_.retriever.set_trainable(!config_.freeze_retriever && config_.use_retrieval);
  const auto index = config_.use_retrieval ? index_.load() : nullptr;

  auto results = ordered_map(batch.size(), config_.threads,
                             [&](std::size_t i) { return run_example(*batch[i], index.get()); });

  StepMetrics m;
  Gradients total;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& r : results) {
    total.add_scaled(r.grads, inv);
    m.loss += r.loss * inv;
    m.expected_reward += r.expected_reward * inv;
  }
  model_.generator.set_trainable(true);
  model_.retriever.set_trainable(true);
  if (!config_.freeze_generator) opt_generator_.step(model_.generator.parameters(), total);
  if (!config_.freeze_retriever && config_.use_retrieval) opt_retriever_.step(model_.retriever.parameters(), total);

  ++step_;
  if (config_.use_retrieval) m.refreshed = refresh_if_due(index_, docs_, model_.retriever, step_, config_.refresh_period);
  m.step = step_;
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

StepMetrics JointTrainer::train_step(const std::vector<CorpusExample>& data) {
  if (data.empty()) throw Error("train_step: empty training set");
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<const CorpusExample*> batch;
  batch.reserve(config_.batch_size);
  for (int i = 0; i < config_.batch_size; ++i) batch.push_back(&data[pick(rng_)]);
  return train_step(batch);
}

std::vector<double> warm_start_retriever(DualEncoder& encoder, const std::vector<CorpusExample>& data,
                                         const DocumentStore& docs, const WarmStartConfig& config) {
  std::vector<const CorpusExample*> usable;
  for (const auto& ex : data) {
    if (ex.oracle_doc >= 0 && ex.oracle_doc < static_cast<int>(docs.size())) usable.push_back(&ex);
  }
  if (usable.empty()) throw Error("warm_start: no example has a resolved oracle document id");
  std::vector<double> losses;
  if (config.steps <= 0) return losses;

  Adam opt(AdamConfig{config.lr});
  Rng rng(mix_seed(config.seed, 41));
  std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
  for (int step = 0; step < config.steps; ++step) {
    std::vector<const CorpusExample*> batch;
    std::unordered_set<int> used;
    for (int tries = 0; static_cast<int>(batch.size()) < config.batch_size && tries < 20 * config.batch_size; ++tries) {
      const CorpusExample* ex = usable[pick(rng)];
      if (used.insert(ex->oracle_doc).second) batch.push_back(ex);
    }
    Tape tape;
    std::vector<Var> queries;
    std::vector<Var> keys;
    for (const auto* ex : batch) {
      queries.push_back(encoder.encode_query(tape, ex->context));
      keys.push_back(encoder.encode_document(tape, docs[ex->oracle_doc].tokens));
    }
    Var scores = matmul(concat(queries, 0), transpose(concat(keys, 0)));
    std::vector<int> diag(batch.size());
    std::iota(diag.begin(), diag.end(), 0);
    Var loss = scale(cross_entropy(scores, diag), 1.0 / static_cast<double>(batch.size()));
    losses.push_back(loss.item());
    opt.step(encoder.parameters(), tape.backward(loss));
  }
  return losses;
}

JointEval evaluate_joint(const JointModel& model, const DocumentStore& docs, const std::vector<CorpusExample>& data,
                         int k, bool use_retrieval) {
  JointEval out;
  if (data.empty()) return out;
  std::optional<EmbeddingIndex> index;
  if (use_retrieval) index = EmbeddingIndex::build(embed_documents(docs, model.retriever), LshConfig{}, 0);
  for (const auto& ex : data) {
    const std::vector<int> target = with_eos(ex.target);
    if (!use_retrieval) {
      const double lp = model.generator.log_prob(target, ex.context, {});
      out.loss -= lp;
      out.expected_reward += std::exp(lp);
    } else {
      const RetrievalResult r = index->retrieve(model.retriever.query_vector(ex.context), k, RetrievalMode::kExhaustive);
      out.loss += marginal_nll(model.generator, ex.context, target, r, docs);
      for (std::size_t i = 0; i < r.ids.size(); ++i) {
        out.expected_reward += std::exp(model.generator.log_prob(target, ex.context, docs[r.ids[i]].tokens)) * r.probs[i];
      }
    }
    ++out.count;
  }
  out.loss /= static_cast<double>(out.count);
  out.expected_reward /= static_cast<double>(out.count);
  return out;
}

std::vector<CurvePoint> retriever_only_training(JointTrainer& trainer, const std::vector<CorpusExample>& train,
                                                const std::vector<CorpusExample>& valid, long steps, long eval_every,
                                                int recall_k) {
  if (!trainer.config().freeze_generator) throw Error("retriever_only_training: the generator must be frozen");
  const bool has_oracles =
      std::any_of(valid.begin(), valid.end(), [](const CorpusExample& e) { return e.oracle_doc >= 0; });
  auto evaluate = [&](long step) {
    CurvePoint p;
    p.step = step;
    const auto& m = trainer.model();
    if (has_oracles) p.recall = recall_at_k(m.retriever, trainer.docs(), valid, recall_k).recall;
    p.expected_reward = evaluate_joint(m, trainer.docs(), valid, trainer.config().k).expected_reward;
    return p;
  };
  std::vector<CurvePoint> curve{evaluate(trainer.step())};
  for (long i = 1; i <= steps; ++i) {
    trainer.train_step(train);
    if (eval_every > 0 && (i % eval_every == 0 || i == steps)) curve.push_back(evaluate(trainer.step()));
  }
  return curve;
}

}  // namespace retgen
