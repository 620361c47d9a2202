#include "retgen/trainer/backward.hpp"

#include "retgen/core/optim.hpp"
#include "retgen/core/parallel.hpp"
#include "retgen/core/random.hpp"

#include <cmath>

namespace retgen {

std::vector<double> train_backward_model(GroundedLM& backward, const std::vector<CorpusExample>& data,
                                         const DocumentStore& docs, const BackwardConfig& config) {
  std::vector<const CorpusExample*> usable;
  for (const auto& ex : data) {
    if (ex.oracle_doc >= 0 && ex.oracle_doc < static_cast<int>(docs.size())) usable.push_back(&ex);
  }
  if (usable.empty()) throw Error("backward training: no example has a resolved oracle document id");
  if (config.batch_size < 1) throw Error("backward training: batch size must be >= 1");

  std::vector<double> losses;
  Adam opt(AdamConfig{config.lr});
  Rng rng(mix_seed(config.seed, 53));
  std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
  const double inv = 1.0 / config.batch_size;
  for (int step = 0; step < config.steps; ++step) {
    std::vector<const CorpusExample*> batch(config.batch_size);
    for (auto& ex : batch) ex = usable[pick(rng)];
    struct Result {
      Gradients grads;
      double loss = 0.0;
    };
    auto results = ordered_map(batch.size(), config.threads, [&](std::size_t i) {
      const CorpusExample& ex = *batch[i];
      Tape tape;
      Var loss = scale(backward.backward_log_prob(tape, docs[ex.oracle_doc].tokens, ex.context, ex.target), -1.0);
      Result r;
      r.loss = loss.item();
      if (!std::isfinite(r.loss)) throw Error("backward training: non-finite loss on example '" + ex.id + "'");
      r.grads = tape.backward(loss);
      return r;
    });
    Gradients total;
    double loss = 0.0;
    for (const auto& r : results) {
      total.add_scaled(r.grads, inv);
      loss += r.loss * inv;
    }
    opt.step(backward.parameters(), total);
    losses.push_back(loss);
  }
  return losses;
}

}  // namespace retgen
