#pragma once

#include "retgen/core/optim.hpp"
#include "retgen/core/random.hpp"
#include "retgen/trainer/objectives.hpp"
#include "retgen/text/corpus.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace retgen {

/// Which route produces the retriever update. Both are exact for a fixed
/// top-K set and agree to rounding.
enum class PhiEstimator { kAutodiff, kActorCritic };

struct JointConfig {
  int k = 4;
  int refresh_period = 200;  // M
  int batch_size = 16;
  double lr_generator = 1e-3;
  double lr_retriever = 1e-4;
  long max_steps = 2000;
  std::uint64_t seed = 0;
  Baseline baseline{};
  PhiEstimator phi_estimator = PhiEstimator::kAutodiff;
  RetrievalMode retrieval_mode = RetrievalMode::kLsh;
  bool freeze_retriever = false;
  bool freeze_generator = false;
  /// false trains the generator on p(y | x) with an empty document; this is
  /// the no-retrieval baseline.
  bool use_retrieval = true;
  int threads = 1;

  void validate() const;
};

/// Generator Theta and retriever Phi trained together.
struct JointModel {
  GroundedLM generator;
  DualEncoder retriever;
};

struct StepMetrics {
  long step = 0;
  double loss = 0.0;             // batch mean of the marginal NLL
  double expected_reward = 0.0;  // batch mean of sum_k p(y|z_k,x) p(z_k|x)
  double seconds = 0.0;
  bool refreshed = false;
};

class JointTrainer {
 public:
  JointTrainer(JointModel model, const DocumentStore& docs, JointConfig config, LshConfig lsh);

  /// One optimization step over `batch`: fresh top-K retrieval per example,
  /// Theta updated from the marginal NLL, Phi from its -log gradient, then the
  /// index refreshed if M steps have passed since its snapshot.
  StepMetrics train_step(std::span<const CorpusExample* const> batch);
  /// Samples batch_size examples uniformly (with the trainer's RNG).
  StepMetrics train_step(const std::vector<CorpusExample>& data);

  long step() const { return step_; }
  const JointModel& model() const { return model_; }
  JointModel& model() { return model_; }
  const JointConfig& config() const { return config_; }
  const DocumentStore& docs() const { return docs_; }
  const IndexSlot& index() const { return index_; }
  std::shared_ptr<const EmbeddingIndex> current_index() const { return index_.load(); }

 private:
  struct ExampleResult {
    Gradients grads;
    double loss = 0.0;
    double expected_reward = 0.0;
  };
  ExampleResult run_example(const CorpusExample& ex, const EmbeddingIndex* index) const;

  JointModel model_;
  const DocumentStore& docs_;
  JointConfig config_;
  Adam opt_generator_;
  Adam opt_retriever_;
  IndexSlot index_;
  Rng rng_;
  long step_ = 0;
};

struct WarmStartConfig {
  int steps = 200;
  int batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

/// In-batch softmax contrastive pass over (x, oracle document) pairs. Batches
/// never repeat a document. Returns the per-step loss. Throws if no example
/// has a resolved oracle document.
std::vector<double> warm_start_retriever(DualEncoder& encoder, const std::vector<CorpusExample>& data,
                                         const DocumentStore& docs, const WarmStartConfig& config);

struct JointEval {
  double loss = 0.0;             // mean marginal NLL
  double expected_reward = 0.0;  // mean sum_k p(y|z_k,x) p(z_k|x)
  std::size_t count = 0;
};

/// Scores `data` against an exhaustive top-K over freshly embedded documents.
/// With use_retrieval == false the loss is -log p(y | x) with no document.
JointEval evaluate_joint(const JointModel& model, const DocumentStore& docs, const std::vector<CorpusExample>& data,
                         int k, bool use_retrieval = true);

struct CurvePoint {
  long step = 0;
  std::optional<double> recall;  // recall@K when oracle ids exist
  double expected_reward = 0.0;
};

/// Freezes Theta and trains Phi only, evaluating every `eval_every` steps
/// (including step 0) on `valid`.
std::vector<CurvePoint> retriever_only_training(JointTrainer& trainer, const std::vector<CorpusExample>& train,
                                                const std::vector<CorpusExample>& valid, long steps, long eval_every,
                                                int recall_k);

}  // namespace retgen
