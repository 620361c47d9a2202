#include "doctest.h"
#include "support.hpp"

#include "retgen/core/gradcheck.hpp"
#include "retgen/eval/metrics.hpp"
#include "retgen/trainer/backward.hpp"
#include "retgen/trainer/joint.hpp"

#include <cmath>
#include <utility>

using namespace retgen;
using retgen::test::make_synthetic;

namespace {

struct ToyInstance {
  DualEncoder encoder;
  std::vector<int> context;
  std::vector<std::vector<int>> docs;
  std::vector<double> rewards;

  std::vector<std::span<const int>> doc_spans() const {
    return {docs.begin(), docs.end()};
  }
  std::vector<double> log_rewards() const {
    std::vector<double> out;
    for (double r : rewards) out.push_back(std::log(r));
    return out;
  }
};

ToyInstance make_toy(std::uint64_t seed, int k = 3) {
  Rng rng(seed);
  std::uniform_int_distribution<int> tok(5, 19);
  std::uniform_int_distribution<int> len(1, 4);
  std::uniform_real_distribution<double> reward(0.05, 0.9);
  ToyInstance t{DualEncoder(20, 6, seed), {}, {}, {}};
  t.context.resize(len(rng));
  for (int& v : t.context) v = tok(rng);
  for (int i = 0; i < k; ++i) {
    std::vector<int> d(len(rng));
    for (int& v : d) v = tok(rng);
    t.docs.push_back(d);
    t.rewards.push_back(reward(rng));
  }
  return t;
}

// Autodiff of -log sum_k r_k softmax_k(s) through the encoder.
Gradients autodiff_marginal(const ToyInstance& t, double* nll = nullptr) {
  Tape tape;
  Var hx = t.encoder.encode_query(tape, t.context);
  std::vector<Var> s;
  for (const auto& d : t.docs) s.push_back(score(hx, t.encoder.encode_document(tape, d)));
  Tensor logr(1, static_cast<Index>(t.rewards.size()));
  for (std::size_t i = 0; i < t.rewards.size(); ++i) logr(0, static_cast<Index>(i)) = std::log(t.rewards[i]);
  Var loss = marginal_nll(tape.constant(logr), concat(s, 1));
  if (nll) *nll = loss.item();
  return tape.backward(loss, t.encoder.parameters());
}

std::vector<double> probs_of(const ToyInstance& t) {
  const RowVector hx = t.encoder.query_vector(t.context);
  double mx = -1e300;
  std::vector<double> s;
  for (const auto& d : t.docs) {
    s.push_back(score(hx, t.encoder.document_vector(d)));
    mx = std::max(mx, s.back());
  }
  double z = 0.0;
  for (double& v : s) z += (v = std::exp(v - mx));
  for (double& v : s) v /= z;
  return s;
}

double max_abs_diff(const Gradients& a, const Gradients& b, const ConstParameterList& params) {
  double m = 0.0;
  for (const Parameter* p : params) m = std::max(m, (a.get(*p) - b.get(*p)).cwiseAbs().maxCoeff());
  return m;
}

SyntheticConfig small_corpus() {
  SyntheticConfig c;
  c.n_docs = 20;
  c.vocab_size = 120;
  c.n_examples = 100;
  c.n_valid = 20;
  return c;
}

GeneratorConfig small_generator(int vocab) {
  GeneratorConfig g;
  g.vocab_size = vocab;
  g.dim = 8;
  g.heads = 2;
  g.layers = 1;
  g.doc_pos_offset = 16;
  g.doc_cap = 16;
  g.max_positions = 40;
  return g;
}

JointModel small_model(const retgen::test::SyntheticSetup& s, std::uint64_t seed) {
  return {GroundedLM(small_generator(s.vocab.size()), seed), DualEncoder(s.vocab.size(), 8, seed + 1)};
}

std::vector<Tensor> snapshot(const ConstParameterList& params) {
  std::vector<Tensor> out;
  for (const Parameter* p : params) out.push_back(p->value);
  return out;
}

bool same_values(const std::vector<Tensor>& a, const ConstParameterList& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (a[i] != params[i]->value) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("marginal_nll hand examples") {
  Tape t(Tape::Mode::kInference);
  Tensor one(1, 1);
  one << std::log(0.3);
  Tensor s1(1, 1);
  s1 << 5.0;
  CHECK(marginal_nll(t.constant(one), t.constant(s1)).item() == doctest::Approx(-std::log(0.3)).epsilon(1e-14));

  Tensor equal(1, 3);
  equal.setConstant(std::log(0.25));
  Tensor s3(1, 3);
  s3 << 1.0, -2.0, 0.5;
  CHECK(marginal_nll(t.constant(equal), t.constant(s3)).item() == doctest::Approx(-std::log(0.25)).epsilon(1e-14));

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> r(0.01, 1.0), sc(-3.0, 3.0);
    const int k = 1 + static_cast<int>(seed % 5);
    Tensor logr(1, k), s(1, k);
    std::vector<double> rewards(k), e(k);
    double z = 0.0;
    for (int i = 0; i < k; ++i) {
      rewards[i] = r(rng);
      logr(0, i) = std::log(rewards[i]);
      s(0, i) = sc(rng);
      e[i] = std::exp(s(0, i));
      z += e[i];
    }
    double direct = 0.0;
    for (int i = 0; i < k; ++i) direct += rewards[i] * e[i] / z;
    const double loss = marginal_nll(t.constant(logr), t.constant(s)).item();
    CHECK(std::abs(std::exp(-loss) - direct) < 1e-12);
    const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
    CHECK(std::exp(-loss) >= *lo - 1e-15);
    CHECK(std::exp(-loss) <= *hi + 1e-15);
  }

  Tensor zeros(1, 2);
  zeros.setConstant(-std::numeric_limits<double>::infinity());
  Tensor s2 = Tensor::Zero(1, 2);
  CHECK_THROWS_AS(marginal_nll(t.constant(zeros), t.constant(s2)), Error);
  CHECK_THROWS_AS(marginal_nll(t.constant(s3), t.constant(s2)), ShapeError);
}

TEST_CASE("marginal_nll gradient matches central differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ToyInstance t = make_toy(seed);
    Gradients g = autodiff_marginal(t);
    Gradients fd = finite_difference_grad(
        [&] {
          double v = 0.0;
          autodiff_marginal(t, &v);
          return v;
        },
        t.encoder.parameters());
    CHECK(max_relative_error(g, fd, std::as_const(t.encoder).parameters(), 1e-6) < 1e-4);
  }
}

TEST_CASE("reward record invariants") {
  const std::vector<double> r{0.2, 0.5, 0.9}, p{0.5, 0.3, 0.2};
  RewardRecord rec = make_reward_record(r, p, {});
  CHECK(rec.marginal == doctest::Approx(0.2 * 0.5 + 0.5 * 0.3 + 0.9 * 0.2).epsilon(1e-15));
  CHECK(rec.baseline == rec.marginal);
  CHECK(make_reward_record(r, p, {ControlVariate::kZero, 0.0}).baseline == 0.0);
  CHECK(make_reward_record(r, p, {ControlVariate::kConstant, 17.3}).baseline == 17.3);
  CHECK_THROWS_AS(make_reward_record(r, std::vector<double>{1.0}, {}), ShapeError);
  CHECK(parse_control_variate("zero") == ControlVariate::kZero);
  CHECK(parse_control_variate(to_string(ControlVariate::kExpectedReward)) == ControlVariate::kExpectedReward);
  CHECK_THROWS_AS(parse_control_variate("mean"), Error);
}

TEST_CASE("actor-critic estimate equals the autodiff gradient of the fixed-K marginal") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    ToyInstance t = make_toy(seed, 2 + static_cast<int>(seed % 4));
    const auto params = std::as_const(t.encoder).parameters();
    double nll = 0.0;
    Gradients nll_grad = autodiff_marginal(t, &nll);
    // grad p = -p grad(-log p)
    Gradients p_grad;
    p_grad.add_scaled(nll_grad, -std::exp(-nll));

    Gradients ac = retriever_grad_ac(t.encoder, t.context, t.doc_spans(), t.rewards, {});
    CHECK(max_relative_error(ac, p_grad, params, 1e-9) < 1e-6);

    Gradients ac_nll = retriever_grad_ac_nll(t.encoder, t.context, t.doc_spans(), t.log_rewards(), {});
    CHECK(max_relative_error(ac_nll, nll_grad, params, 1e-9) < 1e-6);
  }
}

TEST_CASE("actor-critic estimate is invariant to the baseline") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ToyInstance t = make_toy(seed, 3);
    const auto params = std::as_const(t.encoder).parameters();
    Gradients expected = retriever_grad_ac(t.encoder, t.context, t.doc_spans(), t.rewards, {});
    for (Baseline b : {Baseline{ControlVariate::kZero, 0.0}, Baseline{ControlVariate::kConstant, 17.3}}) {
      Gradients g = retriever_grad_ac(t.encoder, t.context, t.doc_spans(), t.rewards, b);
      CHECK(max_abs_diff(g, expected, params) < 1e-9);
      Gradients gn = retriever_grad_ac_nll(t.encoder, t.context, t.doc_spans(), t.log_rewards(), b);
      Gradients en = retriever_grad_ac_nll(t.encoder, t.context, t.doc_spans(), t.log_rewards(), {});
      CHECK(max_abs_diff(gn, en, params) < 1e-9);
    }
  }
}

TEST_CASE("equal rewards give a zero actor-critic gradient") {
  ToyInstance t = make_toy(3, 4);
  std::fill(t.rewards.begin(), t.rewards.end(), 0.4);
  Gradients g = retriever_grad_ac(t.encoder, t.context, t.doc_spans(), t.rewards, {});
  for (const Parameter* p : std::as_const(t.encoder).parameters()) CHECK(g.get(*p).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(probs_of(t).size() == 4);
}

TEST_CASE("joint config validation") {
  JointConfig c;
  CHECK_NOTHROW(c.validate());
  c.k = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.refresh_period = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("train step with zero learning rates repeats its metrics") {
  auto s = make_synthetic(small_corpus(), 1);
  JointConfig c;
  c.batch_size = 4;
  c.lr_generator = 0.0;
  c.lr_retriever = 0.0;
  c.refresh_period = 1;
  JointTrainer trainer(small_model(s, 2), s.docs, c, LshConfig{});
  std::vector<const CorpusExample*> batch{&s.train[0], &s.train[1], &s.train[2], &s.train[3]};
  StepMetrics a = trainer.train_step(batch);
  StepMetrics b = trainer.train_step(batch);
  CHECK(a.loss == b.loss);
  CHECK(a.expected_reward == b.expected_reward);
  CHECK(std::isfinite(a.loss));
  CHECK(a.expected_reward > 0.0);
  CHECK(a.expected_reward <= 1.0);
  CHECK(trainer.step() == 2);
}

TEST_CASE("frozen retriever stays unchanged and its recall is constant") {
  auto s = make_synthetic(small_corpus(), 3);
  JointConfig c;
  c.batch_size = 4;
  c.freeze_retriever = true;
  c.lr_retriever = 1e-2;
  JointTrainer trainer(small_model(s, 4), s.docs, c, LshConfig{});
  const auto before = snapshot(std::as_const(trainer.model().retriever).parameters());
  const auto gen_before = snapshot(std::as_const(trainer.model().generator).parameters());
  const double recall0 = recall_at_k(trainer.model().retriever, s.docs, s.valid, 1).recall;
  for (int i = 0; i < 5; ++i) trainer.train_step(s.train);
  CHECK(same_values(before, std::as_const(trainer.model().retriever).parameters()));
  CHECK_FALSE(same_values(gen_before, std::as_const(trainer.model().generator).parameters()));
  CHECK(recall_at_k(trainer.model().retriever, s.docs, s.valid, 1).recall == recall0);
}

TEST_CASE("both estimators drive the same retriever update") {
  auto s = make_synthetic(small_corpus(), 5);
  JointConfig c;
  c.batch_size = 4;
  c.lr_retriever = 1e-3;
  c.refresh_period = 2;
  JointConfig ac = c;
  ac.phi_estimator = PhiEstimator::kActorCritic;
  JointTrainer a(small_model(s, 6), s.docs, c, LshConfig{});
  JointTrainer b(small_model(s, 6), s.docs, ac, LshConfig{});
  std::vector<const CorpusExample*> batch{&s.train[4], &s.train[5], &s.train[6], &s.train[7]};
  const auto start = snapshot(std::as_const(a.model().retriever).parameters());
  StepMetrics ma = a.train_step(batch);
  StepMetrics mb = b.train_step(batch);
  CHECK(ma.loss == doctest::Approx(mb.loss).epsilon(1e-12));
  CHECK(ma.expected_reward == doctest::Approx(mb.expected_reward).epsilon(1e-12));
  // Adam's first step is close to lr * sign(g), so compare update directions.
  const auto pa = std::as_const(a.model().retriever).parameters();
  const auto pb = std::as_const(b.model().retriever).parameters();
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const Tensor da = pa[i]->value - start[i];
    const Tensor db = pb[i]->value - start[i];
    dot += (da.array() * db.array()).sum();
    na += da.squaredNorm();
    nb += db.squaredNorm();
  }
  REQUIRE(na > 0.0);
  CHECK(dot / std::sqrt(na * nb) > 0.999);
}

TEST_CASE("index refresh follows the period") {
  auto s = make_synthetic(small_corpus(), 7);
  JointConfig c;
  c.batch_size = 2;
  c.refresh_period = 3;
  JointTrainer trainer(small_model(s, 8), s.docs, c, LshConfig{});
  std::vector<bool> refreshed;
  for (int i = 0; i < 6; ++i) refreshed.push_back(trainer.train_step(s.train).refreshed);
  CHECK(refreshed == std::vector<bool>{false, false, true, false, false, true});
  CHECK(trainer.current_index()->snapshot_step() == 6);
}

TEST_CASE("trainer rejects invalid setups") {
  auto s = make_synthetic(small_corpus(), 9);
  JointConfig c;
  c.k = 50;
  CHECK_THROWS_AS(JointTrainer(small_model(s, 1), s.docs, c, LshConfig{}), Error);
  DocumentStore empty;
  CHECK_THROWS_AS(JointTrainer(small_model(s, 1), empty, JointConfig{}, LshConfig{}), Error);
}

TEST_CASE("warm start") {
  SyntheticConfig sc = small_corpus();
  sc.n_examples = 400;
  auto s = make_synthetic(sc, 11);
  DualEncoder enc(s.vocab.size(), 16, 12);
  const auto before = snapshot(std::as_const(enc).parameters());

  WarmStartConfig w;
  w.steps = 0;
  CHECK(warm_start_retriever(enc, s.train, s.docs, w).empty());
  CHECK(same_values(before, std::as_const(enc).parameters()));

  // Same batches at a small rate: the loss goes down monotonically.
  DualEncoder probe = enc;
  w.steps = 10;
  w.lr = 1e-3;
  w.batch_size = s.train.size() > 8 ? 8 : 1;
  std::vector<CorpusExample> fixed(s.train.begin(), s.train.begin() + 8);
  for (std::size_t i = 0; i < fixed.size(); ++i) fixed[i].oracle_doc = static_cast<int>(i);
  auto losses = warm_start_retriever(probe, fixed, s.docs, w);
  REQUIRE(losses.size() == 10);
  for (std::size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] < losses[i - 1]);

  const double random_recall = recall_at_k(enc, s.docs, s.valid, 1).recall;
  CHECK(random_recall < 0.3);
  w.steps = 200;
  w.lr = 1e-2;
  w.batch_size = 8;
  warm_start_retriever(enc, s.train, s.docs, w);
  CHECK(recall_at_k(enc, s.docs, s.valid, 1).recall > random_recall);

  std::vector<CorpusExample> no_oracle(s.train.begin(), s.train.begin() + 5);
  for (auto& e : no_oracle) e.oracle_doc = -1;
  CHECK_THROWS_AS(warm_start_retriever(enc, no_oracle, s.docs, w), Error);
}

TEST_CASE("retriever-only training: step 0 matches evaluation and lr 0 is flat") {
  auto s = make_synthetic(small_corpus(), 13);
  JointConfig c;
  c.batch_size = 4;
  c.freeze_generator = true;
  c.lr_retriever = 0.0;
  JointTrainer trainer(small_model(s, 14), s.docs, c, LshConfig{});
  const double r0 = recall_at_k(trainer.model().retriever, s.docs, s.valid, 4).recall;
  const double er0 = evaluate_joint(trainer.model(), s.docs, s.valid, c.k).expected_reward;
  auto curve = retriever_only_training(trainer, s.train, s.valid, 6, 3, 4);
  REQUIRE(curve.size() == 3);
  CHECK(curve[0].step == 0);
  REQUIRE(curve[0].recall.has_value());
  CHECK(*curve[0].recall == r0);
  CHECK(curve[0].expected_reward == doctest::Approx(er0).epsilon(1e-12));
  for (const auto& p : curve) {
    CHECK(*p.recall == *curve[0].recall);
    CHECK(p.expected_reward == curve[0].expected_reward);
  }

  JointConfig unfrozen = c;
  unfrozen.freeze_generator = false;
  JointTrainer t2(small_model(s, 14), s.docs, unfrozen, LshConfig{});
  CHECK_THROWS_AS(retriever_only_training(t2, s.train, s.valid, 1, 1, 4), Error);
}

TEST_CASE("training is reproducible for a fixed seed") {
  auto s = make_synthetic(small_corpus(), 15);
  JointConfig c;
  c.batch_size = 3;
  c.seed = 42;
  c.refresh_period = 2;
  auto run = [&] {
    JointTrainer t(small_model(s, 16), s.docs, c, LshConfig{});
    std::vector<double> losses;
    for (int i = 0; i < 4; ++i) losses.push_back(t.train_step(s.train).loss);
    return losses;
  };
  CHECK(run() == run());
}

TEST_CASE("backward model training lowers its loss") {
  auto s = make_synthetic(small_corpus(), 17);
  GeneratorConfig g = small_generator(s.vocab.size());
  GroundedLM back(g, 18);
  BackwardConfig c;
  c.steps = 60;
  c.batch_size = 8;
  c.lr = 1e-2;
  auto losses = train_backward_model(back, s.train, s.docs, c);
  REQUIRE(losses.size() == 60);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 10; ++i) {
    head += losses[i];
    tail += losses[50 + i];
  }
  CHECK(tail < head);
  std::vector<CorpusExample> none(s.train.begin(), s.train.begin() + 3);
  for (auto& e : none) e.oracle_doc = -1;
  CHECK_THROWS_AS(train_backward_model(back, none, s.docs, c), Error);
}
