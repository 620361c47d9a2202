#include "retgen/decoder/moe.hpp"
#include "retgen/core/parallel.hpp"
#include "retgen/text/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace retgen {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool blocked(int token) {
  return token == Vocabulary::kPad || token == Vocabulary::kBos || token == Vocabulary::kSep;
}

int pick_greedy(const RowVector& dist) {
  int best = -1;
  for (Index v = 0; v < dist.size(); ++v) {
    if (blocked(static_cast<int>(v))) continue;
    if (best < 0 || dist[v] > dist[best]) best = static_cast<int>(v);
  }
  return best;
}

int pick_topk(const RowVector& dist, int topk, double temperature, Rng& rng) {
  std::vector<int> ids;
  for (Index v = 0; v < dist.size(); ++v) {
    if (!blocked(static_cast<int>(v)) && dist[v] > 0.0) ids.push_back(static_cast<int>(v));
  }
  if (ids.empty()) throw Error("decode: no token has positive probability");
  const std::size_t keep = std::min<std::size_t>(ids.size(), static_cast<std::size_t>(topk));
  std::partial_sort(ids.begin(), ids.begin() + keep, ids.end(), [&](int a, int b) {
    return dist[a] != dist[b] ? dist[a] > dist[b] : a < b;
  });
  ids.resize(keep);
  std::vector<double> w(keep);
  for (std::size_t i = 0; i < keep; ++i) w[i] = std::log(dist[ids[i]]) / temperature;
  const double top = *std::max_element(w.begin(), w.end());
  for (double& x : w) x = std::exp(x - top);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  return ids[pick(rng)];
}

}  // namespace

DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "greedy") return DecodeMode::kGreedy;
  if (s == "topk" || s == "topk_sampling" || s == "sample") return DecodeMode::kTopKSampling;
  throw Error("unknown decode mode '" + s + "' (expected greedy or topk)");
}

std::string to_string(DecodeMode m) { return m == DecodeMode::kGreedy ? "greedy" : "topk"; }

void DecodeConfig::validate() const {
  if (k < 1) throw Error("decode config: K must be >= 1");
  if (num_hypotheses < 1) throw Error("decode config: num_hypotheses must be >= 1");
  if (sample_topk < 1) throw Error("decode config: sample_topk must be >= 1");
  if (!(temperature > 0.0)) throw Error("decode config: temperature must be > 0");
  if (max_len < 1) throw Error("decode config: max length must be >= 1");
}

DecodeState DecodeState::start(std::span<const double> base_probs) {
  if (base_probs.empty()) throw Error("decode state: no documents");
  DecodeState s;
  s.base_probs.assign(base_probs.begin(), base_probs.end());
  s.prefix_logp.assign(base_probs.size(), 0.0);
  s.weights = s.base_probs;
  return s;
}

void DecodeState::advance(int token, std::span<const RowVector> dists) {
  if (dists.size() != prefix_logp.size()) {
    throw Error("decode state: got " + std::to_string(dists.size()) + " distributions for " +
                std::to_string(prefix_logp.size()) + " documents");
  }
  for (std::size_t k = 0; k < dists.size(); ++k) {
    if (token < 0 || token >= dists[k].size()) throw Error("decode state: token id out of range");
    prefix_logp[k] += std::log(dists[k][token]);
  }
  prefix.push_back(token);
  ++t;
  weights = correction_factor(*this).weights;
}

Correction correction_factor(const DecodeState& state) {
  const std::size_t n = state.base_probs.size();
  if (n == 0 || state.prefix_logp.size() != n) throw Error("correction_factor: inconsistent state");
  std::vector<double> joint(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double lb = state.base_probs[k] > 0.0 ? std::log(state.base_probs[k]) : kNegInf;
    joint[k] = lb + state.prefix_logp[k];
  }
  const double top = *std::max_element(joint.begin(), joint.end());
  if (!std::isfinite(top)) {
    std::ostringstream msg;
    msg << "correction_factor: the prefix has zero probability under every document at step " << state.t
        << " (prefix log-probs:";
    for (double v : state.prefix_logp) msg << ' ' << v;
    msg << ")";
    throw Error(msg.str());
  }
  double sum = 0.0;
  for (double v : joint) sum += std::exp(v - top);
  const double lse = top + std::log(sum);
  Correction c;
  c.log_factor.resize(n);
  c.weights.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    c.log_factor[k] = state.prefix_logp[k] - lse;
    c.weights[k] = std::exp(joint[k] - lse);
  }
  return c;
}

RowVector moe_next_dist(std::span<const double> weights, std::span<const RowVector> dists) {
  if (weights.size() != dists.size()) {
    throw Error("moe_next_dist: " + std::to_string(weights.size()) + " weights for " +
                std::to_string(dists.size()) + " distributions");
  }
  if (dists.empty()) throw Error("moe_next_dist: no distributions");
  RowVector out = RowVector::Zero(dists[0].size());
  for (std::size_t k = 0; k < dists.size(); ++k) {
    if (dists[k].size() != out.size()) throw Error("moe_next_dist: distributions over different vocabularies");
    out += weights[k] * dists[k];
  }
  return out;
}

DecodeResult decode_with_retrieval(const GroundedLM& generator, const DocumentStore& docs,
                                   std::span<const int> context, const RetrievalResult& retrieval,
                                   const DecodeConfig& config, Rng& rng) {
  config.validate();
  if (retrieval.size() == 0) throw Error("decode: empty retrieval");
  DecodeResult out;
  out.retrieval = retrieval;
  DecodeState state = DecodeState::start(retrieval.probs);
  const std::size_t n = retrieval.size();

  for (int step = 0; step < config.max_len; ++step) {
    std::vector<RowVector> dists = ordered_map(n, config.threads, [&](std::size_t k) {
      return generator.next_token_dist(context, docs[retrieval.ids[k]].tokens, state.prefix);
    });
    const std::vector<double>& w = config.correction ? state.weights : state.base_probs;
    const RowVector mix = moe_next_dist(w, dists);
    const int token = config.mode == DecodeMode::kGreedy
                          ? pick_greedy(mix)
                          : pick_topk(mix, config.sample_topk, config.temperature, rng);
    out.trace.push_back({token, w});
    out.forward_score += std::log(mix[token]);
    if (token == Vocabulary::kEos) break;
    state.advance(token, dists);
    out.tokens.push_back(token);
  }
  return out;
}

DecodeResult decode(const GroundedLM& generator, const DualEncoder& retriever, const EmbeddingIndex& index,
                    const DocumentStore& docs, std::span<const int> context, const DecodeConfig& config,
                    RetrievalMode retrieval_mode) {
  config.validate();
  const RetrievalResult r = index.retrieve(retriever.query_vector(context), config.k, retrieval_mode);
  Rng rng(mix_seed(config.seed, 0));
  return decode_with_retrieval(generator, docs, context, r, config, rng);
}

DecodeResult decode_without_document(const GroundedLM& generator, std::span<const int> context,
                                     const DecodeConfig& config) {
  static const DocumentStore empty(std::vector<Document>{Document{}});
  const RetrievalResult none{{0}, {0.0}, {1.0}};
  Rng rng(mix_seed(config.seed, 0));
  return decode_with_retrieval(generator, empty, context, none, config, rng);
}

}  // namespace retgen
