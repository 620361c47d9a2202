#include "retgen/generator/grounded_lm.hpp"
#include "retgen/core/random.hpp"
#include "retgen/text/vocab.hpp"

#include <cmath>

namespace retgen {

void GeneratorConfig::validate() const {
  if (vocab_size <= Vocabulary::kNumReserved) throw Error("generator: vocab_size too small");
  if (dim < 1 || heads < 1 || layers < 0 || dim % heads != 0) {
    throw Error("generator: dim must be positive and divisible by heads");
  }
  if (doc_pos_offset < 0) throw Error("generator: doc_pos_offset must be >= 0");
  if (max_positions < doc_pos_offset + doc_cap + 1) {
    throw Error("generator: max_positions " + std::to_string(max_positions) + " < doc_pos_offset + doc_cap + 1 = " +
                std::to_string(doc_pos_offset + doc_cap + 1));
  }
}

Json GeneratorConfig::to_json() const {
  return Json{{"vocab_size", vocab_size},   {"dim", dim},
              {"heads", heads},             {"layers", layers},
              {"max_positions", max_positions}, {"doc_pos_offset", doc_pos_offset},
              {"doc_cap", doc_cap},         {"max_context", max_context},
              {"max_target", max_target},   {"tie_embeddings", tie_embeddings}};
}

GeneratorConfig GeneratorConfig::from_json(const Json& j) {
  GeneratorConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.dim = j.at("dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.layers = j.at("layers").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  c.doc_pos_offset = j.at("doc_pos_offset").get<int>();
  c.doc_cap = j.value("doc_cap", c.doc_cap);
  c.max_context = j.value("max_context", c.max_context);
  c.max_target = j.value("max_target", c.max_target);
  c.tie_embeddings = j.value("tie_embeddings", true);
  return c;
}

std::size_t InputLayout::target_count() const {
  std::size_t n = 0;
  for (char t : target) n += t ? 1 : 0;
  return n;
}

namespace {

void append(InputLayout& l, std::span<const int> tokens, int type, int first_position, bool target) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    l.tokens.push_back(tokens[i]);
    l.positions.push_back(first_position + static_cast<int>(i));
    l.types.push_back(type);
    l.target.push_back(target ? 1 : 0);
  }
}

void check_positions(const GeneratorConfig& c, const InputLayout& l) {
  for (int p : l.positions) {
    if (p >= c.max_positions) {
      throw Error("layout: position " + std::to_string(p) + " overflows max_positions " +
                  std::to_string(c.max_positions));
    }
  }
}

}  // namespace

InputLayout layout_input(const GeneratorConfig& c, std::span<const int> doc, std::span<const int> context,
                         std::span<const int> target) {
  InputLayout l;
  const int sep = Vocabulary::kSep;
  append(l, doc, InputLayout::kDocumentType, c.doc_pos_offset, false);
  append(l, std::span<const int>(&sep, 1), InputLayout::kContextType, c.doc_pos_offset + static_cast<int>(doc.size()),
         false);
  append(l, context, InputLayout::kContextType, 0, false);
  append(l, target, InputLayout::kContextType, static_cast<int>(context.size()), true);
  check_positions(c, l);
  return l;
}

InputLayout layout_backward(const GeneratorConfig& c, std::span<const int> target, std::span<const int> doc,
                            std::span<const int> context) {
  InputLayout l;
  const int sep = Vocabulary::kSep;
  const std::span<const int> sep_span(&sep, 1);
  append(l, target, InputLayout::kDocumentType, c.doc_pos_offset, false);
  append(l, sep_span, InputLayout::kContextType, c.doc_pos_offset + static_cast<int>(target.size()), false);
  append(l, doc, InputLayout::kContextType, 0, true);
  append(l, sep_span, InputLayout::kContextType, static_cast<int>(doc.size()), false);
  append(l, context, InputLayout::kContextType, static_cast<int>(doc.size()) + 1, true);
  check_positions(c, l);
  return l;
}

GroundedLM::GroundedLM(const GeneratorConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(mix_seed(seed, 21));
  const int d = config_.dim;
  const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double res_std = w_std / std::sqrt(2.0 * std::max(1, config_.layers));
  auto normal = [&](const std::string& id, Index r, Index c, double s) {
    return Parameter{id, random_normal(r, c, s, rng)};
  };
  auto ones = [](const std::string& id, Index c) { return Parameter{id, Tensor::Ones(1, c)}; };
  auto zeros = [](const std::string& id, Index c) { return Parameter{id, Tensor::Zero(1, c)}; };

  tok_emb_ = normal("generator.tok_emb", config_.vocab_size, d, 0.1);
  pos_emb_ = normal("generator.pos_emb", config_.max_positions, d, 0.1);
  type_emb_ = normal("generator.type_emb", 2, d, 0.1);
  for (int i = 0; i < config_.layers; ++i) {
    const std::string p = "generator.block" + std::to_string(i) + ".";
    blocks_.push_back(Block{ones(p + "ln1.g", d), zeros(p + "ln1.b", d),
                            normal(p + "attn.qkv.w", d, 3 * d, w_std), zeros(p + "attn.qkv.b", 3 * d),
                            normal(p + "attn.out.w", d, d, res_std), zeros(p + "attn.out.b", d),
                            ones(p + "ln2.g", d), zeros(p + "ln2.b", d),
                            normal(p + "mlp.fc.w", d, 4 * d, w_std), zeros(p + "mlp.fc.b", 4 * d),
                            normal(p + "mlp.proj.w", 4 * d, d, res_std / 2.0), zeros(p + "mlp.proj.b", d)});
  }
  lnf_g_ = ones("generator.lnf.g", d);
  lnf_b_ = zeros("generator.lnf.b", d);
  if (!config_.tie_embeddings) head_ = normal("generator.head", d, config_.vocab_size, w_std);
}

Var GroundedLM::hidden(Tape& tape, const InputLayout& layout) const {
  const auto n = static_cast<Index>(layout.size());
  if (n == 0) throw Error("generator: empty input");
  for (int t : layout.tokens) {
    if (t < 0 || t >= config_.vocab_size) throw Error("generator: token id " + std::to_string(t) + " out of vocabulary");
  }
  Var x = add(add(embedding(tape.param(tok_emb_), layout.tokens), embedding(tape.param(pos_emb_), layout.positions)),
              embedding(tape.param(type_emb_), layout.types));

  const int d = config_.dim;
  const int hd = d / config_.heads;
  Tensor mask = Tensor::Zero(n, n);
  for (Index r = 0; r < n; ++r) {
    for (Index c = r + 1; c < n; ++c) mask(r, c) = -1e9;
  }
  Var causal = tape.constant(std::move(mask));
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  for (const Block& b : blocks_) {
    Var h = layer_norm(x, tape.param(b.ln1_g), tape.param(b.ln1_b));
    Var qkv = add(matmul(h, tape.param(b.qkv_w)), tape.param(b.qkv_b));
    std::vector<Var> heads;
    heads.reserve(config_.heads);
    for (int i = 0; i < config_.heads; ++i) {
      Var q = slice(qkv, 1, i * hd, hd);
      Var k = slice(qkv, 1, d + i * hd, hd);
      Var v = slice(qkv, 1, 2 * d + i * hd, hd);
      Var att = softmax(add(scale(matmul(q, transpose(k)), attn_scale), causal));
      heads.push_back(matmul(att, v));
    }
    Var merged = heads.size() == 1 ? heads.front() : concat(heads, 1);
    x = add(x, add(matmul(merged, tape.param(b.out_w)), tape.param(b.out_b)));
    Var h2 = layer_norm(x, tape.param(b.ln2_g), tape.param(b.ln2_b));
    Var ff = gelu(add(matmul(h2, tape.param(b.fc_w)), tape.param(b.fc_b)));
    x = add(x, add(matmul(ff, tape.param(b.proj_w)), tape.param(b.proj_b)));
  }
  return layer_norm(x, tape.param(lnf_g_), tape.param(lnf_b_));
}

Var GroundedLM::logits(Tape& tape, Var rows) const {
  if (config_.tie_embeddings) return matmul(rows, transpose(tape.param(tok_emb_)));
  return matmul(rows, tape.param(head_));
}

Var GroundedLM::log_prob(Tape& tape, const InputLayout& layout) const {
  std::vector<int> rows;
  std::vector<int> targets;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (!layout.target[i]) continue;
    if (i == 0) throw Error("generator: first position cannot be a target");
    rows.push_back(static_cast<int>(i) - 1);
    targets.push_back(layout.tokens[i]);
  }
  if (rows.empty()) return tape.constant(Tensor::Zero(1, 1));
  Var h = hidden(tape, layout);
  Var picked = embedding(h, rows);
  return scale(cross_entropy(logits(tape, picked), targets), -1.0);
}

Var GroundedLM::log_prob(Tape& tape, std::span<const int> target, std::span<const int> context,
                         std::span<const int> doc) const {
  if (target.empty()) return tape.constant(Tensor::Zero(1, 1));
  return log_prob(tape, layout_input(config_, doc, context, target));
}

double GroundedLM::log_prob(std::span<const int> target, std::span<const int> context,
                            std::span<const int> doc) const {
  Tape tape(Tape::Mode::kInference);
  return log_prob(tape, target, context, doc).item();
}

RowVector GroundedLM::next_token_dist(std::span<const int> context, std::span<const int> doc,
                                      std::span<const int> prefix) const {
  Tape tape(Tape::Mode::kInference);
  const InputLayout layout = layout_input(config_, doc, context, prefix);
  Var h = hidden(tape, layout);
  Var last = slice(h, 0, static_cast<Index>(layout.size()) - 1, 1);
  return softmax_rows(logits(tape, last).value());
}

Var GroundedLM::backward_log_prob(Tape& tape, std::span<const int> doc, std::span<const int> context,
                                  std::span<const int> target) const {
  if (doc.empty() && context.empty()) return tape.constant(Tensor::Zero(1, 1));
  return log_prob(tape, layout_backward(config_, target, doc, context));
}

double GroundedLM::backward_log_prob(std::span<const int> doc, std::span<const int> context,
                                     std::span<const int> target) const {
  Tape tape(Tape::Mode::kInference);
  return backward_log_prob(tape, doc, context, target).item();
}

ParameterList GroundedLM::parameters() {
  ParameterList out{&tok_emb_, &pos_emb_, &type_emb_};
  for (Block& b : blocks_) {
    for (Parameter* p : {&b.ln1_g, &b.ln1_b, &b.qkv_w, &b.qkv_b, &b.out_w, &b.out_b, &b.ln2_g, &b.ln2_b, &b.fc_w,
                         &b.fc_b, &b.proj_w, &b.proj_b}) {
      out.push_back(p);
    }
  }
  out.push_back(&lnf_g_);
  out.push_back(&lnf_b_);
  if (!config_.tie_embeddings) out.push_back(&head_);
  return out;
}

ConstParameterList GroundedLM::parameters() const {
  auto list = const_cast<GroundedLM*>(this)->parameters();
  return {list.begin(), list.end()};
}

void GroundedLM::set_trainable(bool trainable) {
  for (Parameter* p : parameters()) p->requires_grad = trainable;
}

}  // namespace retgen
