#pragma once

#include "retgen/core/autodiff.hpp"
#include "retgen/core/io.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace retgen {

struct GeneratorConfig {
  int vocab_size = 0;
  int dim = 64;
  int heads = 2;
  int layers = 2;
  int max_positions = 192;
  /// First position id given to document tokens; context and target tokens
  /// count from 0.
  int doc_pos_offset = 64;
  int doc_cap = 100;
  int max_context = 256;
  int max_target = 128;
  bool tie_embeddings = true;

  void validate() const;
  Json to_json() const;
  static GeneratorConfig from_json(const Json& j);
};

/// Token ids with their position and token-type ids, and which positions
/// are scored by the LM loss.
struct InputLayout {
  static constexpr int kContextType = 0;
  static constexpr int kDocumentType = 1;

  std::vector<int> tokens;
  std::vector<int> positions;
  std::vector<int> types;
  std::vector<char> target;  // 1 where the token contributes to the loss

  std::size_t size() const { return tokens.size(); }
  std::size_t target_count() const;
};

/// [z] SEP [x] [y_prefix]. Document tokens get type 1 and positions
/// doc_pos_offset, doc_pos_offset+1, ...; SEP continues the document
/// positions with type 0; x and y count from 0 with type 0. Only y tokens
/// are targets. Throws if a position would overflow max_positions.
InputLayout layout_input(const GeneratorConfig& config, std::span<const int> doc, std::span<const int> context,
                         std::span<const int> target);

/// Reversed layout for the MMI backward model: [y] SEP [z] SEP [x] with y in
/// the conditioning (document-type) slot; z and x tokens are targets.
InputLayout layout_backward(const GeneratorConfig& config, std::span<const int> target, std::span<const int> doc,
                            std::span<const int> context);

/// Decoder-only transformer over an InputLayout: token + position + type
/// embeddings, pre-LN blocks with causal multi-head attention, tied (or
/// separate) output projection.
class GroundedLM {
 public:
  GroundedLM() = default;
  GroundedLM(const GeneratorConfig& config, std::uint64_t seed);

  const GeneratorConfig& config() const { return config_; }

  /// Sum of log p(token | prefix) over the layout's target positions (1x1).
  Var log_prob(Tape& tape, const InputLayout& layout) const;

  /// log p(y | x, z).
  Var log_prob(Tape& tape, std::span<const int> target, std::span<const int> context,
               std::span<const int> doc) const;
  double log_prob(std::span<const int> target, std::span<const int> context, std::span<const int> doc) const;

  /// p(. | x, z, y_prefix) over the vocabulary.
  RowVector next_token_dist(std::span<const int> context, std::span<const int> doc,
                            std::span<const int> prefix) const;

  /// log p(z, x | y) under the reversed layout; use on a backward model.
  double backward_log_prob(std::span<const int> doc, std::span<const int> context,
                           std::span<const int> target) const;
  Var backward_log_prob(Tape& tape, std::span<const int> doc, std::span<const int> context,
                        std::span<const int> target) const;

  ParameterList parameters();
  ConstParameterList parameters() const;
  void set_trainable(bool trainable);

 private:
  struct Block {
    Parameter ln1_g, ln1_b, qkv_w, qkv_b, out_w, out_b;
    Parameter ln2_g, ln2_b, fc_w, fc_b, proj_w, proj_b;
  };

  Var hidden(Tape& tape, const InputLayout& layout) const;
  Var logits(Tape& tape, Var rows) const;

  GeneratorConfig config_;
  Parameter tok_emb_, pos_emb_, type_emb_, lnf_g_, lnf_b_, head_;
  std::vector<Block> blocks_;
};

}  // namespace retgen
