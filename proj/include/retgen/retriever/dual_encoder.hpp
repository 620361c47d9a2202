#pragma once

#include "retgen/core/autodiff.hpp"
#include "retgen/core/random.hpp"

#include <cstdint>
#include <span>

namespace retgen {

/// Query encoder f_x and document encoder f_z. Each is an embedding table,
/// mean pooling over the sequence and an affine projection to `dim`; the two
/// towers share no parameters.
class DualEncoder {
 public:
  DualEncoder() = default;
  DualEncoder(int vocab_size, int dim, std::uint64_t seed);

  Var encode_query(Tape& tape, std::span<const int> tokens) const;
  Var encode_document(Tape& tape, std::span<const int> tokens) const;

  /// Inference-only versions of the above.
  RowVector query_vector(std::span<const int> tokens) const;
  RowVector document_vector(std::span<const int> tokens) const;

  int dim() const { return dim_; }
  int vocab_size() const { return static_cast<int>(query_emb_.value.rows()); }

  ParameterList parameters();
  ConstParameterList parameters() const;
  void set_trainable(bool trainable);

 private:
  struct Tower {
    const Parameter& emb;
    const Parameter& proj;
    const Parameter& bias;
  };
  Var encode(Tape& tape, const Tower& tower, std::span<const int> tokens, const char* what) const;

  int dim_ = 0;
  Parameter query_emb_, query_proj_, query_bias_;
  Parameter doc_emb_, doc_proj_, doc_bias_;
};

/// s(x, z) = h_x . h_z
double score(const RowVector& hx, const RowVector& hz);
/// Differentiable score of two 1xd vars; returns 1x1.
Var score(Var hx, Var hz);

}  // namespace retgen
