#include "retgen/retriever/dual_encoder.hpp"

#include <cmath>

namespace retgen {

DualEncoder::DualEncoder(int vocab_size, int dim, std::uint64_t seed) : dim_(dim) {
  if (vocab_size < 1 || dim < 1) throw Error("DualEncoder: vocab_size and dim must be positive");
  Rng qrng(mix_seed(seed, 11));
  Rng drng(mix_seed(seed, 12));
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(dim));
  query_emb_ = {"retriever.query.embedding", random_normal(vocab_size, dim, 1.0, qrng)};
  query_proj_ = {"retriever.query.proj", random_normal(dim, dim, proj_std, qrng)};
  query_bias_ = {"retriever.query.bias", Tensor::Zero(1, dim)};
  doc_emb_ = {"retriever.doc.embedding", random_normal(vocab_size, dim, 1.0, drng)};
  doc_proj_ = {"retriever.doc.proj", random_normal(dim, dim, proj_std, drng)};
  doc_bias_ = {"retriever.doc.bias", Tensor::Zero(1, dim)};
}

Var DualEncoder::encode(Tape& tape, const Tower& tower, std::span<const int> tokens, const char* what) const {
  if (tokens.empty()) throw Error(std::string(what) + ": empty token sequence");
  const auto n = static_cast<Index>(tokens.size());
  Var emb = embedding(tape.param(tower.emb), tokens);
  Var pooled = matmul(tape.constant(Tensor::Constant(1, n, 1.0 / static_cast<double>(n))), emb);
  return add(matmul(pooled, tape.param(tower.proj)), tape.param(tower.bias));
}

Var DualEncoder::encode_query(Tape& tape, std::span<const int> tokens) const {
  return encode(tape, {query_emb_, query_proj_, query_bias_}, tokens, "encode_query");
}

Var DualEncoder::encode_document(Tape& tape, std::span<const int> tokens) const {
  return encode(tape, {doc_emb_, doc_proj_, doc_bias_}, tokens, "encode_document");
}

RowVector DualEncoder::query_vector(std::span<const int> tokens) const {
  Tape tape(Tape::Mode::kInference);
  return encode_query(tape, tokens).value();
}

RowVector DualEncoder::document_vector(std::span<const int> tokens) const {
  Tape tape(Tape::Mode::kInference);
  return encode_document(tape, tokens).value();
}

ParameterList DualEncoder::parameters() {
  return {&query_emb_, &query_proj_, &query_bias_, &doc_emb_, &doc_proj_, &doc_bias_};
}

ConstParameterList DualEncoder::parameters() const {
  return {&query_emb_, &query_proj_, &query_bias_, &doc_emb_, &doc_proj_, &doc_bias_};
}

void DualEncoder::set_trainable(bool trainable) {
  for (Parameter* p : parameters()) p->requires_grad = trainable;
}

double score(const RowVector& hx, const RowVector& hz) {
  if (hx.size() != hz.size()) {
    throw ShapeError("score: dimension mismatch " + std::to_string(hx.size()) + " vs " + std::to_string(hz.size()));
  }
  return hx.dot(hz);
}

Var score(Var hx, Var hz) {
  if (hx.rows() != 1 || hz.rows() != 1 || hx.cols() != hz.cols()) {
    throw ShapeError("score: expected two 1xd vectors, got " + shape_str(hx.value()) + " and " +
                     shape_str(hz.value()));
  }
  return matmul(hx, transpose(hz));
}

}  // namespace retgen
