#pragma once

#include "retgen/core/autodiff.hpp"
#include "retgen/core/random.hpp"
#include "retgen/text/corpus.hpp"
#include "retgen/text/synthetic.hpp"
#include "retgen/text/vocab.hpp"

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

namespace retgen::test {

/// Contracts `out` with a fixed random tensor so every output entry reaches
/// the loss with a different weight.
inline Var weighted_sum(Var out, const Tensor& w) {
  Tape& t = *out.tape;
  Var prod = mul(out, t.constant(w));
  Var ones_l = t.constant(Tensor::Ones(1, out.rows()));
  Var ones_r = t.constant(Tensor::Ones(out.cols(), 1));
  return matmul(matmul(ones_l, prod), ones_r);
}

struct SyntheticSetup {
  Vocabulary vocab;
  DocumentStore docs;
  std::vector<CorpusExample> train;
  std::vector<CorpusExample> valid;
};

inline SyntheticSetup tokenize_synthetic(const SyntheticCorpus& raw) {
  std::vector<std::vector<std::string>> streams;
  for (const auto& d : raw.documents) streams.push_back(split_words(d.text));
  for (const auto* split : {&raw.train, &raw.valid}) {
    for (const auto& e : *split) {
      streams.push_back(split_words(e.context));
      streams.push_back(split_words(e.target));
    }
  }
  SyntheticSetup s;
  s.vocab = Vocabulary::build(streams, 1);
  s.docs = tokenize_documents(raw.documents, s.vocab);
  s.train = tokenize_corpus(raw.train, s.vocab);
  s.valid = tokenize_corpus(raw.valid, s.vocab);
  resolve_oracles(s.train, s.docs);
  resolve_oracles(s.valid, s.docs);
  return s;
}

inline SyntheticSetup make_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  return tokenize_synthetic(make_synthetic_grounded_corpus(config, seed));
}

/// Fresh scratch directory under the system temp dir, removed on exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("retgen-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace retgen::test
