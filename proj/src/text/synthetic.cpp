#include "retgen/text/synthetic.hpp"
#include "retgen/core/random.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace retgen {

namespace {

std::string padded(const char* prefix, int i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*d", prefix, width, i);
  return buf;
}

std::string words_to_text(const std::vector<std::string>& words) { return join_words(words); }

}  // namespace

SyntheticCorpus make_synthetic_grounded_corpus(const SyntheticConfig& c, std::uint64_t seed) {
  if (c.n_docs < 1 || c.key_len < 1 || c.fact_len < 1 || c.distractor_len < 0 || c.n_examples < 0 ||
      c.n_valid < 0) {
    throw Error("synthetic corpus: sizes must be positive");
  }
  if (c.heldout_docs < 0 || c.heldout_docs >= c.n_docs || c.n_heldout < 0 || c.n_retriever_pairs < 0) {
    throw Error("synthetic corpus: heldout_docs must leave at least one training document");
  }
  if (c.n_heldout > 0 && c.heldout_docs == 0) throw Error("synthetic corpus: n_heldout needs heldout_docs > 0");
  const int key_words = c.n_docs * c.key_len;
  const int content_words = c.vocab_size - key_words;
  if (content_words < c.fact_len + c.distractor_len) {
    throw Error("synthetic corpus: vocab_size " + std::to_string(c.vocab_size) + " cannot hold " +
                std::to_string(c.n_docs) + " disjoint keys of length " + std::to_string(c.key_len) +
                " plus " + std::to_string(c.fact_len + c.distractor_len) + " content words");
  }

  Rng rng(mix_seed(seed, 0));
  std::vector<std::string> keys(key_words);
  for (int i = 0; i < key_words; ++i) keys[i] = padded("k", i, 4);
  std::vector<std::string> content(content_words);
  for (int i = 0; i < content_words; ++i) content[i] = padded("w", i, 4);
  std::shuffle(keys.begin(), keys.end(), rng);

  SyntheticCorpus out;
  std::vector<std::vector<std::string>> doc_keys(c.n_docs);
  std::vector<std::vector<int>> doc_facts(c.n_docs);
  std::vector<int> pool(content_words);
  std::iota(pool.begin(), pool.end(), 0);
  for (int d = 0; d < c.n_docs; ++d) {
    doc_keys[d].assign(keys.begin() + d * c.key_len, keys.begin() + (d + 1) * c.key_len);
    // Partial Fisher-Yates: first fact_len entries are a uniform sample.
    for (int j = 0; j < c.fact_len; ++j) {
      std::uniform_int_distribution<int> pick(j, content_words - 1);
      std::swap(pool[j], pool[pick(rng)]);
      doc_facts[d].push_back(pool[j]);
    }
    std::vector<std::string> words = doc_keys[d];
    words.push_back(".");
    for (int f : doc_facts[d]) words.push_back(content[f]);
    words.push_back(".");
    out.documents.push_back(RawDocument{padded("doc-", d, 4), padded("title ", d, 4), words_to_text(words)});
  }

  const int n_train_docs = c.n_docs - c.heldout_docs;
  auto make_example = [&](int index, const char* prefix, int first_doc, int last_doc) {
    std::uniform_int_distribution<int> which(first_doc, last_doc);
    const int d = which(rng);
    std::vector<std::string> ctx = doc_keys[d];
    std::uniform_int_distribution<int> word(0, content_words - 1);
    while (static_cast<int>(ctx.size()) < c.key_len + c.distractor_len) {
      const int w = word(rng);
      if (std::find(doc_facts[d].begin(), doc_facts[d].end(), w) != doc_facts[d].end()) continue;
      ctx.push_back(content[w]);
    }
    std::shuffle(ctx.begin(), ctx.end(), rng);
    std::vector<std::string> tgt;
    for (int f : doc_facts[d]) tgt.push_back(content[f]);
    return RawExample{padded(prefix, index, 5), words_to_text(ctx), words_to_text(tgt), out.documents[d].id};
  };
  for (int i = 0; i < c.n_examples; ++i) out.train.push_back(make_example(i, "train-", 0, n_train_docs - 1));
  for (int i = 0; i < c.n_valid; ++i) out.valid.push_back(make_example(i, "valid-", 0, n_train_docs - 1));
  for (int i = 0; i < c.n_heldout; ++i) {
    out.heldout.push_back(make_example(i, "heldout-", n_train_docs, c.n_docs - 1));
  }
  for (int i = 0; i < c.n_retriever_pairs; ++i) {
    out.retriever_pairs.push_back(make_example(i, "pair-", 0, c.n_docs - 1));
  }
  return out;
}

}  // namespace retgen
