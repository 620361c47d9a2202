#include "doctest.h"
#include "support.hpp"

#include "retgen/text/stopwords.hpp"

#include <algorithm>
#include <fstream>
#include <set>

using namespace retgen;

namespace {

void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << "\n";
}

std::string repeat_words(int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s += "w ";
  return s;
}

}  // namespace

TEST_CASE("split_words lowercases and separates punctuation") {
  const auto w = split_words("Hello, World!  It's 3.5pm");
  const std::vector<std::string> expect{"hello", ",", "world", "!", "it", "'", "s", "3", ".", "5pm"};
  CHECK(w == expect);
  CHECK(split_words("   ").empty());
  CHECK(join_words(std::vector<std::string>{"a", "b"}) == "a b");
}

TEST_CASE("vocabulary reserves special ids and orders by frequency") {
  std::vector<std::vector<std::string>> streams{{"b", "a", "b", "c"}, {"a", "b", "d"}};
  Vocabulary v = Vocabulary::build(streams, 1);
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(v.token(Vocabulary::kEos) == "<eos>");
  CHECK(v.token(Vocabulary::kSep) == "<sep>");
  CHECK(v.id("b") == 5);  // 3 occurrences
  CHECK(v.id("a") == 6);  // 2
  CHECK(v.id("c") == 7);  // tie with d, lexicographic
  CHECK(v.id("d") == 8);
  CHECK(v.id("zzz") == Vocabulary::kUnk);

  Vocabulary pruned = Vocabulary::build(streams, 2);
  CHECK(pruned.size() == 7);
  CHECK(pruned.id("c") == Vocabulary::kUnk);

  std::vector<std::vector<std::string>> empty;
  CHECK_THROWS_AS(Vocabulary::build(empty, 1), Error);
}

TEST_CASE("vocabulary round trips through file and json") {
  test::TempDir dir("vocab");
  std::vector<std::vector<std::string>> streams{{"x", "y", "y", "."}};
  Vocabulary v = Vocabulary::build(streams, 1);
  v.save(dir / "vocab.txt", "seed=3");
  CHECK(Vocabulary::load(dir / "vocab.txt") == v);
  CHECK(Vocabulary::from_json(v.to_json()) == v);

  const auto ids = v.encode_text("y x q");
  CHECK(ids.back() == Vocabulary::kUnk);
  std::vector<int> with_special{Vocabulary::kBos, v.id("x"), Vocabulary::kEos};
  CHECK(v.decode(with_special) == "x");

  Json broken = v.to_json();
  broken[0] = "nope";
  CHECK_THROWS_AS(Vocabulary::from_json(broken), Error);
}

TEST_CASE("sentence counting") {
  const auto one = split_words("only one sentence here.");
  const auto two = split_words("first part. second part");
  CHECK(count_sentences(one) == 1);
  CHECK(count_sentences(two) == 2);
  CHECK(count_sentences(split_words("a! b? c.")) == 3);
}

TEST_CASE("corpus loader applies caps and counts drops") {
  test::TempDir dir("corpus");
  Json ok{{"id", "e1"}, {"context", "hello there"}, {"target", "general kenobi"}, {"oracle_doc_id", "d1"}};
  Json long_ctx{{"id", "e2"}, {"context", repeat_words(300)}, {"target", "y"}};
  Json long_tgt{{"id", "e3"}, {"context", "x"}, {"target", repeat_words(129)}};
  write_lines(dir / "c.jsonl", {Json{{"_header", {{"seed", 1}}}}.dump(), ok.dump(), long_ctx.dump(),
                                long_tgt.dump(), "{not json", Json{{"id", "e4"}}.dump()});
  std::vector<std::vector<std::string>> streams{{"hello", "there", "general", "kenobi", "x", "y", "w"}};
  Vocabulary v = Vocabulary::build(streams, 1);
  LoadStats stats;
  auto ex = load_corpus(dir / "c.jsonl", v, {}, &stats);
  REQUIRE(ex.size() == 1);
  CHECK(ex[0].id == "e1");
  CHECK(v.decode(ex[0].context) == "hello there");
  CHECK(v.decode(ex[0].target) == "general kenobi");
  CHECK(ex[0].oracle_doc_id == "d1");
  CHECK(stats.dropped_length == 2);
  CHECK(stats.malformed == 2);
  CHECK(stats.kept == 1);

  write_lines(dir / "bad.jsonl", {"{", "[1,2]"});
  CHECK_THROWS_AS(load_corpus(dir / "bad.jsonl", v), Error);
  CHECK_THROWS_AS(load_corpus(dir / "missing.jsonl", v), Error);
}

TEST_CASE("document loader drops one-sentence docs and truncates long ones") {
  test::TempDir dir("docs");
  Json one{{"id", "d0"}, {"title", "t"}, {"text", "just one sentence."}};
  Json two{{"id", "d1"}, {"title", "t"}, {"text", "first. second."}};
  Json big{{"id", "d2"}, {"title", "t"}, {"text", "a. " + repeat_words(150)}};
  write_lines(dir / "d.jsonl", {one.dump(), two.dump(), big.dump()});
  std::vector<std::vector<std::string>> streams{{"first", "second", "a", "w", "."}};
  Vocabulary v = Vocabulary::build(streams, 1);
  LoadStats stats;
  DocumentStore docs = load_documents(dir / "d.jsonl", v, {}, &stats);
  REQUIRE(docs.size() == 2);
  CHECK(stats.dropped_single_sentence == 1);
  CHECK(stats.truncated == 1);
  CHECK(docs[1].tokens.size() == 100);
  CHECK(docs.find("d1").value() == 0);
  CHECK_FALSE(docs.find("d0").has_value());

  std::vector<Document> dup{Document{"x", "", "", {5}}, Document{"x", "", "", {6}}};
  CHECK_THROWS_AS(DocumentStore{dup}, Error);
}

TEST_CASE("jsonl writers round trip through the readers") {
  test::TempDir dir("jsonl");
  std::vector<RawExample> ex{{"a", "ctx one", "tgt", "doc-1"}, {"b", "ctx", "tgt two", ""}};
  write_file_atomic(dir / "c.jsonl", corpus_to_jsonl(ex, Json{{"seed", 2}}));
  auto back = read_raw_corpus(dir / "c.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].context == "ctx one");
  CHECK(back[0].oracle_doc_id == "doc-1");
  CHECK(back[1].oracle_doc_id.empty());
}

TEST_CASE("stopword list") {
  test::TempDir dir("stop");
  write_lines(dir / "s.txt", {"# comment", "The", "", "  of  "});
  StopwordList s = StopwordList::load(dir / "s.txt");
  CHECK(s.contains("the"));
  CHECK(s.contains("of"));
  CHECK(s.size() == 2);

  SUBCASE("frequency cut adds the most frequent tokens, at least one") {
    std::vector<std::vector<std::string>> corpus{{"x", "x", "x", "y", "y", "z"}};
    StopwordList f;
    f.add_frequency_cut(corpus, 1.0);
    CHECK(f.size() == 1);
    CHECK(f.contains("x"));
    f.add_frequency_cut(corpus, 67.0);
    CHECK(f.contains("y"));
    CHECK_FALSE(f.contains("z"));
  }
}

TEST_CASE("synthetic corpus construction") {
  SyntheticConfig cfg;
  cfg.n_docs = 4;
  cfg.vocab_size = 40;
  cfg.n_examples = 50;
  cfg.n_valid = 10;
  const auto c = make_synthetic_grounded_corpus(cfg, 11);
  REQUIRE(c.documents.size() == 4);

  std::map<std::string, std::set<std::string>> keys;
  std::map<std::string, std::vector<std::string>> facts;
  for (const auto& d : c.documents) {
    auto w = split_words(d.text);
    keys[d.id] = {w.begin(), w.begin() + cfg.key_len};
    facts[d.id] = {w.begin() + cfg.key_len + 1, w.begin() + cfg.key_len + 1 + cfg.fact_len};
    CHECK(count_sentences(w) == 2);
  }
  SUBCASE("keys are disjoint") {
    std::set<std::string> all;
    for (const auto& [id, k] : keys) all.insert(k.begin(), k.end());
    CHECK(all.size() == 4u * cfg.key_len);
  }
  SUBCASE("oracle maximizes key overlap and holds the target verbatim") {
    for (const auto* split : {&c.train, &c.valid}) {
      for (const auto& ex : *split) {
        auto ctx = split_words(ex.context);
        std::set<std::string> cs(ctx.begin(), ctx.end());
        auto overlap = [&](const std::string& id) {
          int n = 0;
          for (const auto& k : keys[id]) n += static_cast<int>(cs.count(k));
          return n;
        };
        for (const auto& [id, k] : keys) {
          if (id != ex.oracle_doc_id) CHECK(overlap(id) < overlap(ex.oracle_doc_id));
        }
        CHECK(split_words(ex.target) == facts[ex.oracle_doc_id]);
      }
    }
  }
  SUBCASE("same seed is bit-identical, another seed differs") {
    const auto again = make_synthetic_grounded_corpus(cfg, 11);
    CHECK(corpus_to_jsonl(again.train, nullptr) == corpus_to_jsonl(c.train, nullptr));
    CHECK(documents_to_jsonl(again.documents, nullptr) == documents_to_jsonl(c.documents, nullptr));
    const auto other = make_synthetic_grounded_corpus(cfg, 12);
    CHECK(corpus_to_jsonl(other.train, nullptr) != corpus_to_jsonl(c.train, nullptr));
  }
  SUBCASE("vocabulary too small is rejected") {
    cfg.vocab_size = 10;
    CHECK_THROWS_AS(make_synthetic_grounded_corpus(cfg, 1), Error);
  }
}

TEST_CASE("synthetic held-out documents stay out of train and valid") {
  SyntheticConfig cfg;
  cfg.n_docs = 10;
  cfg.vocab_size = 60;
  cfg.n_examples = 200;
  cfg.n_valid = 50;
  cfg.heldout_docs = 3;
  cfg.n_heldout = 40;
  cfg.n_retriever_pairs = 200;
  const auto c = make_synthetic_grounded_corpus(cfg, 5);
  std::set<std::string> held{"doc-0007", "doc-0008", "doc-0009"};
  for (const auto& ex : c.train) CHECK(held.count(ex.oracle_doc_id) == 0);
  for (const auto& ex : c.valid) CHECK(held.count(ex.oracle_doc_id) == 0);
  for (const auto& ex : c.heldout) CHECK(held.count(ex.oracle_doc_id) == 1);
  std::set<std::string> paired;
  for (const auto& ex : c.retriever_pairs) paired.insert(ex.oracle_doc_id);
  CHECK(paired.size() == 10);

  cfg.heldout_docs = 10;
  CHECK_THROWS_AS(make_synthetic_grounded_corpus(cfg, 5), Error);
}
