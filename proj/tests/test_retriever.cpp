#include "doctest.h"
#include "support.hpp"

#include "retgen/core/gradcheck.hpp"
#include "retgen/retriever/index.hpp"

#include <set>
#include <thread>
#include <utility>

using namespace retgen;

namespace {

RowVector row(std::initializer_list<double> v) {
  RowVector r(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) r[i++] = x;
  return r;
}

Tensor unit_rows(int n, int d, Rng& rng) {
  Tensor e = random_normal(n, d, 1.0, rng);
  for (Index i = 0; i < e.rows(); ++i) e.row(i).normalize();
  return e;
}

DocumentStore tiny_docs() {
  std::vector<Document> docs;
  for (int i = 0; i < 6; ++i) {
    docs.push_back(Document{"d" + std::to_string(i), "", "", {5 + i, 6 + i, 7 + (i * 3) % 5}});
  }
  return DocumentStore(std::move(docs));
}

}  // namespace

TEST_CASE("score is the inner product") {
  CHECK(score(row({1, 0}), row({0, 1})) == 0.0);
  CHECK(score(row({1, 2}), row({3, 4})) == 11.0);
  Rng rng(2);
  RowVector a = random_normal(1, 8, 1.0, rng), b = random_normal(1, 8, 1.0, rng);
  CHECK(score(a, b) == score(b, a));
  CHECK_THROWS_AS(score(row({1, 2}), row({1, 2, 3})), ShapeError);
}

TEST_CASE("dual encoder basics") {
  DualEncoder enc(20, 8, 3);
  const std::vector<int> x{5, 6, 7};
  const std::vector<int> z{8, 9};
  CHECK(enc.query_vector(x) == enc.query_vector(x));
  CHECK(enc.query_vector(x).size() == 8);
  CHECK(enc.document_vector(z).size() == 8);
  CHECK(enc.query_vector(x) != enc.document_vector(x));
  CHECK_THROWS_AS(enc.query_vector({}), Error);
  CHECK_THROWS_AS(enc.document_vector({}), Error);

  Tape t;
  CHECK((enc.encode_query(t, x).value() - enc.query_vector(x)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("score gradient matches central differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    DualEncoder enc(15, 4, seed);
    const std::vector<int> x{5, 7, 5, 9};
    const std::vector<int> z{6, 7, 14};
    Tape t;
    Var s = score(enc.encode_query(t, x), enc.encode_document(t, z));
    Gradients g = t.backward(s, std::as_const(enc).parameters());
    auto f = [&] { return score(enc.query_vector(x), enc.document_vector(z)); };
    Gradients fd = finite_difference_grad(f, enc.parameters());
    CHECK(max_relative_error(g, fd, std::as_const(enc).parameters()) < 1e-4);
  }
}

TEST_CASE("index construction") {
  Rng rng(1);
  Tensor e = unit_rows(3, 4, rng);
  LshConfig cfg;
  cfg.tables = 5;
  cfg.bits = 6;
  EmbeddingIndex idx = EmbeddingIndex::build(e, cfg, 7);
  for (int d = 0; d < 3; ++d) CHECK(idx.table_count(d) == 5);
  CHECK(idx.snapshot_step() == 7);
  CHECK(EmbeddingIndex::build(e, cfg, 7) == idx);

  LshConfig bad = cfg;
  bad.bits = 0;
  CHECK_THROWS_AS(EmbeddingIndex::build(e, bad, 0), Error);
  bad = cfg;
  bad.tables = 0;
  CHECK_THROWS_AS(EmbeddingIndex::build(e, bad, 0), Error);
  CHECK_THROWS_AS(EmbeddingIndex::build(Tensor(0, 4), cfg, 0), Error);
  CHECK_THROWS_AS(build_index(DocumentStore{}, DualEncoder(10, 4, 1), cfg), Error);
}

TEST_CASE("exhaustive retrieval hand example") {
  Tensor e(3, 2);
  e << 1.0, 0.0, 0.0, 1.0, 0.5, 0.5;
  EmbeddingIndex idx = EmbeddingIndex::build(e, LshConfig{}, 0);
  RetrievalResult r = idx.retrieve(row({1, 0}), 2, RetrievalMode::kExhaustive);
  CHECK(r.ids == std::vector<int>{0, 2});
  CHECK(r.scores == std::vector<double>{1.0, 0.5});
  const double p0 = 1.0 / (1.0 + std::exp(-0.5));
  CHECK(r.probs[0] == doctest::Approx(p0).epsilon(1e-14));
  CHECK(r.probs[1] == doctest::Approx(1.0 - p0).epsilon(1e-14));
  CHECK_THROWS_AS(idx.retrieve(row({1, 0}), 4, RetrievalMode::kExhaustive), Error);
  CHECK_THROWS_AS(idx.retrieve(row({1, 0}), 0, RetrievalMode::kExhaustive), Error);
}

TEST_CASE("ties break by ascending doc id and equal scores give uniform probs") {
  Tensor e(4, 2);
  e << 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0;
  EmbeddingIndex idx = EmbeddingIndex::build(e, LshConfig{}, 0);
  RetrievalResult r = idx.retrieve(row({1, 0}), 3, RetrievalMode::kExhaustive);
  CHECK(r.ids == std::vector<int>{1, 2, 3});
  for (double p : r.probs) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("retrieval probabilities are shift invariant simplices") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    RetrievalResult r;
    r.ids = {0, 1, 2, 3};
    r.scores = {3.0 * trial, 1.0, -2.0, 0.5};
    normalize(r);
    RetrievalResult s = r;
    for (double& x : s.scores) x += 123.4;
    normalize(s);
    double sum = 0;
    for (std::size_t i = 0; i < r.probs.size(); ++i) {
      sum += r.probs[i];
      CHECK(r.probs[i] == doctest::Approx(s.probs[i]).epsilon(1e-12));
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("lsh results agree with the exhaustive oracle where they overlap") {
  Rng rng(5);
  Tensor e = random_normal(300, 8, 1.0, rng);
  LshConfig cfg;
  cfg.tables = 8;
  cfg.bits = 6;
  cfg.seed = 3;
  EmbeddingIndex idx = EmbeddingIndex::build(e, cfg, 0);
  for (int q = 0; q < 30; ++q) {
    RowVector query = random_normal(1, 8, 1.0, rng);
    RetrievalResult lsh = idx.retrieve(query, 10, RetrievalMode::kLsh);
    RetrievalResult ex = idx.retrieve(query, 10, RetrievalMode::kExhaustive);
    REQUIRE(lsh.size() == 10);
    for (std::size_t i = 0; i < lsh.size(); ++i) {
      CHECK(lsh.scores[i] == score(query, e.row(lsh.ids[i])));
      if (i > 0) CHECK(lsh.scores[i - 1] >= lsh.scores[i]);
    }
    // Relative order of shared ids is identical.
    std::vector<int> a, b;
    std::set<int> in_ex(ex.ids.begin(), ex.ids.end()), in_lsh(lsh.ids.begin(), lsh.ids.end());
    for (int id : lsh.ids) if (in_ex.count(id)) a.push_back(id);
    for (int id : ex.ids) if (in_lsh.count(id)) b.push_back(id);
    CHECK(a == b);
  }
}

TEST_CASE("lsh falls back to exhaustive when buckets are too sparse") {
  Rng rng(6);
  Tensor e = unit_rows(40, 6, rng);
  LshConfig cfg;
  cfg.tables = 1;
  cfg.bits = 16;
  cfg.probes = 1;
  EmbeddingIndex idx = EmbeddingIndex::build(e, cfg, 0);
  RowVector q = random_normal(1, 6, 1.0, rng);
  CHECK(idx.retrieve(q, 30, RetrievalMode::kLsh).ids == idx.retrieve(q, 30, RetrievalMode::kExhaustive).ids);
}

TEST_CASE("more tables never shrink the candidate set") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor e = unit_rows(200, 8, rng);
    RowVector q = random_normal(1, 8, 1.0, rng);
    std::set<int> prev;
    for (int tables : {1, 2, 4, 8, 16}) {
      LshConfig cfg;
      cfg.tables = tables;
      cfg.bits = 8;
      cfg.seed = seed;
      auto c = EmbeddingIndex::build(e, cfg, 0).candidates(q);
      std::set<int> cur(c.begin(), c.end());
      CHECK(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
      prev = cur;
    }
  }
}

TEST_CASE("index save and load round trip") {
  test::TempDir dir("index");
  Rng rng(9);
  LshConfig cfg;
  cfg.seed = 4;
  EmbeddingIndex idx = EmbeddingIndex::build(random_normal(12, 5, 1.0, rng), cfg, 33);
  idx.save(dir / "a.idx", Json{{"seed", 4}});
  Json meta;
  EmbeddingIndex back = EmbeddingIndex::load(dir / "a.idx", &meta);
  CHECK(back == idx);
  CHECK(meta["seed"] == 4);
  CHECK(back.snapshot_step() == 33);
  write_file_atomic(dir / "b.idx", "RETGENIX garbage");
  CHECK_THROWS_AS(EmbeddingIndex::load(dir / "b.idx"), Error);
}

TEST_CASE("refresh_if_due follows the period") {
  DocumentStore docs = tiny_docs();
  DualEncoder enc(20, 4, 1);
  IndexSlot slot(build_index(docs, enc, LshConfig{}, 0));
  CHECK_FALSE(refresh_if_due(slot, docs, enc, 199, 200));
  CHECK(slot.load()->snapshot_step() == 0);
  CHECK(refresh_if_due(slot, docs, enc, 200, 200));
  CHECK(slot.load()->snapshot_step() == 200);
  for (long step = 201; step < 205; ++step) {
    CHECK(refresh_if_due(slot, docs, enc, step, 1));
    CHECK(slot.load()->snapshot_step() == step);
  }
}

TEST_CASE("fresh scores follow the current encoder, stale index or not") {
  DocumentStore docs = tiny_docs();
  DualEncoder enc(20, 4, 2);
  EmbeddingIndex idx = build_index(docs, enc, LshConfig{}, 0);
  for (Parameter* p : enc.parameters()) p->value *= 1.3;
  const std::vector<int> query{5, 9, 11};
  RetrievalResult r = retrieve_fresh(idx, enc, docs, query, 3, RetrievalMode::kExhaustive);
  for (std::size_t i = 0; i < r.size(); ++i) {
    CHECK(r.scores[i] == doctest::Approx(score(enc.query_vector(query), enc.document_vector(docs[r.ids[i]].tokens)))
                             .epsilon(1e-14));
    if (i > 0) CHECK(r.scores[i - 1] >= r.scores[i]);
  }
}

TEST_CASE("readers see whole indexes while a writer swaps") {
  Rng rng(3);
  IndexSlot slot(EmbeddingIndex::build(random_normal(20, 4, 1.0, rng), LshConfig{}, 0));
  std::atomic<bool> stop{false};
  std::atomic<int> bad{0};
  std::thread reader([&] {
    while (!stop) {
      auto idx = slot.load();
      if (idx->size() != 20) ++bad;
    }
  });
  for (long step = 1; step <= 50; ++step) slot.store(EmbeddingIndex::build(random_normal(20, 4, 1.0, rng), LshConfig{}, step));
  stop = true;
  reader.join();
  CHECK(bad == 0);
  CHECK(slot.load()->snapshot_step() == 50);
}
