#include "doctest.h"
#include "support.hpp"

#include "retgen/cli/commands.hpp"
#include "retgen/cli/run_config.hpp"
#include "retgen/core/checkpoint.hpp"

#include <sstream>

using namespace retgen;
using retgen::test::TempDir;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Small enough that every subcommand finishes in well under a second.
std::vector<std::string> small_sets() {
  return {"--set", "data.n_docs=20",       "--set", "data.n_examples=60", "--set", "data.n_valid=10",
          "--set", "data.heldout_docs=4",  "--set", "data.n_heldout=8",   "--set", "data.n_retriever_pairs=40",
          "--set", "data.vocab_size=150",  "--set", "generator.dim=8",    "--set", "retriever.dim=8",
          "--set", "decode.max_len=6"};
}

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("presets validate and carry their values") {
  for (const auto& name : RunConfig::preset_names()) CHECK_NOTHROW(RunConfig::preset(name).validate());
  const RunConfig faithful = RunConfig::preset("paper-faithful");
  CHECK(faithful.joint().k == 4);
  CHECK(faithful.joint().refresh_period == 200);
  CHECK(faithful.joint().batch_size == 128);
  CHECK(faithful.joint().lr_generator == 1e-6);
  CHECK(faithful.generator(100).doc_pos_offset == 400);
  CHECK(faithful.limits().max_context == 256);
  CHECK(faithful.limits().max_target == 128);
  CHECK_THROWS_AS(RunConfig::preset("huge"), ConfigError);
  CHECK(RunConfig::preset("tiny").hash() != faithful.hash());
}

TEST_CASE("config precedence: flags over file over preset") {
  TempDir dir("cfg");
  write_file_atomic(dir / "c.json", R"({"train.k": 2, "lsh.bits": 4, "warm.lr": 1})");
  RunConfig rc = RunConfig::preset("tiny");
  rc.merge_file(dir / "c.json");
  rc.set("train.k=3");
  CHECK(rc.joint().k == 3);
  CHECK(rc.lsh().bits == 4);
  CHECK(rc.warm_start().lr == 1.0);
  CHECK(rc.lsh().tables == RunConfig::preset("tiny").lsh().tables);

  CHECK_THROWS_AS(rc.set("train.k=two"), ConfigError);
  CHECK_THROWS_AS(rc.set("train.k=2.5"), ConfigError);
  CHECK_THROWS_AS(rc.set("no.such.key=1"), ConfigError);
  CHECK_THROWS_AS(rc.set("train.k"), ConfigError);
  rc.set("decode.mode=topk");
  CHECK(rc.decode().mode == DecodeMode::kTopKSampling);

  RunConfig a = RunConfig::preset("tiny");
  RunConfig b = a;
  b.set("threads=4");
  CHECK(a.hash() == b.hash());
  b.set("seed=1");
  CHECK(a.hash() != b.hash());
}

TEST_CASE("cli exit codes") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"synth-data"}).code == kExitUsage);
  CHECK(cli({"synth-data", "--out", "x", "--bogus"}).code == kExitUsage);
  CHECK(cli({"synth-data", "--out", "x", "--set", "nokey=1"}).code == kExitUsage);
  CHECK(cli({"synth-data", "--out", "x", "--set", "train.k=0"}).code == kExitUsage);
  CHECK(cli({"synth-data", "--out", "x", "--preset", "huge"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);

  TempDir dir("cli-op");
  write_file_atomic(dir / "junk.ckpt", "not a checkpoint");
  write_file_atomic(dir / "docs.jsonl", "");
  Run r = cli({"build-index", "--model", (dir / "junk.ckpt").string(), "--docs", (dir / "docs.jsonl").string(),
               "--out", (dir / "i.bin").string()});
  CHECK(r.code == kExitOperational);
  CHECK(r.err.find("retgen:") != std::string::npos);
}

TEST_CASE("synth-data is deterministic and headed") {
  TempDir dir("synth");
  const auto base = with({"synth-data", "--seed", "7"}, small_sets());
  REQUIRE(cli(with(base, {"--out", (dir / "a").string()})).code == 0);
  REQUIRE(cli(with(base, {"--out", (dir / "b").string()})).code == 0);
  for (const char* f : {"documents.jsonl", "train.jsonl", "valid.jsonl", "heldout.jsonl", "retriever_pairs.jsonl"}) {
    const std::string a = read_file(dir / "a" / f);
    CHECK(a == read_file(dir / "b" / f));
    const Json header = Json::parse(a.substr(0, a.find('\n')));
    CHECK(header["_header"]["seed"] == 7);
    CHECK(header["_header"]["config_hash"].get<std::string>().size() == 16);
  }
  REQUIRE(cli(with({"synth-data", "--seed", "8", "--out", (dir / "c").string()}, small_sets())).code == 0);
  CHECK(read_file(dir / "a" / "train.jsonl") != read_file(dir / "c" / "train.jsonl"));
}

TEST_CASE("pipeline through every subcommand") {
  TempDir dir("pipe");
  auto p = [&](const char* f) { return (dir / f).string(); };
  const auto sets = small_sets();
  auto run = [&](std::vector<std::string> args) {
    args.push_back("--seed");
    args.push_back("3");
    Run r = cli(with(args, sets));
    INFO(r.err);
    REQUIRE(r.code == 0);
    return r;
  };
  run({"synth-data", "--out", dir.path().string()});
  run({"ingest", "--docs", p("documents.jsonl"), "--corpus", p("train.jsonl"), "--corpus", p("valid.jsonl"),
       "--corpus", p("heldout.jsonl"), "--corpus", p("retriever_pairs.jsonl"), "--out", dir.path().string()});
  const std::vector<std::string> data{"--vocab", p("vocab.txt"), "--docs", p("documents.jsonl")};

  Run warm = run(with({"warm-start", "--corpus", p("retriever_pairs.jsonl"), "--valid", p("valid.jsonl"), "--steps",
                       "20", "--out", p("ret.ckpt")},
                      data));
  CHECK(warm.out.find("recall@1=") != std::string::npos);

  // Zero steps: the checkpoint is the initialization, and reloading it
  // without training reproduces it byte for byte.
  run(with({"train", "--corpus", p("train.jsonl"), "--steps", "0", "--out", p("init.ckpt")}, data));
  run(with({"train", "--corpus", p("train.jsonl"), "--steps", "0", "--init", p("init.ckpt"), "--out", p("init2.ckpt")},
           data));
  CHECK(read_checkpoint(p("init.ckpt")).tensors == read_checkpoint(p("init2.ckpt")).tensors);

  Run train = run(with({"train", "--corpus", p("train.jsonl"), "--valid", p("valid.jsonl"), "--retriever",
                        p("ret.ckpt"), "--steps", "6", "--eval-every", "3", "--out", p("joint.ckpt")},
                       data));
  CHECK(train.out.find("step=3 loss=") != std::string::npos);
  CHECK(train.out.find("step=6 loss=") != std::string::npos);
  CHECK(train.out.find("recall@1=") != std::string::npos);
  const Checkpoint ck = read_checkpoint(p("joint.ckpt"));
  CHECK(ck.meta["seed"] == 3);
  CHECK(ck.meta["kind"] == "joint");
  CHECK(ck.meta.contains("config_hash"));

  run(with({"train", "--backward", "--corpus", p("train.jsonl"), "--steps", "4", "--out", p("back.ckpt")}, data));
  run(with({"train", "--no-retrieval", "--corpus", p("train.jsonl"), "--steps", "3", "--out", p("noret.ckpt")}, data));

  Run curve = run({"retriever-train", "--model", p("joint.ckpt"), "--docs", p("documents.jsonl"), "--corpus",
                   p("train.jsonl"), "--valid", p("valid.jsonl"), "--steps", "4", "--eval-every", "2", "--out",
                   p("rt.ckpt")});
  CHECK(curve.out.find("step=0 recall@1=") != std::string::npos);
  CHECK(curve.out.find("step=4 ") != std::string::npos);

  run({"build-index", "--model", p("joint.ckpt"), "--docs", p("documents.jsonl"), "--out", p("index.bin")});

  const std::vector<std::string> dec{"--model", p("joint.ckpt"), "--docs", p("documents.jsonl"), "--index",
                                     p("index.bin")};
  Run g1 = run(with({"generate", "--context", "k0001 w0002", "--trace"}, dec));
  Run g2 = run(with({"generate", "--context", "k0001 w0002", "--trace"}, dec));
  CHECK(g1.out == g2.out);
  const Json rec = Json::parse(g1.out.substr(0, g1.out.find('\n')));
  CHECK(rec["documents"].size() == 4);
  CHECK(rec.contains("steps"));

  Run mmi = run(with({"generate", "--context", "k0001 w0002", "--mmi", "--backward-model", p("back.ckpt")}, dec));
  CHECK(!mmi.out.empty());
  CHECK(cli(with({"generate", "--context", "k0001", "--mmi"}, dec)).code == kExitOperational);

  run(with({"evaluate", "--corpus", p("heldout.jsonl"), "--out", p("report.txt")}, dec));
  const std::string report = read_file(p("report.txt"));
  for (const char* m : {"kmr\t", "bleu\t", "dist-1\t", "dist-2\t", "entropy-4\t", "recall@1\t", "expected_reward\t"}) {
    CHECK(report.find(m) != std::string::npos);
  }
  CHECK(report.find("# config_hash ") == 0);

  Run noret = run({"evaluate", "--model", p("noret.ckpt"), "--docs", p("documents.jsonl"), "--corpus",
                   p("valid.jsonl")});
  CHECK(noret.out.find("kmr\t") != std::string::npos);
  CHECK(noret.out.find("recall@1") == std::string::npos);
}

TEST_CASE("evaluate scores hypothesis files") {
  TempDir dir("evalfiles");
  write_file_atomic(dir / "h.txt", "b d\nthe cat sat\n");
  write_file_atomic(dir / "r.txt", "b c ||| b d\nthe cat sat\n");
  write_file_atomic(dir / "c.txt", "a\nx\n");
  write_file_atomic(dir / "d.txt", "a b c\nthe dog ||| cat mat\n");
  const std::string h = (dir / "h.txt").string();

  const Run r = cli({"evaluate", "--hyps", h, "--refs", (dir / "r.txt").string(), "--contexts",
                     (dir / "c.txt").string(), "--docs", (dir / "d.txt").string(), "--set",
                     "eval.stopword_percent=0"});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("kmr\t0.5\t2\t0") != std::string::npos);
  CHECK(r.out.find("dist-1\t1\t2\t0") != std::string::npos);
  CHECK(r.out.find("entropy-4\tundefined\t2\t2") != std::string::npos);
  CHECK(r.out.find("# stopwords_hash ") != std::string::npos);

  const Run only = cli({"evaluate", "--hyps", h, "--metrics", "dist"});
  REQUIRE(only.code == kExitOk);
  CHECK(only.out.find("bleu\t") == std::string::npos);
  CHECK(only.out.find("dist-2") != std::string::npos);

  CHECK(cli({"evaluate", "--hyps", h, "--metrics", "bogus"}).code == kExitUsage);
  CHECK(cli({"evaluate", "--hyps", h, "--metrics", "recall"}).code == kExitUsage);
  CHECK(cli({"evaluate"}).code == kExitUsage);
  write_file_atomic(dir / "short.txt", "b c\n");
  CHECK(cli({"evaluate", "--hyps", h, "--refs", (dir / "short.txt").string()}).code == kExitOperational);
}
