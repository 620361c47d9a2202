#include "retgen/cli/commands.hpp"

#include "retgen/cli/run_config.hpp"
#include "retgen/core/checkpoint.hpp"
#include "retgen/decoder/mmi.hpp"
#include "retgen/eval/metrics.hpp"
#include "retgen/text/stopwords.hpp"
#include "retgen/text/vocab.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <utility>

namespace retgen {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string preset = "tiny";
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<long> seed;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--preset", c.preset, "Base preset (tiny or paper-faithful)");
  cmd->add_option("--config", c.config_file, "JSON file of dotted config keys")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "Override one config key, key=value");
  cmd->add_option("--seed", c.seed, "Run seed");
  cmd->add_option("--threads", c.threads, "Worker threads (0: RETGEN_THREADS or 1)")->envname("RETGEN_THREADS");
}

RunConfig resolve(const Common& c) {
  RunConfig rc = RunConfig::preset(c.preset);
  if (!c.config_file.empty()) rc.merge_file(c.config_file);
  for (const auto& s : c.sets) rc.set(s);
  if (c.seed) rc.set("seed", Json(*c.seed));
  if (c.threads) rc.set("threads", Json(*c.threads));
  rc.validate();
  return rc;
}

std::string fingerprint(const fs::path& path) { return hex64(fnv1a64(read_file(path))); }

// ------------------------------------------------------------ model files

struct LoadedModel {
  Json meta;
  Vocabulary vocab;
  JointModel model;
  bool use_retrieval = true;
};

Json model_meta(const RunConfig& rc, const std::string& kind, const Vocabulary& vocab) {
  Json meta = rc.header();
  meta["kind"] = kind;
  meta["config"] = rc.values();
  meta["vocab"] = vocab.to_json();
  return meta;
}

Checkpoint read_kind(const fs::path& path, std::initializer_list<const char*> kinds) {
  Checkpoint ckpt = read_checkpoint(path);
  const std::string kind = ckpt.meta.value("kind", "");
  for (const char* k : kinds) {
    if (kind == k) return ckpt;
  }
  std::string want;
  for (const char* k : kinds) want += (want.empty() ? "" : " or ") + std::string(k);
  throw Error("'" + path.string() + "' is a '" + kind + "' checkpoint, expected " + want);
}

void save_joint(const fs::path& path, const RunConfig& rc, const Vocabulary& vocab, const JointModel& m,
                bool use_retrieval) {
  Json meta = model_meta(rc, "joint", vocab);
  meta["generator"] = m.generator.config().to_json();
  meta["retriever_dim"] = m.retriever.dim();
  meta["use_retrieval"] = use_retrieval;
  ConstParameterList params = m.generator.parameters();
  for (const Parameter* p : m.retriever.parameters()) params.push_back(p);
  save_checkpoint(path, meta, params);
}

LoadedModel load_joint(const fs::path& path) {
  Checkpoint ckpt = read_kind(path, {"joint"});
  LoadedModel out{ckpt.meta, Vocabulary::from_json(ckpt.meta.at("vocab")), {}, ckpt.meta.value("use_retrieval", true)};
  const GeneratorConfig g = GeneratorConfig::from_json(ckpt.meta.at("generator"));
  out.model = JointModel{GroundedLM(g, 0), DualEncoder(out.vocab.size(), ckpt.meta.at("retriever_dim").get<int>(), 0)};
  load_parameters(ckpt, out.model.generator.parameters());
  load_parameters(ckpt, out.model.retriever.parameters());
  return out;
}

void save_retriever(const fs::path& path, const RunConfig& rc, const Vocabulary& vocab, const DualEncoder& enc) {
  Json meta = model_meta(rc, "retriever", vocab);
  meta["retriever_dim"] = enc.dim();
  save_checkpoint(path, meta, enc.parameters());
}

/// The retriever half of either checkpoint kind.
DualEncoder load_retriever(const fs::path& path, Vocabulary* vocab) {
  Checkpoint ckpt = read_kind(path, {"retriever", "joint"});
  Vocabulary v = Vocabulary::from_json(ckpt.meta.at("vocab"));
  DualEncoder enc(v.size(), ckpt.meta.at("retriever_dim").get<int>(), 0);
  load_parameters(ckpt, enc.parameters());
  if (vocab) *vocab = std::move(v);
  return enc;
}

GroundedLM load_backward(const fs::path& path, const Vocabulary& vocab) {
  Checkpoint ckpt = read_kind(path, {"backward"});
  if (!(Vocabulary::from_json(ckpt.meta.at("vocab")) == vocab)) {
    throw Error("backward model '" + path.string() + "' uses a different vocabulary");
  }
  GroundedLM m(GeneratorConfig::from_json(ckpt.meta.at("generator")), 0);
  load_parameters(ckpt, m.parameters());
  return m;
}

void require_same_vocab(const Vocabulary& a, const Vocabulary& b, const std::string& what) {
  if (!(a == b)) throw Error(what + " was built with a different vocabulary");
}

// ------------------------------------------------------------- data files

DocumentStore read_docs(const fs::path& path, const Vocabulary& vocab, const RunConfig& rc, std::ostream& err) {
  LoadStats st;
  DocumentStore docs = load_documents(path, vocab, rc.limits(), &st);
  err << "documents " << path.string() << ": kept " << st.kept << " of " << st.read << " (single sentence "
      << st.dropped_single_sentence << ", truncated " << st.truncated << ", malformed " << st.malformed << ")\n";
  if (docs.empty()) throw Error("no usable documents in '" + path.string() + "'");
  return docs;
}

std::vector<CorpusExample> read_examples(const fs::path& path, const Vocabulary& vocab, const DocumentStore& docs,
                                         const RunConfig& rc, std::ostream& err) {
  LoadStats st;
  auto data = load_corpus(path, vocab, rc.limits(), &st);
  const std::size_t resolved = resolve_oracles(data, docs);
  err << "corpus " << path.string() << ": kept " << st.kept << " of " << st.read << " (over length "
      << st.dropped_length << ", malformed " << st.malformed << "), oracle documents resolved " << resolved << "\n";
  if (data.empty()) throw Error("no usable examples in '" + path.string() + "'");
  return data;
}

std::string fixed(double v, int digits = 6) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

// --------------------------------------------------------------- commands

int cmd_synth_data(const RunConfig& rc, const fs::path& out_dir, std::ostream& out) {
  const SyntheticCorpus c = make_synthetic_grounded_corpus(rc.synthetic(), rc.seed());
  auto write = [&](const std::string& kind, const std::vector<RawExample>* examples) {
    Json header = rc.header();
    header["kind"] = kind;
    const fs::path path = out_dir / (kind + ".jsonl");
    write_file_atomic(path, examples ? corpus_to_jsonl(*examples, header) : documents_to_jsonl(c.documents, header));
    out << "wrote " << path.string() << "\n";
  };
  write("documents", nullptr);
  write("train", &c.train);
  write("valid", &c.valid);
  if (!c.heldout.empty()) write("heldout", &c.heldout);
  if (!c.retriever_pairs.empty()) write("retriever_pairs", &c.retriever_pairs);
  Json cfg = rc.header();
  cfg["config"] = rc.values();
  write_file_atomic(out_dir / "config.json", cfg.dump(2) + "\n");
  return kExitOk;
}

int cmd_ingest(const RunConfig& rc, const std::string& docs_path, const std::vector<std::string>& corpus_paths,
               const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  std::vector<fs::path> paths{docs_path};
  for (const auto& p : corpus_paths) paths.emplace_back(p);
  const Vocabulary vocab = build_vocab(paths, static_cast<int>(rc.get_int("text.min_freq")));
  Json stats = rc.header();
  stats["vocab_size"] = vocab.size();
  const DocumentStore docs = read_docs(docs_path, vocab, rc, err);
  stats["documents"] = docs.size();
  for (const auto& p : corpus_paths) {
    LoadStats st;
    auto data = load_corpus(p, vocab, rc.limits(), &st);
    const std::size_t resolved = resolve_oracles(data, docs);
    stats["corpora"][p] = {{"read", st.read},
                           {"kept", st.kept},
                           {"malformed", st.malformed},
                           {"dropped_length", st.dropped_length},
                           {"oracles_resolved", resolved}};
  }
  vocab.save(out_dir / "vocab.txt", rc.header().dump());
  write_file_atomic(out_dir / "ingest.json", stats.dump(2) + "\n");
  out << "vocabulary " << vocab.size() << " tokens, " << docs.size() << " documents -> "
      << (out_dir / "vocab.txt").string() << "\n";
  return kExitOk;
}

int cmd_build_index(const RunConfig& rc, const fs::path& model, const fs::path& docs_path, const fs::path& out_path,
                    std::ostream& out, std::ostream& err) {
  Vocabulary vocab;
  const DualEncoder enc = load_retriever(model, &vocab);
  const DocumentStore docs = read_docs(docs_path, vocab, rc, err);
  const EmbeddingIndex index = build_index(docs, enc, rc.lsh(), 0);
  Json meta = rc.header();
  meta["kind"] = "index";
  meta["model_fingerprint"] = fingerprint(model);
  meta["documents"] = docs.size();
  index.save(out_path, meta);
  out << "indexed " << index.size() << " documents (" << rc.lsh().tables << " tables x " << rc.lsh().bits
      << " bits) -> " << out_path.string() << "\n";
  return kExitOk;
}

int cmd_warm_start(const RunConfig& rc, const fs::path& vocab_path, const fs::path& docs_path,
                   const fs::path& corpus_path, const std::string& valid_path, const std::string& init,
                   const fs::path& out_path, std::ostream& out, std::ostream& err) {
  const Vocabulary vocab = Vocabulary::load(vocab_path);
  const DocumentStore docs = read_docs(docs_path, vocab, rc, err);
  const auto pairs = read_examples(corpus_path, vocab, docs, rc, err);
  const auto valid = valid_path.empty() ? pairs : read_examples(valid_path, vocab, docs, rc, err);
  DualEncoder enc(vocab.size(), static_cast<int>(rc.get_int("retriever.dim")), mix_seed(rc.seed(), 2));
  if (!init.empty()) {
    Vocabulary v;
    enc = load_retriever(init, &v);
    require_same_vocab(v, vocab, init);
  }
  const int k = static_cast<int>(rc.get_int("eval.recall_k"));
  out << "step=0 recall@" << k << "=" << fixed(recall_at_k(enc, docs, valid, k).recall) << "\n";
  const WarmStartConfig w = rc.warm_start();
  const auto losses = warm_start_retriever(enc, pairs, docs, w);
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if ((i + 1) % 50 == 0 || i + 1 == losses.size()) out << "step=" << i + 1 << " loss=" << fixed(losses[i]) << "\n";
  }
  out << "step=" << losses.size() << " recall@" << k << "=" << fixed(recall_at_k(enc, docs, valid, k).recall) << "\n";
  save_retriever(out_path, rc, vocab, enc);
  return kExitOk;
}

struct TrainArgs {
  std::string vocab, docs, corpus, valid, retriever, init, out;
  std::optional<long> steps;
  std::optional<long> eval_every;
  bool freeze_retriever = false;
  bool freeze_generator = false;
  bool no_retrieval = false;
  bool backward = false;
};

void print_eval(std::ostream& out, const JointModel& m, const DocumentStore& docs,
                const std::vector<CorpusExample>& valid, const RunConfig& rc, bool use_retrieval) {
  const JointEval e = evaluate_joint(m, docs, valid, static_cast<int>(rc.get_int("train.k")), use_retrieval);
  out << " valid_loss=" << fixed(e.loss) << " valid_expected_reward=" << fixed(e.expected_reward);
  const int k = static_cast<int>(rc.get_int("eval.recall_k"));
  const RecallStats r = recall_at_k(m.retriever, docs, valid, k);
  if (use_retrieval && r.count > 0) out << " recall@" << k << "=" << fixed(r.recall);
}

int cmd_train(RunConfig rc, const TrainArgs& a, std::ostream& out, std::ostream& err) {
  if (a.freeze_retriever) rc.set("train.freeze_retriever", true);
  if (a.freeze_generator) rc.set("train.freeze_generator", true);
  if (a.no_retrieval) rc.set("train.use_retrieval", false);
  if (a.steps) rc.set(a.backward ? "backward.steps" : "train.steps", Json(*a.steps));
  if (a.eval_every) rc.set("train.eval_every", Json(*a.eval_every));

  const Vocabulary vocab = Vocabulary::load(a.vocab);
  const DocumentStore docs = read_docs(a.docs, vocab, rc, err);
  const auto train = read_examples(a.corpus, vocab, docs, rc, err);
  const auto valid = a.valid.empty() ? std::vector<CorpusExample>{} : read_examples(a.valid, vocab, docs, rc, err);

  if (a.backward) {
    GroundedLM back(rc.generator(vocab.size()), mix_seed(rc.seed(), 3));
    const BackwardConfig bc = rc.backward();
    const auto losses = train_backward_model(back, train, docs, bc);
    const long every = std::max<long>(1, rc.get_int("train.eval_every"));
    for (std::size_t i = 0; i < losses.size(); ++i) {
      if ((i + 1) % every == 0 || i + 1 == losses.size()) out << "step=" << i + 1 << " loss=" << fixed(losses[i]) << "\n";
    }
    Json meta = model_meta(rc, "backward", vocab);
    meta["generator"] = back.config().to_json();
    save_checkpoint(a.out, meta, std::as_const(back).parameters());
    return kExitOk;
  }

  JointModel model{GroundedLM(rc.generator(vocab.size()), mix_seed(rc.seed(), 1)),
                   DualEncoder(vocab.size(), static_cast<int>(rc.get_int("retriever.dim")), mix_seed(rc.seed(), 2))};
  if (!a.init.empty()) {
    LoadedModel m = load_joint(a.init);
    require_same_vocab(m.vocab, vocab, a.init);
    model = std::move(m.model);
  }
  if (!a.retriever.empty()) {
    Vocabulary v;
    model.retriever = load_retriever(a.retriever, &v);
    require_same_vocab(v, vocab, a.retriever);
  }
  const JointConfig jc = rc.joint();
  const long steps = jc.max_steps;
  const long every = rc.get_int("train.eval_every");
  if (steps == 0) {
    save_joint(a.out, rc, vocab, model, jc.use_retrieval);
    out << "step=0\n";
    return kExitOk;
  }
  JointTrainer trainer(std::move(model), docs, jc, rc.lsh());
  for (long s = 1; s <= steps; ++s) {
    const StepMetrics m = trainer.train_step(train);
    if ((every > 0 && s % every == 0) || s == steps) {
      out << "step=" << m.step << " loss=" << fixed(m.loss) << " expected_reward=" << fixed(m.expected_reward)
          << " seconds=" << fixed(m.seconds, 3);
      if (!valid.empty()) print_eval(out, trainer.model(), docs, valid, rc, jc.use_retrieval);
      out << "\n";
    }
  }
  save_joint(a.out, rc, vocab, trainer.model(), jc.use_retrieval);
  return kExitOk;
}

int cmd_retriever_train(RunConfig rc, const TrainArgs& a, std::ostream& out, std::ostream& err) {
  if (a.steps) rc.set("train.steps", Json(*a.steps));
  if (a.eval_every) rc.set("train.eval_every", Json(*a.eval_every));
  rc.set("train.freeze_generator", true);
  LoadedModel m = load_joint(a.init);
  if (!m.use_retrieval) throw Error("'" + a.init + "' was trained without retrieval");
  const DocumentStore docs = read_docs(a.docs, m.vocab, rc, err);
  const auto train = read_examples(a.corpus, m.vocab, docs, rc, err);
  const auto valid = read_examples(a.valid, m.vocab, docs, rc, err);
  JointTrainer trainer(std::move(m.model), docs, rc.joint(), rc.lsh());
  const int k = static_cast<int>(rc.get_int("eval.recall_k"));
  const auto curve = retriever_only_training(trainer, train, valid, rc.get_int("train.steps"),
                                             std::max<long>(1, rc.get_int("train.eval_every")), k);
  for (const auto& p : curve) {
    out << "step=" << p.step;
    if (p.recall) out << " recall@" << k << "=" << fixed(*p.recall);
    out << " expected_reward=" << fixed(p.expected_reward) << "\n";
  }
  save_joint(a.out, rc, m.vocab, trainer.model(), true);
  return kExitOk;
}

struct DecodeArgs {
  std::string model, backward_model, index, docs, corpus, context_file, stopwords, out;
  std::string hyps, refs, contexts_file, metrics;
  std::vector<std::string> contexts;
  std::optional<int> k;
  std::string mode;
  std::optional<int> max_len;
  bool mmi = false;
  bool trace = false;
};

/// Everything needed to decode one context with a loaded model.
class Decoder {
 public:
  Decoder(const RunConfig& rc, const DecodeArgs& a, std::ostream& err)
      : loaded_(load_joint(a.model)), config_(rc.decode()), mode_(parse_retrieval_mode(rc.get_string("decode.retrieval_mode"))) {
    docs_ = read_docs(a.docs, loaded_.vocab, rc, err);
    if (loaded_.use_retrieval) {
      if (config_.k > static_cast<int>(docs_.size())) throw Error("decode: K exceeds the number of documents");
      if (!a.index.empty()) {
        index_ = EmbeddingIndex::load(a.index);
        if (index_.size() != static_cast<int>(docs_.size()) || index_.dim() != loaded_.model.retriever.dim()) {
          throw Error("index '" + a.index + "' does not match the documents and model");
        }
      } else {
        index_ = build_index(docs_, loaded_.model.retriever, rc.lsh(), 0);
      }
    }
    if (a.mmi) {
      if (a.backward_model.empty()) throw Error("--mmi needs --backward-model");
      if (!loaded_.use_retrieval) throw Error("--mmi needs a model trained with retrieval");
      backward_ = std::make_unique<GroundedLM>(load_backward(a.backward_model, loaded_.vocab));
    }
  }

  const Vocabulary& vocab() const { return loaded_.vocab; }
  const DocumentStore& docs() const { return docs_; }
  const JointModel& model() const { return loaded_.model; }
  bool use_retrieval() const { return loaded_.use_retrieval; }

  DecodeResult run(std::span<const int> context) const {
    if (!loaded_.use_retrieval) return decode_without_document(loaded_.model.generator, context, config_);
    const RetrievalResult r = index_.retrieve(loaded_.model.retriever.query_vector(context), config_.k, mode_);
    if (!backward_) {
      Rng rng(mix_seed(config_.seed, 0));
      return decode_with_retrieval(loaded_.model.generator, docs_, context, r, config_, rng);
    }
    auto hyps = generate_hypotheses(loaded_.model.generator, docs_, context, r, config_);
    auto ranked = mmi_rerank(*backward_, docs_, context, r, std::move(hyps), config_.mmi_mean_of_logs);
    DecodeResult out;
    out.tokens = ranked.front().tokens;
    out.forward_score = ranked.front().forward_score;
    out.retrieval = r;
    return out;
  }

 private:
  LoadedModel loaded_;
  DecodeConfig config_;
  RetrievalMode mode_;
  DocumentStore docs_;
  EmbeddingIndex index_;
  std::unique_ptr<GroundedLM> backward_;
};

void apply_decode_flags(RunConfig& rc, const DecodeArgs& a) {
  if (a.k) rc.set("decode.k", Json(*a.k));
  if (!a.mode.empty()) rc.set("decode.mode", Json(a.mode));
  if (a.max_len) rc.set("decode.max_len", Json(*a.max_len));
  rc.validate();
}

int cmd_generate(RunConfig rc, const DecodeArgs& a, std::ostream& out, std::ostream& err) {
  apply_decode_flags(rc, a);
  std::vector<std::string> contexts = a.contexts;
  if (!a.context_file.empty()) {
    std::istringstream lines(read_file(a.context_file));
    for (std::string line; std::getline(lines, line);) {
      if (!line.empty()) contexts.push_back(line);
    }
  }
  if (contexts.empty()) throw Error("generate: no context given");
  const Decoder dec(rc, a, err);
  std::ostringstream body;
  for (const auto& text : contexts) {
    const std::vector<int> x = dec.vocab().encode_text(text);
    const DecodeResult r = dec.run(x);
    const std::string output = dec.vocab().decode(r.tokens);
    if (!a.trace) {
      body << output << "\n";
      continue;
    }
    Json rec{{"context", text}, {"output", output}, {"forward_score", r.forward_score}};
    for (std::size_t i = 0; i < r.retrieval.ids.size(); ++i) {
      rec["documents"].push_back(
          {{"id", dec.docs()[r.retrieval.ids[i]].id}, {"score", r.retrieval.scores[i]}, {"prob", r.retrieval.probs[i]}});
    }
    for (const auto& s : r.trace) rec["steps"].push_back({{"token", dec.vocab().token(s.token)}, {"weights", s.weights}});
    body << rec.dump() << "\n";
  }
  if (a.out.empty()) {
    out << body.str();
  } else {
    write_file_atomic(a.out, "# " + rc.header().dump() + "\n" + body.str());
  }
  return kExitOk;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> lines;
  std::istringstream in(read_file(path));
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

// "a b ||| c d" -> {{"a","b"}, {"c","d"}}
std::vector<Words> split_alternatives(const std::string& line) {
  // split_words turns "|||" into three "|" tokens.
  const Words all = split_words(line);
  std::vector<Words> parts{{}};
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (i + 2 < all.size() && all[i] == "|" && all[i + 1] == "|" && all[i + 2] == "|") {
      parts.emplace_back();
      i += 2;
    } else {
      parts.back().push_back(all[i]);
    }
  }
  return parts;
}

struct EvalInputs {
  std::vector<Words> hyps;
  std::vector<std::vector<Words>> refs;
  std::vector<Words> contexts;
  std::vector<std::vector<Words>> grounding;  // empty per instance when unknown
};

std::set<std::string> parse_metrics(const std::string& list) {
  static const std::set<std::string> known{"kmr", "bleu", "dist", "entropy", "recall", "loss"};
  std::set<std::string> out;
  std::istringstream in(list);
  for (std::string m; std::getline(in, m, ',');) {
    if (m.empty()) continue;
    if (!known.count(m)) throw ConfigError("evaluate: unknown metric '" + m + "' (kmr, bleu, dist, entropy, recall, loss)");
    out.insert(m);
  }
  return out;
}

void add_text_metrics(EvalReport& report, const EvalInputs& in, const StopwordList& stop, int order,
                      const std::function<bool(const char*)>& wanted) {
  const std::size_t n = in.hyps.size();
  if (wanted("kmr")) {
    std::vector<std::optional<double>> kmrs;
    for (std::size_t i = 0; i < n; ++i) {
      if (!in.grounding[i].empty()) kmrs.push_back(kmr(in.hyps[i], in.contexts[i], in.grounding[i], stop));
    }
    if (!kmrs.empty()) {
      const MeanWithCount m = mean_defined(kmrs);
      report.add("kmr", m.count ? std::optional<double>(m.mean) : std::nullopt, m.count, m.undefined);
    }
  }
  if (wanted("bleu") && !in.refs.empty()) {
    report.add("bleu", bleu(in.hyps, in.refs, order).score, n);
    report.add("bleu_max_pooled", bleu_max_pooled(in.hyps, in.refs, order), n);
  }
  if (wanted("dist")) {
    for (int g = 1; g <= 2; ++g) {
      const auto d = distinct_n(in.hyps, g);
      report.add("dist-" + std::to_string(g), d, n, d ? 0 : n);
    }
  }
  if (wanted("entropy")) {
    const auto ent = entropy_n(in.hyps, 4);
    report.add("entropy-4", ent, n, ent ? 0 : n);
  }
}

void echo_eval_config(EvalReport& report, const RunConfig& rc, const StopwordList& stop) {
  const Json header = rc.header();
  for (const auto& [k, v] : header.items()) report.config.push_back({k, v.is_string() ? v.get<std::string>() : v.dump()});
  std::string joined;
  for (const auto& w : stop.sorted()) joined += w + "\n";
  report.config.push_back({"stopwords_hash", hex64(fnv1a64(joined))});
  report.config.push_back({"bleu_order", std::to_string(rc.get_int("eval.bleu_order"))});
  report.config.push_back({"dist_orders", "1,2"});
  report.config.push_back({"entropy_order", "4"});
  report.config.push_back({"entropy_log", "natural"});
}

StopwordList eval_stopwords(const RunConfig& rc, const DecodeArgs& a, const std::vector<Words>& corpus) {
  StopwordList stop = a.stopwords.empty() ? StopwordList{} : StopwordList::load(a.stopwords);
  stop.add_frequency_cut(corpus, rc.get_double("eval.stopword_percent"));
  return stop;
}

int finish_report(const EvalReport& report, const DecodeArgs& a, std::ostream& out) {
  const std::string text = report.to_text();
  if (!a.out.empty()) write_file_atomic(a.out, text);
  out << text;
  return kExitOk;
}

// Scores existing hypotheses: every file is line-aligned with --hyps, and
// " ||| " separates alternatives (references, grounding documents) on a line.
int evaluate_files(const RunConfig& rc, const DecodeArgs& a, const std::set<std::string>& metrics,
                   std::ostream& out) {
  auto wanted = [&](const char* m) { return metrics.empty() || metrics.count(m) != 0; };
  EvalInputs in;
  const auto hyp_lines = read_lines(a.hyps);
  if (hyp_lines.empty()) throw Error("evaluate: '" + a.hyps + "' has no hypotheses");
  for (const auto& line : hyp_lines) in.hyps.push_back(split_words(line));
  const std::size_t n = in.hyps.size();
  auto aligned = [&](const std::string& path, const char* what) {
    auto lines = read_lines(path);
    if (lines.size() != n) {
      throw Error(std::string("evaluate: ") + what + " has " + std::to_string(lines.size()) + " lines, expected " +
                  std::to_string(n));
    }
    return lines;
  };
  if (!a.refs.empty()) {
    for (const auto& line : aligned(a.refs, "--refs")) in.refs.push_back(split_alternatives(line));
  }
  in.contexts.assign(n, {});
  if (!a.contexts_file.empty()) {
    const auto lines = aligned(a.contexts_file, "--contexts");
    for (std::size_t i = 0; i < n; ++i) in.contexts[i] = split_words(lines[i]);
  }
  in.grounding.assign(n, {});
  std::vector<Words> doc_words;
  if (!a.docs.empty()) {
    const auto lines = aligned(a.docs, "--docs");
    for (std::size_t i = 0; i < n; ++i) {
      in.grounding[i] = split_alternatives(lines[i]);
      for (const auto& d : in.grounding[i]) doc_words.push_back(d);
    }
  } else if (wanted("kmr") && !metrics.empty()) {
    throw ConfigError("evaluate: kmr needs --docs");
  }
  if ((wanted("recall") || wanted("loss")) && !metrics.empty()) {
    throw ConfigError("evaluate: recall and loss need --model");
  }
  const StopwordList stop = eval_stopwords(rc, a, doc_words);
  EvalReport report;
  echo_eval_config(report, rc, stop);
  report.config.push_back({"hyps_fingerprint", fingerprint(a.hyps)});
  add_text_metrics(report, in, stop, static_cast<int>(rc.get_int("eval.bleu_order")), wanted);
  return finish_report(report, a, out);
}

int cmd_evaluate(RunConfig rc, const DecodeArgs& a, std::ostream& out, std::ostream& err) {
  const std::set<std::string> metrics = parse_metrics(a.metrics);
  if (!a.hyps.empty()) {
    if (!a.model.empty() || !a.corpus.empty()) throw ConfigError("evaluate: --hyps excludes --model and --corpus");
    rc.validate();
    return evaluate_files(rc, a, metrics, out);
  }
  if (a.model.empty() || a.corpus.empty() || a.docs.empty()) {
    throw ConfigError("evaluate: give either --hyps or --model, --docs and --corpus");
  }
  auto wanted = [&](const char* m) { return metrics.empty() || metrics.count(m) != 0; };
  apply_decode_flags(rc, a);
  const Decoder dec(rc, a, err);
  const auto data = read_examples(a.corpus, dec.vocab(), dec.docs(), rc, err);

  std::vector<Words> doc_words;
  for (const auto& d : dec.docs()) doc_words.push_back(dec.vocab().words(d.tokens));
  const StopwordList stop = eval_stopwords(rc, a, doc_words);

  EvalInputs in;
  bool used_oracle = false;
  for (const auto& ex : data) {
    const DecodeResult r = dec.run(ex.context);
    in.hyps.push_back(dec.vocab().words(r.tokens));
    in.refs.push_back({dec.vocab().words(ex.target)});
    in.contexts.push_back(dec.vocab().words(ex.context));
    std::vector<Words> grounding;
    if (ex.oracle_doc >= 0) {
      grounding.push_back(doc_words[ex.oracle_doc]);
      used_oracle = true;
    } else {
      for (int id : r.retrieval.ids) grounding.push_back(doc_words[id]);
    }
    in.grounding.push_back(std::move(grounding));
  }

  EvalReport report;
  echo_eval_config(report, rc, stop);
  report.config.push_back({"model_fingerprint", fingerprint(a.model)});
  report.config.push_back({"decode.k", std::to_string(rc.get_int("decode.k"))});
  report.config.push_back({"decode.mode", rc.get_string("decode.mode")});
  report.config.push_back({"kmr_documents", used_oracle ? "oracle" : "retrieved"});

  add_text_metrics(report, in, stop, static_cast<int>(rc.get_int("eval.bleu_order")), wanted);
  if (wanted("recall") && dec.use_retrieval()) {
    const int rk = static_cast<int>(rc.get_int("eval.recall_k"));
    const RecallStats rs = recall_at_k(dec.model().retriever, dec.docs(), data, rk);
    if (rs.count > 0) report.add("recall@" + std::to_string(rk), rs.recall, rs.count, rs.skipped);
  }
  if (wanted("loss")) {
    const JointEval je =
        evaluate_joint(dec.model(), dec.docs(), data, static_cast<int>(rc.get_int("decode.k")), dec.use_retrieval());
    report.add("loss", je.loss, je.count);
    report.add("expected_reward", je.expected_reward, je.count);
  }
  return finish_report(report, a, out);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"retgen: joint retriever and grounded generator"};
  app.require_subcommand(1);
  app.fallthrough(false);

  Common common;
  std::string out_dir, docs_path, vocab_path, corpus_path, model_path, out_path, valid_path, init_path;
  std::vector<std::string> corpus_paths;
  TrainArgs ta;
  DecodeArgs da;

  auto* synth = app.add_subcommand("synth-data", "Write the synthetic grounded-copy corpus");
  add_common(synth, common);
  synth->add_option("--out", out_dir, "Output directory")->required();

  auto* ingest = app.add_subcommand("ingest", "Build the vocabulary and check JSONL inputs");
  add_common(ingest, common);
  ingest->add_option("--docs", docs_path, "Document JSONL")->required()->check(CLI::ExistingFile);
  ingest->add_option("--corpus", corpus_paths, "Corpus JSONL (repeatable)")->check(CLI::ExistingFile);
  ingest->add_option("--out", out_dir, "Output directory")->required();

  auto* index = app.add_subcommand("build-index", "Embed documents and build the LSH index");
  add_common(index, common);
  index->add_option("--model", model_path, "Retriever or joint checkpoint")->required()->check(CLI::ExistingFile);
  index->add_option("--docs", docs_path, "Document JSONL")->required()->check(CLI::ExistingFile);
  index->add_option("--out", out_path, "Index file")->required();

  auto* warm = app.add_subcommand("warm-start", "Contrastive retriever warm-start on (context, oracle) pairs");
  add_common(warm, common);
  warm->add_option("--vocab", vocab_path, "Vocabulary file")->required()->check(CLI::ExistingFile);
  warm->add_option("--docs", docs_path, "Document JSONL")->required()->check(CLI::ExistingFile);
  warm->add_option("--corpus", corpus_path, "Pairs JSONL with oracle_doc_id")->required()->check(CLI::ExistingFile);
  warm->add_option("--valid", valid_path, "Recall evaluation JSONL")->check(CLI::ExistingFile);
  warm->add_option("--init", init_path, "Start from this retriever checkpoint")->check(CLI::ExistingFile);
  warm->add_option("--steps", ta.steps, "Override warm.steps");
  warm->add_option("--out", out_path, "Retriever checkpoint")->required();

  auto* train = app.add_subcommand("train", "Joint training (or the MMI backward model with --backward)");
  add_common(train, common);
  train->add_option("--vocab", ta.vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  train->add_option("--docs", ta.docs, "Document JSONL")->required()->check(CLI::ExistingFile);
  train->add_option("--corpus", ta.corpus, "Training JSONL")->required()->check(CLI::ExistingFile);
  train->add_option("--valid", ta.valid, "Validation JSONL")->check(CLI::ExistingFile);
  train->add_option("--retriever", ta.retriever, "Warm-started retriever checkpoint")->check(CLI::ExistingFile);
  train->add_option("--init", ta.init, "Joint checkpoint to continue from")->check(CLI::ExistingFile);
  train->add_option("--out", ta.out, "Output checkpoint")->required();
  train->add_option("--steps", ta.steps, "Override train.steps");
  train->add_option("--eval-every", ta.eval_every, "Override train.eval_every");
  train->add_flag("--freeze-retriever", ta.freeze_retriever, "Keep the retriever fixed");
  train->add_flag("--freeze-generator", ta.freeze_generator, "Keep the generator fixed");
  train->add_flag("--no-retrieval", ta.no_retrieval, "Train p(y | x) without documents");
  train->add_flag("--backward", ta.backward, "Train the MMI backward model p(z, x | y)");

  auto* rtrain = app.add_subcommand("retriever-train", "Retriever-only training with the generator frozen");
  add_common(rtrain, common);
  rtrain->add_option("--model", ta.init, "Joint checkpoint")->required()->check(CLI::ExistingFile);
  rtrain->add_option("--docs", ta.docs, "Document JSONL")->required()->check(CLI::ExistingFile);
  rtrain->add_option("--corpus", ta.corpus, "Training JSONL")->required()->check(CLI::ExistingFile);
  rtrain->add_option("--valid", ta.valid, "Validation JSONL")->required()->check(CLI::ExistingFile);
  rtrain->add_option("--out", ta.out, "Output checkpoint")->required();
  rtrain->add_option("--steps", ta.steps, "Override train.steps");
  rtrain->add_option("--eval-every", ta.eval_every, "Override train.eval_every");

  auto add_decode = [&](CLI::App* cmd, bool required) {
    add_common(cmd, common);
    cmd->add_option("--model", da.model, "Joint checkpoint")->required(required)->check(CLI::ExistingFile);
    cmd->add_option("--docs", da.docs, required ? "Document JSONL" : "Document JSONL, or with --hyps line-aligned grounding text")
        ->required(required)
        ->check(CLI::ExistingFile);
    cmd->add_option("--index", da.index, "Prebuilt index (built on the fly otherwise)")->check(CLI::ExistingFile);
    cmd->add_option("--backward-model", da.backward_model, "MMI backward checkpoint")->check(CLI::ExistingFile);
    cmd->add_flag("--mmi", da.mmi, "Sample hypotheses and rerank with the backward model");
    cmd->add_option("--k", da.k, "Documents mixed per step");
    cmd->add_option("--mode", da.mode, "greedy or topk");
    cmd->add_option("--max-len", da.max_len, "Maximum output length");
    cmd->add_option("--out", da.out, "Write the output here instead of stdout");
  };
  auto* gen = app.add_subcommand("generate", "Decode responses for contexts");
  add_decode(gen, true);
  gen->add_option("--context", da.contexts, "Context text (repeatable)");
  gen->add_option("--context-file", da.context_file, "One context per line")->check(CLI::ExistingFile);
  gen->add_flag("--trace", da.trace, "Emit JSON records with retrieval and per-step mixture weights");

  auto* eval = app.add_subcommand("evaluate", "Decode a corpus and report KMR, BLEU, Dist-n, Entropy, recall");
  add_decode(eval, false);
  eval->add_option("--corpus", da.corpus, "Evaluation JSONL (decoded with --model)")->check(CLI::ExistingFile);
  eval->add_option("--hyps", da.hyps, "Score these hypotheses, one per line, instead of decoding")->check(CLI::ExistingFile);
  eval->add_option("--refs", da.refs, "References aligned with --hyps, ' ||| ' between alternatives")
      ->check(CLI::ExistingFile);
  eval->add_option("--contexts", da.contexts_file, "Contexts aligned with --hyps")->check(CLI::ExistingFile);
  eval->add_option("--metrics", da.metrics, "Comma list of kmr, bleu, dist, entropy, recall, loss (default all)");
  eval->add_option("--stopwords", da.stopwords, "Stopword list")->check(CLI::ExistingFile);

  std::vector<std::string> argv_store{"retgen"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  RunConfig rc;
  try {
    rc = resolve(common);
  } catch (const ConfigError& e) {
    err << "retgen: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "retgen: " << e.what() << "\n";
    return kExitOperational;
  }

  try {
    if (*synth) return cmd_synth_data(rc, out_dir, out);
    if (*ingest) return cmd_ingest(rc, docs_path, corpus_paths, out_dir, out, err);
    if (*index) return cmd_build_index(rc, model_path, docs_path, out_path, out, err);
    if (*warm) {
      if (ta.steps) rc.set("warm.steps", Json(*ta.steps));
      return cmd_warm_start(rc, vocab_path, docs_path, corpus_path, valid_path, init_path, out_path, out, err);
    }
    if (*train) return cmd_train(rc, ta, out, err);
    if (*rtrain) return cmd_retriever_train(rc, ta, out, err);
    if (*gen) return cmd_generate(rc, da, out, err);
    if (*eval) return cmd_evaluate(rc, da, out, err);
  } catch (const ConfigError& e) {
    err << "retgen: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "retgen: " << e.what() << "\n";
    return kExitOperational;
  }
  return kExitUsage;
}

}  // namespace retgen
