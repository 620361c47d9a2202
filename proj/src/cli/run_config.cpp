#include "retgen/cli/run_config.hpp"

#include "retgen/core/parallel.hpp"

namespace retgen {

namespace {

Json tiny_values() {
  return Json{
      {"seed", 0},
      {"threads", 0},
      {"data.n_docs", 100},
      {"data.vocab_size", 260},
      {"data.key_len", 2},
      {"data.fact_len", 8},
      {"data.distractor_len", 3},
      {"data.n_examples", 2000},
      {"data.n_valid", 200},
      {"data.heldout_docs", 20},
      {"data.n_heldout", 100},
      {"data.n_retriever_pairs", 2000},
      {"text.min_freq", 1},
      {"text.max_context", 48},
      {"text.max_target", 16},
      {"text.doc_cap", 32},
      {"generator.dim", 32},
      {"generator.heads", 2},
      {"generator.layers", 1},
      {"generator.doc_pos_offset", 64},
      {"generator.max_positions", 97},
      {"generator.tie_embeddings", true},
      {"retriever.dim", 32},
      {"lsh.tables", 16},
      {"lsh.bits", 6},
      {"lsh.probes", 4},
      {"lsh.seed", 0},
      {"warm.steps", 200},
      {"warm.batch_size", 16},
      {"warm.lr", 1e-2},
      {"train.k", 4},
      {"train.refresh_period", 200},
      {"train.batch_size", 8},
      {"train.lr_generator", 3e-3},
      {"train.lr_retriever", 3e-3},
      {"train.steps", 2000},
      {"train.baseline", "expected_reward"},
      {"train.phi_estimator", "autodiff"},
      {"train.retrieval_mode", "lsh"},
      {"train.freeze_retriever", false},
      {"train.freeze_generator", false},
      {"train.use_retrieval", true},
      {"train.eval_every", 200},
      {"backward.steps", 2000},
      {"backward.batch_size", 8},
      {"backward.lr", 3e-3},
      {"decode.k", 4},
      {"decode.mode", "greedy"},
      {"decode.sample_topk", 10},
      {"decode.temperature", 1.0},
      {"decode.max_len", 16},
      {"decode.correction", true},
      {"decode.num_hypotheses", 16},
      {"decode.mmi_mean_of_logs", false},
      {"decode.retrieval_mode", "lsh"},
      {"eval.stopword_percent", 1.0},
      {"eval.recall_k", 1},
      {"eval.bleu_order", 4},
  };
}

Json faithful_values() {
  Json v = tiny_values();
  v["text.max_context"] = 256;
  v["text.max_target"] = 128;
  v["text.doc_cap"] = 100;
  v["generator.dim"] = 64;
  v["generator.heads"] = 4;
  v["generator.layers"] = 2;
  v["generator.doc_pos_offset"] = 400;
  v["generator.max_positions"] = 512;
  v["train.k"] = 4;
  v["train.refresh_period"] = 200;
  v["train.batch_size"] = 128;
  v["train.lr_generator"] = 1e-6;
  v["train.lr_retriever"] = 1e-6;
  v["backward.batch_size"] = 128;
  v["backward.lr"] = 1e-6;
  v["decode.k"] = 4;
  v["decode.max_len"] = 128;
  return v;
}

bool same_kind(const Json& preset, const Json& value) {
  if (preset.is_boolean()) return value.is_boolean();
  if (preset.is_number_integer()) return value.is_number_integer();
  if (preset.is_number_float()) return value.is_number();
  if (preset.is_string()) return value.is_string();
  return false;
}

}  // namespace

RunConfig RunConfig::preset(const std::string& name) {
  RunConfig c;
  c.preset_ = name;
  if (name == "tiny") {
    c.values_ = tiny_values();
  } else if (name == "paper-faithful") {
    c.values_ = faithful_values();
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected tiny or paper-faithful)");
  }
  return c;
}

void RunConfig::set(const std::string& key, const Json& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  if (!same_kind(*it, value)) {
    throw ConfigError("config key '" + key + "' expects a value like " + it->dump() + ", got " + value.dump());
  }
  *it = it->is_number_float() ? Json(value.get<double>()) : value;
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  set(key, value);
}

void RunConfig::merge(const Json& overrides, const std::string& origin) {
  if (!overrides.is_object()) throw ConfigError(origin + ": config must be a JSON object of dotted keys");
  for (const auto& [key, value] : overrides.items()) {
    try {
      set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ": " + e.what());
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  Json j = Json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + ": not valid JSON");
  merge(j, path.string());
}

const Json& RunConfig::at(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return *it;
}

long RunConfig::get_int(const std::string& key) const { return at(key).get<long>(); }
double RunConfig::get_double(const std::string& key) const { return at(key).get<double>(); }
bool RunConfig::get_bool(const std::string& key) const { return at(key).get<bool>(); }
std::string RunConfig::get_string(const std::string& key) const { return at(key).get<std::string>(); }

std::string RunConfig::hash() const {
  Json v = values_;
  v.erase("threads");
  return hex64(fnv1a64(v.dump()));
}

Json RunConfig::header() const { return Json{{"config_hash", hash()}, {"seed", seed()}, {"preset", preset_}}; }

SyntheticConfig RunConfig::synthetic() const {
  SyntheticConfig c;
  c.n_docs = static_cast<int>(get_int("data.n_docs"));
  c.vocab_size = static_cast<int>(get_int("data.vocab_size"));
  c.key_len = static_cast<int>(get_int("data.key_len"));
  c.fact_len = static_cast<int>(get_int("data.fact_len"));
  c.distractor_len = static_cast<int>(get_int("data.distractor_len"));
  c.n_examples = static_cast<int>(get_int("data.n_examples"));
  c.n_valid = static_cast<int>(get_int("data.n_valid"));
  c.heldout_docs = static_cast<int>(get_int("data.heldout_docs"));
  c.n_heldout = static_cast<int>(get_int("data.n_heldout"));
  c.n_retriever_pairs = static_cast<int>(get_int("data.n_retriever_pairs"));
  return c;
}

CorpusLimits RunConfig::limits() const {
  return {static_cast<int>(get_int("text.max_context")), static_cast<int>(get_int("text.max_target")),
          static_cast<int>(get_int("text.doc_cap"))};
}

GeneratorConfig RunConfig::generator(int vocab_size) const {
  GeneratorConfig c;
  c.vocab_size = vocab_size;
  c.dim = static_cast<int>(get_int("generator.dim"));
  c.heads = static_cast<int>(get_int("generator.heads"));
  c.layers = static_cast<int>(get_int("generator.layers"));
  c.max_positions = static_cast<int>(get_int("generator.max_positions"));
  c.doc_pos_offset = static_cast<int>(get_int("generator.doc_pos_offset"));
  c.doc_cap = static_cast<int>(get_int("text.doc_cap"));
  c.max_context = static_cast<int>(get_int("text.max_context"));
  c.max_target = static_cast<int>(get_int("text.max_target"));
  c.tie_embeddings = get_bool("generator.tie_embeddings");
  return c;
}

LshConfig RunConfig::lsh() const {
  LshConfig c;
  c.tables = static_cast<int>(get_int("lsh.tables"));
  c.bits = static_cast<int>(get_int("lsh.bits"));
  c.probes = static_cast<int>(get_int("lsh.probes"));
  c.seed = static_cast<std::uint64_t>(get_int("lsh.seed"));
  return c;
}

WarmStartConfig RunConfig::warm_start() const {
  WarmStartConfig c;
  c.steps = static_cast<int>(get_int("warm.steps"));
  c.batch_size = static_cast<int>(get_int("warm.batch_size"));
  c.lr = get_double("warm.lr");
  c.seed = seed();
  return c;
}

JointConfig RunConfig::joint() const {
  JointConfig c;
  c.k = static_cast<int>(get_int("train.k"));
  c.refresh_period = static_cast<int>(get_int("train.refresh_period"));
  c.batch_size = static_cast<int>(get_int("train.batch_size"));
  c.lr_generator = get_double("train.lr_generator");
  c.lr_retriever = get_double("train.lr_retriever");
  c.max_steps = get_int("train.steps");
  c.seed = seed();
  c.baseline.mode = parse_control_variate(get_string("train.baseline"));
  const std::string est = get_string("train.phi_estimator");
  if (est == "autodiff") {
    c.phi_estimator = PhiEstimator::kAutodiff;
  } else if (est == "actor_critic") {
    c.phi_estimator = PhiEstimator::kActorCritic;
  } else {
    throw ConfigError("train.phi_estimator must be autodiff or actor_critic, got '" + est + "'");
  }
  c.retrieval_mode = parse_retrieval_mode(get_string("train.retrieval_mode"));
  c.freeze_retriever = get_bool("train.freeze_retriever");
  c.freeze_generator = get_bool("train.freeze_generator");
  c.use_retrieval = get_bool("train.use_retrieval");
  c.threads = resolve_threads(static_cast<int>(get_int("threads")));
  return c;
}

BackwardConfig RunConfig::backward() const {
  BackwardConfig c;
  c.steps = static_cast<int>(get_int("backward.steps"));
  c.batch_size = static_cast<int>(get_int("backward.batch_size"));
  c.lr = get_double("backward.lr");
  c.seed = seed();
  c.threads = resolve_threads(static_cast<int>(get_int("threads")));
  return c;
}

DecodeConfig RunConfig::decode() const {
  DecodeConfig c;
  c.k = static_cast<int>(get_int("decode.k"));
  c.mode = parse_decode_mode(get_string("decode.mode"));
  c.sample_topk = static_cast<int>(get_int("decode.sample_topk"));
  c.temperature = get_double("decode.temperature");
  c.max_len = static_cast<int>(get_int("decode.max_len"));
  c.correction = get_bool("decode.correction");
  c.num_hypotheses = static_cast<int>(get_int("decode.num_hypotheses"));
  c.mmi_mean_of_logs = get_bool("decode.mmi_mean_of_logs");
  c.seed = seed();
  c.threads = resolve_threads(static_cast<int>(get_int("threads")));
  return c;
}

void RunConfig::validate() const {
  try {
    generator(Vocabulary::kNumReserved + 1).validate();
    joint().validate();
    decode().validate();
    parse_retrieval_mode(get_string("decode.retrieval_mode"));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  if (get_int("threads") < 0) throw ConfigError("threads must be >= 0");
}

}  // namespace retgen
