#include "retgen/text/corpus.hpp"

#include <fstream>
#include <iostream>

namespace retgen {

DocumentStore::DocumentStore(std::vector<Document> docs) : docs_(std::move(docs)) {
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    if (!by_id_.emplace(docs_[i].id, static_cast<int>(i)).second) {
      throw Error("duplicate document id '" + docs_[i].id + "'");
    }
  }
}

std::optional<int> DocumentStore::find(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

int count_sentences(std::span<const std::string> words) {
  int n = 0;
  bool open = false;
  for (const auto& w : words) {
    if (w == "." || w == "!" || w == "?") {
      if (open) ++n;
      open = false;
    } else {
      open = true;
    }
  }
  return n + (open ? 1 : 0);
}

namespace {

// Calls `fn(json)` for every non-header line. Lines that do not parse as a
// JSON object, or for which fn returns false, count as malformed.
template <typename Fn>
void scan_jsonl(const std::filesystem::path& path, LoadStats& stats, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 0;
  std::size_t records = 0;
  std::size_t bad = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j = Json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.is_object() && j.contains("_header")) continue;
    ++records;
    ++stats.read;
    if (j.is_discarded() || !j.is_object() || !fn(j)) {
      ++stats.malformed;
      ++bad;
      std::cerr << "warning: " << path.string() << ":" << lineno << ": malformed record skipped\n";
    }
  }
  if (records > 0 && bad == records) {
    throw Error("every record in '" + path.string() + "' is malformed");
  }
}

std::string id_field(const Json& j) {
  const Json& v = j.at("id");
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw Error("bad id");
}

bool string_field(const Json& j, const char* key, std::string& out) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) return false;
  out = it->get<std::string>();
  return true;
}

}  // namespace

std::vector<RawExample> read_raw_corpus(const std::filesystem::path& path, LoadStats* stats) {
  LoadStats local;
  LoadStats& s = stats ? *stats : local;
  std::vector<RawExample> out;
  scan_jsonl(path, s, [&](const Json& j) {
    RawExample ex;
    try {
      ex.id = id_field(j);
    } catch (...) {
      return false;
    }
    if (!string_field(j, "context", ex.context) || !string_field(j, "target", ex.target)) return false;
    if (auto it = j.find("oracle_doc_id"); it != j.end() && !it->is_null()) {
      if (it->is_string()) {
        ex.oracle_doc_id = it->get<std::string>();
      } else if (it->is_number_integer()) {
        ex.oracle_doc_id = std::to_string(it->get<long long>());
      } else {
        return false;
      }
    }
    out.push_back(std::move(ex));
    return true;
  });
  return out;
}

std::vector<RawDocument> read_raw_documents(const std::filesystem::path& path, LoadStats* stats) {
  LoadStats local;
  LoadStats& s = stats ? *stats : local;
  std::vector<RawDocument> out;
  scan_jsonl(path, s, [&](const Json& j) {
    RawDocument d;
    try {
      d.id = id_field(j);
    } catch (...) {
      return false;
    }
    if (!string_field(j, "text", d.text)) return false;
    string_field(j, "title", d.title);
    out.push_back(std::move(d));
    return true;
  });
  return out;
}

std::vector<CorpusExample> tokenize_corpus(const std::vector<RawExample>& raw, const Vocabulary& vocab,
                                           const CorpusLimits& limits, LoadStats* stats) {
  std::vector<CorpusExample> out;
  for (const auto& r : raw) {
    CorpusExample ex{r.id, vocab.encode_text(r.context), vocab.encode_text(r.target), r.oracle_doc_id, -1};
    if (static_cast<int>(ex.context.size()) > limits.max_context ||
        static_cast<int>(ex.target.size()) > limits.max_target) {
      if (stats) ++stats->dropped_length;
      continue;
    }
    if (stats) ++stats->kept;
    out.push_back(std::move(ex));
  }
  return out;
}

DocumentStore tokenize_documents(const std::vector<RawDocument>& raw, const Vocabulary& vocab,
                                 const CorpusLimits& limits, LoadStats* stats) {
  std::vector<Document> docs;
  for (const auto& r : raw) {
    const auto words = split_words(r.text);
    if (count_sentences(words) < 2) {
      if (stats) ++stats->dropped_single_sentence;
      continue;
    }
    Document d{r.id, r.title, r.text, vocab.encode(words)};
    if (static_cast<int>(d.tokens.size()) > limits.doc_cap) {
      d.tokens.resize(limits.doc_cap);
      if (stats) ++stats->truncated;
    }
    if (stats) ++stats->kept;
    docs.push_back(std::move(d));
  }
  return DocumentStore(std::move(docs));
}

std::vector<CorpusExample> load_corpus(const std::filesystem::path& path, const Vocabulary& vocab,
                                       const CorpusLimits& limits, LoadStats* stats) {
  LoadStats local;
  LoadStats& s = stats ? *stats : local;
  return tokenize_corpus(read_raw_corpus(path, &s), vocab, limits, &s);
}

DocumentStore load_documents(const std::filesystem::path& path, const Vocabulary& vocab,
                             const CorpusLimits& limits, LoadStats* stats) {
  LoadStats local;
  LoadStats& s = stats ? *stats : local;
  return tokenize_documents(read_raw_documents(path, &s), vocab, limits, &s);
}

std::size_t resolve_oracles(std::vector<CorpusExample>& examples, const DocumentStore& docs) {
  std::size_t n = 0;
  for (auto& ex : examples) {
    ex.oracle_doc = -1;
    if (ex.oracle_doc_id.empty()) continue;
    if (auto i = docs.find(ex.oracle_doc_id)) {
      ex.oracle_doc = *i;
      ++n;
    }
  }
  return n;
}

std::string corpus_to_jsonl(const std::vector<RawExample>& examples, const Json& header) {
  std::string out;
  if (!header.is_null()) out += Json{{"_header", header}}.dump() + "\n";
  for (const auto& ex : examples) {
    Json j{{"id", ex.id}, {"context", ex.context}, {"target", ex.target}};
    if (!ex.oracle_doc_id.empty()) j["oracle_doc_id"] = ex.oracle_doc_id;
    out += j.dump() + "\n";
  }
  return out;
}

std::string documents_to_jsonl(const std::vector<RawDocument>& docs, const Json& header) {
  std::string out;
  if (!header.is_null()) out += Json{{"_header", header}}.dump() + "\n";
  for (const auto& d : docs) out += Json{{"id", d.id}, {"title", d.title}, {"text", d.text}}.dump() + "\n";
  return out;
}

}  // namespace retgen
