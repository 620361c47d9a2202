#include "retgen/text/vocab.hpp"
#include "retgen/text/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

namespace retgen {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::string join_words(std::span<const std::string> words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* t : {"<pad>", "<bos>", "<eos>", "<sep>", "<unk>"}) append(t);
}

void Vocabulary::append(std::string token) {
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> streams, int min_freq) {
  std::map<std::string, long> counts;
  for (const auto& s : streams) {
    for (const auto& w : s) ++counts[w];
  }
  if (counts.empty()) throw Error("build_vocab: corpus is empty");
  std::vector<std::pair<std::string, long>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (auto& [tok, n] : ordered) {
    if (n >= min_freq && !v.contains(tok)) v.append(tok);
  }
  return v;
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw Error("vocabulary id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<int> Vocabulary::encode(std::span<const std::string> words) const {
  std::vector<int> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

std::vector<std::string> Vocabulary::words(std::span<const int> ids, bool skip_special) const {
  std::vector<std::string> out;
  for (int i : ids) {
    if (skip_special && is_special(i) && i != kUnk) continue;
    out.push_back(token(i));
  }
  return out;
}

std::string Vocabulary::decode(std::span<const int> ids, bool skip_special) const {
  const auto w = words(ids, skip_special);
  return join_words(w);
}

Json Vocabulary::to_json() const { return Json(tokens_); }

Vocabulary Vocabulary::from_json(const Json& j) {
  Vocabulary v;
  const auto tokens = j.get<std::vector<std::string>>();
  if (tokens.size() < kNumReserved) throw Error("vocabulary json is missing reserved tokens");
  for (int i = 0; i < kNumReserved; ++i) {
    if (tokens[i] != v.tokens_[i]) throw Error("vocabulary json has wrong reserved token at id " + std::to_string(i));
  }
  for (std::size_t i = kNumReserved; i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) throw Error("vocabulary json has duplicate token '" + tokens[i] + "'");
    v.append(tokens[i]);
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path, const std::string& header) const {
  std::string out = "# retgen-vocab v1";
  if (!header.empty()) out += " " + header;
  out += "\n";
  for (const auto& t : tokens_) out += t + "\n";
  write_file_atomic(path, out);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open vocabulary '" + path.string() + "'");
  std::string line;
  std::vector<std::string> tokens;
  bool first = true;
  while (std::getline(in, line)) {
    if (first && line.rfind("# retgen-vocab", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    tokens.push_back(line);
  }
  return from_json(Json(tokens));
}

Vocabulary build_vocab(std::span<const std::filesystem::path> paths, int min_freq) {
  std::vector<std::vector<std::string>> streams;
  for (const auto& p : paths) {
    std::ifstream in(p);
    if (!in) throw Error("build_vocab: cannot open '" + p.string() + "'");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      Json j = Json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || j.contains("_header")) continue;
      for (const char* field : {"context", "target", "text"}) {
        if (j.contains(field) && j[field].is_string()) streams.push_back(split_words(j[field].get<std::string>()));
      }
    }
  }
  return Vocabulary::build(streams, min_freq);
}

}  // namespace retgen
