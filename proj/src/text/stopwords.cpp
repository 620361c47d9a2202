#include "retgen/text/stopwords.hpp"
#include "retgen/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace retgen {

StopwordList::StopwordList(std::span<const std::string> words) {
  for (const auto& w : words) add(w);
}

StopwordList StopwordList::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open stopword file '" + path.string() + "'");
  StopwordList list;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    list.add(line.substr(b, e - b + 1));
  }
  return list;
}

void StopwordList::add(const std::string& word) {
  std::string w = word;
  std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  words_.insert(std::move(w));
}

void StopwordList::add_frequency_cut(std::span<const std::vector<std::string>> corpus, double percent) {
  if (percent <= 0.0) return;
  std::map<std::string, long> counts;
  for (const auto& s : corpus) {
    for (const auto& w : s) ++counts[w];
  }
  if (counts.empty()) return;
  std::vector<std::pair<std::string, long>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(ordered.size() * percent / 100.0)));
  for (std::size_t i = 0; i < std::min(n, ordered.size()); ++i) add(ordered[i].first);
}

std::vector<std::string> StopwordList::sorted() const {
  std::vector<std::string> out(words_.begin(), words_.end());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace retgen
