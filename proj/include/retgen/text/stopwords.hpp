#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace retgen {

/// Lowercase surface tokens excluded from bag-of-words metrics.
class StopwordList {
 public:
  StopwordList() = default;
  explicit StopwordList(std::span<const std::string> words);

  /// One token per line; blank lines and '#' comments ignored.
  static StopwordList load(const std::filesystem::path& path);

  void add(const std::string& word);
  bool contains(const std::string& word) const { return words_.count(word) != 0; }
  std::size_t size() const { return words_.size(); }

  /// Adds the top `percent`% most frequent corpus tokens (at least one token
  /// when percent > 0). Ties are broken lexicographically.
  void add_frequency_cut(std::span<const std::vector<std::string>> corpus, double percent);

  /// Sorted contents, for hashing and echoing.
  std::vector<std::string> sorted() const;

 private:
  std::unordered_set<std::string> words_;
};

}  // namespace retgen
