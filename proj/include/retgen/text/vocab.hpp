#pragma once

#include "retgen/core/io.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace retgen {

/// Lowercases and splits on whitespace; every punctuation character becomes
/// its own token. "Hello, world" -> {"hello", ",", "world"}.
std::vector<std::string> split_words(std::string_view text);
std::string join_words(std::span<const std::string> words);

/// Token <-> id bijection. Ids 0..4 are reserved and never change.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSep = 3;
  static constexpr int kUnk = 4;
  static constexpr int kNumReserved = 5;

  Vocabulary();

  /// Tokens with count >= min_freq, ordered by descending count then
  /// lexicographically. Throws on an empty input.
  static Vocabulary build(std::span<const std::vector<std::string>> streams, int min_freq);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(std::string_view token) const;
  bool contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }
  const std::string& token(int id) const;
  static bool is_special(int id) { return id >= 0 && id < kNumReserved; }

  std::vector<int> encode(std::span<const std::string> words) const;
  std::vector<int> encode_text(std::string_view text) const { return encode(split_words(text)); }
  std::vector<std::string> words(std::span<const int> ids, bool skip_special = true) const;
  std::string decode(std::span<const int> ids, bool skip_special = true) const;

  Json to_json() const;
  static Vocabulary from_json(const Json& j);
  /// One token per line, line number = id, preceded by a '#' header line.
  void save(const std::filesystem::path& path, const std::string& header = "") const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void append(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// build_vocab over JSONL corpus / document files (context, target, text
/// fields are tokenized; header lines skipped).
Vocabulary build_vocab(std::span<const std::filesystem::path> paths, int min_freq);

}  // namespace retgen
