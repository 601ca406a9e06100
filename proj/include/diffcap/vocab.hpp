#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace diffcap {

/// Caption alphabet. Ids 0..3 are PAD, BOS, EOS, UNK.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocabulary();
  /// `words` excludes the reserved tokens; duplicates are rejected.
  explicit Vocabulary(std::span<const std::string> words);

  /// One token per line, line number = id. The first four lines must be the
  /// reserved tokens.
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;  // UNK when absent
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// BOS w... EOS followed by PAD up to `length`. Throws if it does not fit.
  std::vector<int> encode(std::span<const std::string> words, int length) const;
  /// Content tokens between BOS and the first EOS, skipping PAD/BOS.
  std::vector<int> strip(std::span<const int> ids) const;
  std::vector<std::string> decode(std::span<const int> ids) const;
  std::string join(std::span<const int> ids) const;

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

std::vector<std::string> split_words(const std::string& text);

}  // namespace diffcap
