#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nstm/model.hpp"

namespace nstm {

// Whitespace tokenizer over a fixed word list (one word per line; the line
// index is the token id).
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<std::string> words);
  static Vocab load(const std::filesystem::path &path);

  std::size_t size() const { return words_.size(); }
  const std::string &word(TokenId id) const;
  std::optional<TokenId> find(const std::string &word) const;

  std::vector<TokenId> encode(const std::string &text) const;  // DataError on unknown words
  std::string decode(std::span<const TokenId> ids) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

// word -> tags. File lines are "word<TAB>tag[,tag...]".
class Lexicon {
 public:
  static Lexicon load(const std::filesystem::path &path);
  void add(const std::string &word, const std::string &tag) { tags_[word].insert(tag); }
  bool has_tag(const std::string &word, const std::string &tag) const;

 private:
  std::map<std::string, std::set<std::string>> tags_;
};

std::vector<std::string> split_whitespace(const std::string &text);

// A token-id file: whitespace-separated ids, one sequence per non-empty line.
std::vector<std::vector<TokenId>> load_id_sequences(const std::filesystem::path &path);

}  // namespace nstm
