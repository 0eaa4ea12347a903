#include "nstm/vocab.hpp"

#include <fstream>
#include <sstream>

#include "nstm/errors.hpp"

namespace nstm {

std::vector<std::string> split_whitespace(const std::string &text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

Vocab::Vocab(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i].empty() || words_[i].find_first_of(" \t\r\n") != std::string::npos)
      throw DataError("vocab: entry " + std::to_string(i) + " is empty or contains whitespace");
    if (!index_.emplace(words_[i], static_cast<TokenId>(i)).second)
      throw DataError("vocab: duplicate word '" + words_[i] + "'");
  }
}

Vocab Vocab::load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocab file '" + path.string() + "'");
  std::vector<std::string> words;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    words.push_back(line);
  }
  while (!words.empty() && words.back().empty()) words.pop_back();
  return Vocab(std::move(words));
}

const std::string &Vocab::word(TokenId id) const {
  if (id >= words_.size()) throw DataError("token id " + std::to_string(id) + " outside vocab");
  return words_[id];
}

std::optional<TokenId> Vocab::find(const std::string &word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<TokenId> Vocab::encode(const std::string &text) const {
  std::vector<TokenId> ids;
  for (const auto &w : split_whitespace(text)) {
    auto id = find(w);
    if (!id) throw DataError("word '" + w + "' not in vocab");
    ids.push_back(*id);
  }
  return ids;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += word(ids[i]);
  }
  return out;
}

Lexicon Lexicon::load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open lexicon file '" + path.string() + "'");
  Lexicon lex;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw DataError("lexicon line " + std::to_string(lineno) + ": expected 'token<TAB>tag[,tag]'");
    const std::string word = line.substr(0, tab);
    std::istringstream tags(line.substr(tab + 1));
    for (std::string tag; std::getline(tags, tag, ',');)
      if (!tag.empty()) lex.add(word, tag);
  }
  return lex;
}

bool Lexicon::has_tag(const std::string &word, const std::string &tag) const {
  auto it = tags_.find(word);
  return it != tags_.end() && it->second.count(tag);
}

std::vector<std::vector<TokenId>> load_id_sequences(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open token-id file '" + path.string() + "'");
  std::vector<std::vector<TokenId>> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    std::vector<TokenId> seq;
    for (const auto &tok : split_whitespace(line)) {
      try {
        std::size_t used = 0;
        unsigned long v = std::stoul(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        seq.push_back(static_cast<TokenId>(v));
      } catch (const std::exception &) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": '" + tok + "' is not a token id");
      }
    }
    if (!seq.empty()) out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace nstm
