#include "nstm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <set>

#include <json.hpp>

#include "nstm/errors.hpp"
#include "nstm/jacobi.hpp"
#include "nstm/kernels.hpp"

namespace nstm {

// ---------------------------------------------------------------------------
// Embeddings

namespace {

// Splits UTF-8 text into code points (malformed bytes become single units).
std::vector<std::string> code_points(const std::string &s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 1;
    len = std::min(len, s.size() - i);
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

std::uint64_t fnv1a(const std::string &s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void normalize(std::vector<double> &v, const std::string &what) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  if (!(n2 > 0.0) || !std::isfinite(n2)) throw DataError(what + ": zero or non-finite embedding vector");
  const double inv = 1.0 / std::sqrt(n2);
  for (double &x : v) x *= inv;
}

}  // namespace

std::vector<double> hashed_ngram_embedding(const std::string &text, std::size_t dim) {
  const auto cps = code_points(text);
  if (cps.empty()) throw DataError("cannot embed an empty story");
  std::vector<double> v(dim, 0.0);
  bool any = false;
  for (std::size_t n = 2; n <= 4; ++n) {
    for (std::size_t i = 0; i + n <= cps.size(); ++i) {
      std::string gram;
      for (std::size_t k = 0; k < n; ++k) gram += cps[i + k];
      v[fnv1a(gram) % dim] += 1.0;
      any = true;
    }
  }
  // Single-character stories have no bigrams; fall back to the character.
  if (!any) v[fnv1a(cps[0]) % dim] += 1.0;
  normalize(v, "hashed n-gram embedding");
  return v;
}

std::vector<double> HashedNgramEmbedder::embed(const GenerationRecord &r) const {
  return hashed_ngram_embedding(r.text, dim_);
}

PrecomputedEmbeddings PrecomputedEmbeddings::load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings file '" + path.string() + "'");
  PrecomputedEmbeddings out;
  out.source_ = path.filename().string();
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.add(j.at("condition").get<std::string>(), j.at("story_index").get<int>(),
              j.at("vector").get<std::vector<double>>());
    } catch (const nlohmann::json::exception &e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void PrecomputedEmbeddings::add(const std::string &condition, int story_index, std::vector<double> v) {
  normalize(v, "precomputed embedding for " + condition + "#" + std::to_string(story_index));
  vectors_[{condition, story_index}] = std::move(v);
}

std::vector<double> PrecomputedEmbeddings::embed(const GenerationRecord &r) const {
  auto it = vectors_.find({r.condition, r.story_index});
  if (it == vectors_.end())
    throw DataError("no precomputed embedding for condition '" + r.condition + "' story " +
                    std::to_string(r.story_index));
  return it->second;
}

EmbeddingSet embed_corpus(std::span<const GenerationRecord> records, const EmbeddingProvider &provider) {
  EmbeddingSet set;
  set.provider_id = provider.id();
  for (const auto &r : records) {
    set.vectors.push_back(provider.embed(r));
    if (set.dim == 0) set.dim = set.vectors.back().size();
    if (set.vectors.back().size() != set.dim) throw DataError("embedding dimensions differ within a corpus");
  }
  return set;
}

std::vector<double> cosine_kernel(const EmbeddingSet &set) {
  const std::size_t n = set.vectors.size(), d = set.dim;
  std::vector<double> A(n * d);
  for (std::size_t i = 0; i < n; ++i) std::copy(set.vectors[i].begin(), set.vectors[i].end(), A.begin() + i * d);
  std::vector<double> K(n * n);
  kernels::parallel::gram(A, n, d, K);
  return K;
}

double vendi_from_kernel(std::span<const double> K, std::size_t n) {
  if (n == 0) throw DataError("Vendi score of an empty set");
  const auto ev = symmetric_eigenvalues(K, n);
  double h = 0.0;
  for (double l : ev) {
    const double p = l / static_cast<double>(n);
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::exp(h);
}

double vendi_score(const EmbeddingSet &set) { return vendi_from_kernel(cosine_kernel(set), set.vectors.size()); }

// ---------------------------------------------------------------------------
// BLEU

namespace {

using Ngram = std::vector<TokenId>;
using NgramCounts = std::map<Ngram, std::size_t>;

NgramCounts count_ngrams(std::span<const TokenId> s, std::size_t n) {
  NgramCounts c;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++c[Ngram(s.begin() + i, s.begin() + i + n)];
  return c;
}

}  // namespace

BleuStats bleu_stats(std::span<const TokenId> cand, std::span<const std::span<const TokenId>> refs) {
  BleuStats st;
  st.candidate_length = cand.size();
  bool have_ref = false;
  for (const auto &r : refs) {
    const auto diff = [&](std::size_t len) { return len > cand.size() ? len - cand.size() : cand.size() - len; };
    if (!have_ref || diff(r.size()) < diff(st.reference_length) ||
        (diff(r.size()) == diff(st.reference_length) && r.size() < st.reference_length))
      st.reference_length = r.size();
    have_ref = true;
  }
  for (std::size_t n = 1; n <= kBleuMaxOrder; ++n) {
    const auto cand_counts = count_ngrams(cand, n);
    NgramCounts max_ref;
    for (const auto &r : refs)
      for (const auto &[g, c] : count_ngrams(r, n)) {
        auto &m = max_ref[g];
        m = std::max(m, c);
      }
    std::size_t matched = 0, total = 0;
    for (const auto &[g, c] : cand_counts) {
      total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) matched += std::min(c, it->second);
    }
    st.matches[n - 1] = matched;
    st.totals[n - 1] = total;
  }
  return st;
}

BleuStats bleu_stats(std::span<const TokenId> cand, std::span<const std::vector<TokenId>> refs) {
  std::vector<std::span<const TokenId>> views(refs.begin(), refs.end());
  return bleu_stats(cand, std::span<const std::span<const TokenId>>(views));
}

double bleu_from_stats(const BleuStats &st) {
  if (st.candidate_length == 0 || st.matches[0] == 0) return 0.0;
  double log_p = 0.0;
  for (int n = 0; n < kBleuMaxOrder; ++n) {
    const double num = st.matches[n] > 0 ? static_cast<double>(st.matches[n]) : kBleuSmoothing;
    const double den = static_cast<double>(std::max<std::size_t>(st.totals[n], 1));
    log_p += std::log(num / den) / kBleuMaxOrder;
  }
  const double c = static_cast<double>(st.candidate_length), r = static_cast<double>(st.reference_length);
  const double log_bp = c > r ? 0.0 : 1.0 - r / c;
  return std::exp(log_p + log_bp);
}

double bleu(std::span<const TokenId> cand, std::span<const std::vector<TokenId>> refs) {
  return bleu_from_stats(bleu_stats(cand, refs));
}

SelfBleu self_bleu_diversity(std::span<const std::vector<TokenId>> corpus) {
  const std::size_t n = corpus.size();
  if (n < 2) throw DataError("Self-BLEU needs at least 2 stories, got " + std::to_string(n));
  for (const auto &s : corpus)
    if (s.empty()) throw DataError("Self-BLEU: empty story in corpus");
  SelfBleu out;
  out.per_story.assign(n, 0.0);
  const long nn = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < nn; ++i) {
    std::vector<std::span<const TokenId>> refs;
    refs.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != static_cast<std::size_t>(i)) refs.emplace_back(corpus[j]);
    out.per_story[i] = bleu_from_stats(bleu_stats(corpus[i], std::span<const std::span<const TokenId>>(refs)));
  }
  double sum = 0.0;
  for (double b : out.per_story) sum += b;
  out.mean_bleu = sum / static_cast<double>(n);
  double var = 0.0;
  for (double b : out.per_story) var += (b - out.mean_bleu) * (b - out.mean_bleu);
  out.std_bleu = std::sqrt(var / static_cast<double>(n));
  out.diversity = 1.0 - out.mean_bleu;
  return out;
}

// ---------------------------------------------------------------------------
// Collapse and constraints

bool detect_tmc(std::span<const TokenId> t, const TmcOptions &o) {
  if (t.empty()) return true;
  const std::set<TokenId> types(t.begin(), t.end());
  if (static_cast<double>(types.size()) / static_cast<double>(t.size()) < o.min_type_token_ratio) return true;
  const std::size_t w = static_cast<std::size_t>(std::max(o.window, 1));
  const std::size_t r = static_cast<std::size_t>(std::max(o.repeats, 1));
  if (w * r > t.size()) return false;
  for (std::size_t i = 0; i + w * r <= t.size(); ++i) {
    bool all = true;
    for (std::size_t k = 1; k < r && all; ++k)
      all = std::equal(t.begin() + i, t.begin() + i + w, t.begin() + i + k * w);
    if (all) return true;
  }
  return false;
}

const char *to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::MaxWordCount: return "max_word_count";
    case ConstraintKind::ExactProperNounCount: return "exact_proper_noun_count";
    case ConstraintKind::RequiredTenseMarker: return "required_tense_marker";
    case ConstraintKind::Custom: return "custom";
  }
  return "?";
}

ConstraintKind parse_constraint_kind(const std::string &s) {
  for (auto k : {ConstraintKind::MaxWordCount, ConstraintKind::ExactProperNounCount,
                 ConstraintKind::RequiredTenseMarker, ConstraintKind::Custom})
    if (s == to_string(k)) return k;
  throw DataError("unknown constraint kind '" + s + "'");
}

std::vector<ConstraintRule> default_constraint_rules() {
  ConstraintRule words;
  words.id = "max_60_words";
  words.limit = 60;
  ConstraintRule noun;
  noun.id = "one_proper_noun";
  noun.kind = ConstraintKind::ExactProperNounCount;
  noun.count = 1;
  noun.tag = "proper_noun";
  ConstraintRule tense;
  tense.id = "present_tense";
  tense.kind = ConstraintKind::RequiredTenseMarker;
  tense.tag = "present";
  return {words, noun, tense};
}

bool rule_violated(const ConstraintRule &rule, std::span<const std::string> words, const Lexicon &lex) {
  switch (rule.kind) {
    case ConstraintKind::MaxWordCount:
      return static_cast<long>(words.size()) > rule.limit;
    case ConstraintKind::ExactProperNounCount: {
      std::set<std::string> forms;
      for (const auto &w : words)
        if (lex.has_tag(w, rule.tag)) forms.insert(w);
      return static_cast<int>(forms.size()) != rule.count;
    }
    case ConstraintKind::RequiredTenseMarker:
      return std::none_of(words.begin(), words.end(), [&](const std::string &w) { return lex.has_tag(w, rule.tag); });
    case ConstraintKind::Custom: {
      const long n = std::count_if(words.begin(), words.end(), [&](const std::string &w) { return lex.has_tag(w, rule.tag); });
      return n < rule.min_count || n > rule.max_count;
    }
  }
  return false;
}

int check_constraints(const std::string &text, std::span<const ConstraintRule> rules, const Lexicon &lex) {
  const auto words = split_whitespace(text);
  int v = 0;
  for (const auto &r : rules) v += rule_violated(r, words, lex) ? 1 : 0;
  return v;
}

// ---------------------------------------------------------------------------
// Report

const char *to_string(ConditionStatus s) {
  switch (s) {
    case ConditionStatus::Ok: return "ok";
    case ConditionStatus::FigureExcluded: return "figure-excluded";
    case ConditionStatus::Excluded: return "excluded";
  }
  return "?";
}

ConditionStatus parse_condition_status(const std::string &s) {
  for (auto k : {ConditionStatus::Ok, ConditionStatus::FigureExcluded, ConditionStatus::Excluded})
    if (s == to_string(k)) return k;
  throw DataError("unknown condition status '" + s + "'");
}

ConditionStatus exclusion_status(int tmc_count, int n) {
  if (n <= 0) throw DataError("exclusion status of an empty corpus");
  // Integer comparisons: count/n >= 40% and count/n > 20%.
  if (100L * tmc_count >= 40L * n) return ConditionStatus::Excluded;
  if (100L * tmc_count > 20L * n) return ConditionStatus::FigureExcluded;
  return ConditionStatus::Ok;
}

ConditionReport condition_report(std::span<const GenerationRecord> records, const MetricSettings &settings,
                                 const Lexicon &lex, const EmbeddingProvider &embedder) {
  if (records.empty()) throw DataError("condition report: empty corpus");
  ConditionReport rep;
  rep.condition = records.front().condition;
  rep.n_stories = static_cast<int>(records.size());
  rep.embedder = embedder.id();

  std::vector<GenerationRecord> kept;
  std::vector<std::vector<TokenId>> kept_tokens;
  double viol = 0.0;
  for (const auto &r : records) {
    const bool tmc = detect_tmc(r.token_ids, settings.tmc);
    rep.per_story_tmc.push_back(tmc);
    rep.tmc_count += tmc ? 1 : 0;
    const int v = check_constraints(r.text, settings.rules, lex);
    rep.per_story_violations.push_back(v);
    viol += v;
    if (!tmc) {
      kept.push_back(r);
      kept_tokens.push_back(r.token_ids);
    }
  }
  rep.tmc_rate = static_cast<double>(rep.tmc_count) / rep.n_stories;
  rep.mean_violations = viol / rep.n_stories;
  rep.status = exclusion_status(rep.tmc_count, rep.n_stories);
  rep.diversity_sample = static_cast<int>(kept.size());
  if (!kept.empty()) rep.vendi = vendi_score(embed_corpus(kept, embedder));
  if (kept.size() >= 2) {
    const auto sb = self_bleu_diversity(kept_tokens);
    rep.lexical_diversity = sb.diversity;
    rep.lexical_diversity_std = sb.std_bleu;
  }
  return rep;
}

}  // namespace nstm
