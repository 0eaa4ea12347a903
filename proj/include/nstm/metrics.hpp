#pragma once

#include <array>
#include <climits>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nstm/generation.hpp"
#include "nstm/vocab.hpp"

namespace nstm {

// ---------------------------------------------------------------------------
// Embeddings and Vendi score

struct EmbeddingSet {
  std::size_t dim = 0;
  std::vector<std::vector<double>> vectors;  // unit norm
  std::string provider_id;
};

// Term-frequency vector of hashed character n-grams (n = 2..4, FNV-1a into
// `dim` buckets), L2-normalized. Throws DataError on empty text.
std::vector<double> hashed_ngram_embedding(const std::string &text, std::size_t dim = 512);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string id() const = 0;
  virtual std::vector<double> embed(const GenerationRecord &record) const = 0;
};

class HashedNgramEmbedder final : public EmbeddingProvider {
 public:
  explicit HashedNgramEmbedder(std::size_t dim = 512) : dim_(dim) {}
  std::string id() const override { return "hashed-char-ngram-2-4-d" + std::to_string(dim_); }
  std::vector<double> embed(const GenerationRecord &record) const override;

 private:
  std::size_t dim_;
};

// Externally computed vectors from a JSON-lines file of
// {"condition": ..., "story_index": ..., "vector": [...]}. Vectors are
// L2-normalized on load.
class PrecomputedEmbeddings final : public EmbeddingProvider {
 public:
  static PrecomputedEmbeddings load(const std::filesystem::path &path);
  void add(const std::string &condition, int story_index, std::vector<double> vector);
  std::string id() const override { return "precomputed:" + source_; }
  std::vector<double> embed(const GenerationRecord &record) const override;

 private:
  std::string source_ = "memory";
  std::map<std::pair<std::string, int>, std::vector<double>> vectors_;
};

EmbeddingSet embed_corpus(std::span<const GenerationRecord> records, const EmbeddingProvider &provider);

// K[i][j] = <e_i, e_j>, n x n row-major, exactly symmetric.
std::vector<double> cosine_kernel(const EmbeddingSet &set);

// exp(-sum l_i ln l_i) over eigenvalues of K / n, with 0 ln 0 = 0.
double vendi_from_kernel(std::span<const double> K, std::size_t n);
double vendi_score(const EmbeddingSet &set);

// ---------------------------------------------------------------------------
// BLEU / Self-BLEU

inline constexpr int kBleuMaxOrder = 4;
// Count substituted for a zero match count at orders >= 2.
inline constexpr double kBleuSmoothing = 1e-9;

struct BleuStats {
  std::array<std::size_t, kBleuMaxOrder> matches{};  // clipped n-gram matches
  std::array<std::size_t, kBleuMaxOrder> totals{};   // candidate n-grams
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;  // closest reference length, ties to shorter

  bool operator==(const BleuStats &) const = default;
};

BleuStats bleu_stats(std::span<const TokenId> candidate, std::span<const std::vector<TokenId>> references);
BleuStats bleu_stats(std::span<const TokenId> candidate, std::span<const std::span<const TokenId>> references);
// Uniform-weight geometric mean of the four precisions times the brevity
// penalty exp(1 - r/c) when c <= r. Zero unigram matches give 0.
double bleu_from_stats(const BleuStats &stats);
double bleu(std::span<const TokenId> candidate, std::span<const std::vector<TokenId>> references);

struct SelfBleu {
  std::vector<double> per_story;
  double mean_bleu = 0.0;
  double std_bleu = 0.0;  // population std of per-story BLEU
  double diversity = 0.0;  // 1 - mean_bleu
};

// Each story against all others. Needs >= 2 non-empty stories.
SelfBleu self_bleu_diversity(std::span<const std::vector<TokenId>> corpus);

// ---------------------------------------------------------------------------
// Collapse detection and constraint checks

struct TmcOptions {
  double min_type_token_ratio = 0.20;
  int window = 8;
  int repeats = 4;
};

// Heuristic total-modal-collapse flag: type-token ratio below the threshold,
// or some window of `window` tokens repeated `repeats` times back to back.
// An empty story counts as collapsed.
bool detect_tmc(std::span<const TokenId> tokens, const TmcOptions &options = {});

enum class ConstraintKind { MaxWordCount, ExactProperNounCount, RequiredTenseMarker, Custom };

struct ConstraintRule {
  std::string id;
  ConstraintKind kind = ConstraintKind::MaxWordCount;
  int limit = 60;       // MaxWordCount
  int count = 1;        // ExactProperNounCount: distinct tagged surface forms
  std::string tag;      // lexicon tag for the tag-based kinds
  int min_count = 0;    // Custom: tagged-token count must lie in [min, max]
  int max_count = INT_MAX;
};

const char *to_string(ConstraintKind kind);
ConstraintKind parse_constraint_kind(const std::string &name);

// Story length <= 60 words, exactly one proper noun, some present-tense marker.
std::vector<ConstraintRule> default_constraint_rules();

bool rule_violated(const ConstraintRule &rule, std::span<const std::string> words, const Lexicon &lexicon);
// Words are whitespace-delimited units of `text`; one point per failed rule.
int check_constraints(const std::string &text, std::span<const ConstraintRule> rules, const Lexicon &lexicon);

// ---------------------------------------------------------------------------
// Per-condition report

enum class ConditionStatus { Ok, FigureExcluded, Excluded };
const char *to_string(ConditionStatus status);
ConditionStatus parse_condition_status(const std::string &name);

// >= 40% collapsed: excluded; > 20%: excluded from the figure only.
ConditionStatus exclusion_status(int tmc_count, int n_stories);

struct MetricSettings {
  TmcOptions tmc;
  std::vector<ConstraintRule> rules = default_constraint_rules();
};

struct ConditionReport {
  std::string condition;
  int n_stories = 0;
  int diversity_sample = 0;  // non-collapsed stories used for Vendi / Self-BLEU
  std::optional<double> vendi;
  std::optional<double> lexical_diversity;
  std::optional<double> lexical_diversity_std;
  int tmc_count = 0;
  double tmc_rate = 0.0;
  std::vector<int> per_story_violations;
  std::vector<bool> per_story_tmc;
  double mean_violations = 0.0;
  ConditionStatus status = ConditionStatus::Ok;
  std::string embedder;
  std::string tmc_detector = "heuristic-TMC";

  bool operator==(const ConditionReport &) const = default;
};

ConditionReport condition_report(std::span<const GenerationRecord> records, const MetricSettings &settings,
                                 const Lexicon &lexicon, const EmbeddingProvider &embedder);

}  // namespace nstm
