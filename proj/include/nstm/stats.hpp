#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nstm {

struct SampleGroup {
  std::string label;
  std::vector<double> values;
};

// Midranks of the pooled values (1-based, ties averaged).
std::vector<double> midranks(std::span<const double> values);

// Sum over tie groups of t^3 - t.
double tie_term(std::span<const double> values);

struct OmnibusResult {
  double H = 0.0;
  int df = 0;
  double p = 1.0;
  double tie_correction = 1.0;  // 1 - sum(t^3 - t) / (N^3 - N)
  bool tie_corrected = false;
  bool degenerate = false;  // every pooled value identical
};

OmnibusResult kruskal_wallis(std::span<const SampleGroup> groups);

// Which way a metric improves, for the sign of rank-biserial r.
enum class Direction { HigherIsBetter, LowerIsBetter };

// r = 1 - 2 U_a / (n_a n_b), U_a the Mann-Whitney count for a over b with
// midranks. Antisymmetric in (a, b).
double rank_biserial(std::span<const double> a, std::span<const double> b);

// Signed so that r > 0 means `method` is better than `baseline`.
double rank_biserial(std::span<const double> method, std::span<const double> baseline, Direction direction);

enum class EffectLabel { Negligible, Small, Medium, Large };
const char *to_string(EffectLabel label);
// |r| < 0.1 negligible, < 0.3 small, < 0.5 medium, otherwise large.
EffectLabel effect_label(double r);

// Holm step-down adjustment; output aligned with the input order.
std::vector<double> holm_adjust(std::span<const double> p);

struct PairwiseResult {
  std::string a, b;
  double z = 0.0;
  double p_raw = 1.0;
  double p_holm = 1.0;
  double r = 0.0;  // rank-biserial of a against b, signed by direction
  EffectLabel effect = EffectLabel::Negligible;
};

// Dunn's test with tie-corrected variance and two-sided p-values, Holm
// adjusted over the comparisons made. With `reference`, compares every other
// group against it (a = other, b = reference); otherwise all pairs i < j.
std::vector<PairwiseResult> dunn_posthoc(std::span<const SampleGroup> groups,
                                         std::optional<std::size_t> reference = std::nullopt,
                                         Direction direction = Direction::HigherIsBetter);

enum class LeveneCenter { Mean, Median };
const char *to_string(LeveneCenter center);

struct LeveneResult {
  double W = 0.0;
  int df1 = 0, df2 = 0;
  double p = 1.0;
  bool degenerate = false;  // zero within-group deviation everywhere
  LeveneCenter center = LeveneCenter::Mean;
};

LeveneResult levene(std::span<const SampleGroup> groups, LeveneCenter center = LeveneCenter::Mean);

// "***" p < .001, "**" p < .01, "*" p < .05, else "".
std::string significance_stars(double p);

}  // namespace nstm
