#include "nstm/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nstm/errors.hpp"
#include "nstm/special.hpp"

namespace nstm {

std::vector<double> midranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    // positions i..j share rank ((i+1) + (j+1)) / 2
    const double r = 0.5 * static_cast<double>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double tie_term(std::span<const double> v) {
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  double total = 0.0;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t j = i;
    while (j < s.size() && s[j] == s[i]) ++j;
    const double t = static_cast<double>(j - i);
    total += t * t * t - t;
    i = j;
  }
  return total;
}

namespace {

struct Pooled {
  std::vector<double> values;
  std::vector<double> ranks;
  std::vector<double> rank_sum;
  std::vector<std::size_t> sizes;
  double N = 0.0;
};

Pooled pool(std::span<const SampleGroup> groups) {
  Pooled p;
  for (const auto &g : groups) {
    if (g.values.empty()) throw DataError("group '" + g.label + "' is empty");
    for (double x : g.values)
      if (!std::isfinite(x)) throw DataError("group '" + g.label + "' has a non-finite value");
    p.values.insert(p.values.end(), g.values.begin(), g.values.end());
    p.sizes.push_back(g.values.size());
  }
  p.ranks = midranks(p.values);
  std::size_t off = 0;
  for (std::size_t s : p.sizes) {
    p.rank_sum.push_back(std::accumulate(p.ranks.begin() + off, p.ranks.begin() + off + s, 0.0));
    off += s;
  }
  p.N = static_cast<double>(p.values.size());
  return p;
}

}  // namespace

OmnibusResult kruskal_wallis(std::span<const SampleGroup> groups) {
  if (groups.size() < 2) throw DataError("Kruskal-Wallis needs at least 2 groups");
  const Pooled p = pool(groups);
  OmnibusResult r;
  r.df = static_cast<int>(groups.size()) - 1;
  const double N = p.N;
  double s = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) s += p.rank_sum[g] * p.rank_sum[g] / static_cast<double>(p.sizes[g]);
  const double h_raw = 12.0 / (N * (N + 1.0)) * s - 3.0 * (N + 1.0);
  const double T = tie_term(p.values);
  r.tie_correction = N > 1.0 ? 1.0 - T / (N * N * N - N) : 0.0;
  r.tie_corrected = T > 0.0;
  if (r.tie_correction <= 0.0) {
    r.degenerate = true;
    r.H = 0.0;
    r.p = 1.0;
    return r;
  }
  r.H = std::max(0.0, h_raw / r.tie_correction);
  r.p = chi2_sf(r.H, r.df);
  return r;
}

double rank_biserial(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DataError("rank-biserial needs two nonempty samples");
  std::vector<double> all(a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  const auto ranks = midranks(all);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double ra = std::accumulate(ranks.begin(), ranks.begin() + a.size(), 0.0);
  const double u = ra - na * (na + 1.0) / 2.0;
  return 1.0 - 2.0 * u / (na * nb);
}

double rank_biserial(std::span<const double> method, std::span<const double> baseline, Direction d) {
  const double raw = rank_biserial(method, baseline);
  return d == Direction::LowerIsBetter ? raw : -raw;
}

const char *to_string(EffectLabel l) {
  switch (l) {
    case EffectLabel::Negligible: return "negligible";
    case EffectLabel::Small: return "small";
    case EffectLabel::Medium: return "medium";
    case EffectLabel::Large: return "large";
  }
  return "?";
}

EffectLabel effect_label(double r) {
  const double a = std::abs(r);
  if (a < 0.1) return EffectLabel::Negligible;
  if (a < 0.3) return EffectLabel::Small;
  if (a < 0.5) return EffectLabel::Medium;
  return EffectLabel::Large;
}

std::vector<double> holm_adjust(std::span<const double> p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> out(m);
  double running = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const double adj = std::min(1.0, static_cast<double>(m - k) * p[idx[k]]);
    running = std::max(running, adj);
    out[idx[k]] = running;
  }
  return out;
}

std::vector<PairwiseResult> dunn_posthoc(std::span<const SampleGroup> groups, std::optional<std::size_t> reference,
                                         Direction direction) {
  if (groups.size() < 2) throw DataError("Dunn's test needs at least 2 groups");
  if (reference && *reference >= groups.size()) throw DataError("Dunn's test: reference group out of range");
  const Pooled p = pool(groups);
  const double N = p.N;
  const double var = N * (N + 1.0) / 12.0 - tie_term(p.values) / (12.0 * (N - 1.0 > 0.0 ? N - 1.0 : 1.0));

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (reference) {
    for (std::size_t g = 0; g < groups.size(); ++g)
      if (g != *reference) pairs.emplace_back(g, *reference);
  } else {
    for (std::size_t i = 0; i < groups.size(); ++i)
      for (std::size_t j = i + 1; j < groups.size(); ++j) pairs.emplace_back(i, j);
  }

  std::vector<PairwiseResult> out;
  std::vector<double> raw;
  for (auto [i, j] : pairs) {
    PairwiseResult r;
    r.a = groups[i].label;
    r.b = groups[j].label;
    const double mean_i = p.rank_sum[i] / static_cast<double>(p.sizes[i]);
    const double mean_j = p.rank_sum[j] / static_cast<double>(p.sizes[j]);
    const double se = std::sqrt(std::max(0.0, var) * (1.0 / p.sizes[i] + 1.0 / p.sizes[j]));
    r.z = se > 0.0 ? (mean_i - mean_j) / se : 0.0;
    r.p_raw = se > 0.0 ? std::min(1.0, 2.0 * normal_sf(std::abs(r.z))) : 1.0;
    r.r = rank_biserial(groups[i].values, groups[j].values, direction);
    r.effect = effect_label(r.r);
    raw.push_back(r.p_raw);
    out.push_back(r);
  }
  const auto adj = holm_adjust(raw);
  for (std::size_t k = 0; k < out.size(); ++k) out[k].p_holm = adj[k];
  return out;
}

const char *to_string(LeveneCenter c) { return c == LeveneCenter::Mean ? "mean" : "median"; }

LeveneResult levene(std::span<const SampleGroup> groups, LeveneCenter center) {
  if (groups.size() < 2) throw DataError("Levene's test needs at least 2 groups");
  LeveneResult res;
  res.center = center;
  const std::size_t k = groups.size();
  std::vector<std::vector<double>> z(k);
  std::size_t N = 0;
  for (std::size_t g = 0; g < k; ++g) {
    const auto &v = groups[g].values;
    if (v.size() < 2) throw DataError("Levene's test: group '" + groups[g].label + "' needs >= 2 values");
    double c;
    if (center == LeveneCenter::Mean) {
      c = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    } else {
      std::vector<double> s = v;
      std::sort(s.begin(), s.end());
      const std::size_t n = s.size();
      c = n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
    }
    for (double x : v) z[g].push_back(std::abs(x - c));
    N += v.size();
  }
  res.df1 = static_cast<int>(k) - 1;
  res.df2 = static_cast<int>(N - k);
  double grand = 0.0;
  std::vector<double> means(k);
  for (std::size_t g = 0; g < k; ++g) {
    means[g] = std::accumulate(z[g].begin(), z[g].end(), 0.0) / static_cast<double>(z[g].size());
    grand += std::accumulate(z[g].begin(), z[g].end(), 0.0);
  }
  grand /= static_cast<double>(N);
  double between = 0.0, within = 0.0;
  for (std::size_t g = 0; g < k; ++g) {
    between += static_cast<double>(z[g].size()) * (means[g] - grand) * (means[g] - grand);
    for (double x : z[g]) within += (x - means[g]) * (x - means[g]);
  }
  if (!(within > 0.0)) {
    res.degenerate = true;
    res.W = 0.0;
    res.p = 1.0;
    return res;
  }
  res.W = (static_cast<double>(res.df2) / res.df1) * between / within;
  res.p = f_sf(res.W, res.df1, res.df2);
  return res;
}

std::string significance_stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "";
}

}  // namespace nstm
