#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualvd/tensor.hpp"

namespace dualvd {

struct EvalRecord {
  std::size_t rank_of_gt = 1;
  std::vector<double> relevance;   // optional, one score per candidate
  std::vector<std::size_t> ranks;  // optional, model rank of each candidate (1 = best)
};

struct MetricInfo {
  const char* name;
  bool higher_is_better;
};

inline constexpr MetricInfo kMetricInfo[] = {
    {"MRR", true}, {"R@1", true}, {"R@5", true}, {"R@10", true}, {"Mean", false}, {"NDCG", true}};

struct MetricsReport {
  std::size_t count = 0;
  double mrr = 0.0;
  std::map<std::size_t, double> recall;  // k -> R@k
  double mean_rank = 0.0;
  std::optional<double> ndcg;
};

// Sum in a fixed pairwise tree so results do not depend on how records are chunked.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

// NDCG over the top K positions of the model ranking, K = number of
// candidates with positive relevance, with log2 position discount.
inline double ndcg_of(const EvalRecord& r) {
  const std::size_t n = r.relevance.size();
  if (r.ranks.size() != n) throw ConfigError("ndcg: ranks and relevance lengths differ");
  const std::size_t k = static_cast<std::size_t>(
      std::count_if(r.relevance.begin(), r.relevance.end(), [](double x) { return x > 0.0; }));
  if (k == 0) throw DomainError("ndcg: relevance has no positive entry");
  std::vector<std::size_t> by_rank(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    if (r.ranks[a] < 1 || r.ranks[a] > n || by_rank[r.ranks[a] - 1] != n)
      throw DomainError("ndcg: ranks are not a permutation");
    by_rank[r.ranks[a] - 1] = a;
  }
  std::vector<double> ideal = r.relevance;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double discount = std::log2(static_cast<double>(i) + 2.0);
    dcg += r.relevance[by_rank[i]] / discount;
    idcg += ideal[i] / discount;
  }
  return dcg / idcg;
}

inline MetricsReport compute_metrics(std::span<const EvalRecord> records,
                                     const std::vector<std::size_t>& ks = {1, 5, 10}, bool with_ndcg = true) {
  if (records.empty()) throw DomainError("compute_metrics: no records");
  const std::size_t m = records.size();
  std::vector<double> reciprocal(m), rank(m), ndcg;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& r = records[i];
    if (r.rank_of_gt < 1) throw DomainError("compute_metrics: rank must be >= 1");
    const std::size_t n_cand = !r.ranks.empty() ? r.ranks.size() : r.relevance.size();
    if (n_cand != 0 && r.rank_of_gt > n_cand) throw DomainError("compute_metrics: rank exceeds candidate count");
    reciprocal[i] = 1.0 / static_cast<double>(r.rank_of_gt);
    rank[i] = static_cast<double>(r.rank_of_gt);
  }
  MetricsReport rep;
  rep.count = m;
  const double inv_m = 1.0 / static_cast<double>(m);
  rep.mrr = pairwise_sum(reciprocal) * inv_m;
  rep.mean_rank = pairwise_sum(rank) * inv_m;
  for (std::size_t k : ks) {
    std::vector<double> hit(m);
    for (std::size_t i = 0; i < m; ++i) hit[i] = records[i].rank_of_gt <= k ? 1.0 : 0.0;
    rep.recall[k] = pairwise_sum(hit) * inv_m;
  }
  if (with_ndcg) {
    ndcg.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      if (records[i].relevance.empty() || records[i].ranks.empty())
        throw ConfigError("compute_metrics: NDCG requested but a record has no relevance/ranks");
      ndcg[i] = ndcg_of(records[i]);
    }
    rep.ndcg = pairwise_sum(ndcg) * inv_m;
  }
  return rep;
}

}  // namespace dualvd
