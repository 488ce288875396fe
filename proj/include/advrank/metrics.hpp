#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advrank/error.hpp"
#include "advrank/retrieval.hpp"

namespace advrank {

struct QueryResult {
  std::string qid;
  std::vector<std::string> ranking;        // aids by model score desc, ties aid asc
  std::size_t first_relevant_rank = 0;     // 1-based; 0 when absent
  double p1() const { return first_relevant_rank == 1 ? 1.0 : 0.0; }
  double rr() const { return first_relevant_rank ? 1.0 / static_cast<double>(first_relevant_rank) : 0.0; }
};

struct PerQueryMetrics {
  std::string qid;
  double p1;
  double rr;
};

struct MetricsReport {
  double p_at_1 = 0.0;
  double mrr = 0.0;
  std::size_t n_queries = 0;
  std::size_t n_excluded = 0;
  std::vector<PerQueryMetrics> per_query;
};

/// Rank a pool's candidates by an externally supplied scorer. The tie rule
/// (score desc, then aid asc) makes the ranking a total order, so input
/// permutations cannot change it.
inline QueryResult score_pool(const EvalPool& pool,
                              const std::function<double(const PoolEntry&)>& model_score) {
  if (pool.unjudgeable) throw Error("score_pool: pool '" + pool.qid + "' has no relevant candidate");
  struct Scored {
    const PoolEntry* entry;
    double score;
  };
  std::vector<Scored> scored;
  scored.reserve(pool.candidates.size());
  for (const PoolEntry& e : pool.candidates) scored.push_back({&e, model_score(e)});
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.entry->aid < b.entry->aid;
  });
  QueryResult r;
  r.qid = pool.qid;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    r.ranking.push_back(scored[i].entry->aid);
    if (r.first_relevant_rank == 0 && scored[i].entry->relevant) r.first_relevant_rank = i + 1;
  }
  return r;
}

inline double precision_at_1(const std::vector<QueryResult>& results) {
  if (results.empty()) throw DataError("precision_at_1: no query results");
  double s = 0;
  for (const QueryResult& r : results) s += r.p1();
  return s / static_cast<double>(results.size());
}

inline double mrr(const std::vector<QueryResult>& results) {
  if (results.empty()) throw DataError("mrr: no query results");
  double s = 0;
  for (const QueryResult& r : results) s += r.rr();
  return s / static_cast<double>(results.size());
}

inline MetricsReport make_report(const std::vector<QueryResult>& results, std::size_t n_excluded) {
  MetricsReport rep;
  rep.p_at_1 = precision_at_1(results);
  rep.mrr = mrr(results);
  rep.n_queries = results.size();
  rep.n_excluded = n_excluded;
  for (const QueryResult& r : results) rep.per_query.push_back({r.qid, r.p1(), r.rr()});
  return rep;
}

namespace detail {

/// Signed ranks of the nonzero differences: |diff| ascending with average
/// ranks for ties. Returns (ranks, signs).
inline std::pair<std::vector<double>, std::vector<int>> signed_ranks(const std::vector<double>& diffs) {
  std::vector<double> nz;
  for (double d : diffs) {
    if (d != 0.0) nz.push_back(d);
  }
  std::vector<std::size_t> order(nz.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(nz[a]) < std::abs(nz[b]);
  });
  std::vector<double> ranks(nz.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(nz[order[j + 1]]) == std::abs(nz[order[i]])) ++j;
    double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  std::vector<int> signs(nz.size());
  for (std::size_t k = 0; k < nz.size(); ++k) signs[k] = nz[k] > 0 ? 1 : -1;
  return {ranks, signs};
}

}  // namespace detail

/// Two-sided Wilcoxon signed-rank p-value. Zero differences are dropped and
/// tied magnitudes get average ranks. For n <= 12 nonzero differences the
/// null distribution is enumerated exactly over all 2^n sign assignments;
/// beyond that a normal approximation with tie and continuity corrections
/// is used. Fewer than 5 nonzero differences is an error (underpowered).
inline double wilcoxon_signed_rank(const std::vector<double>& diffs) {
  auto [ranks, signs] = detail::signed_ranks(diffs);
  std::size_t n = ranks.size();
  if (n < 5) {
    throw DataError("wilcoxon: need at least 5 nonzero differences, got " + std::to_string(n));
  }
  double w_plus = 0.0, total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += ranks[i];
    if (signs[i] > 0) w_plus += ranks[i];
  }

  if (n <= 12) {
    // Exact: the null assigns each sign independently with probability 1/2;
    // flipping all signs maps W+ to total - W+, so the null is symmetric.
    double w_low = std::min(w_plus, total - w_plus);
    double w_high = total - w_low;
    std::size_t hits = 0;
    std::size_t combos = std::size_t{1} << n;
    for (std::size_t mask = 0; mask < combos; ++mask) {
      double w = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (mask & (std::size_t{1} << i)) w += ranks[i];
      }
      if (w <= w_low + 1e-12) ++hits;
      if (w >= w_high - 1e-12) ++hits;
    }
    return std::min(1.0, static_cast<double>(hits) / static_cast<double>(combos));
  }

  double nd = static_cast<double>(n);
  double mean = nd * (nd + 1.0) / 4.0;
  double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0;
  // Tie correction: subtract sum(t^3 - t)/48 over groups of tied magnitudes.
  std::map<double, std::size_t> groups;
  for (double r : ranks) ++groups[r];
  for (const auto& [rank, count] : groups) {
    double t = static_cast<double>(count);
    var -= (t * t * t - t) / 48.0;
  }
  double sd = std::sqrt(var);
  double delta = w_plus - mean;
  double cc = delta > 0 ? -0.5 : (delta < 0 ? 0.5 : 0.0);  // continuity, toward the mean
  double z = (delta + cc) / sd;
  return std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
}

/// Whole-percent relative change, floored, mirroring the usual table style.
/// Returns false when the baseline is zero (change undefined).
inline bool relative_change_pct(double baseline, double treatment, long long& out_pct) {
  if (baseline == 0.0) return false;
  // The nudge keeps exact-ratio changes (e.g. 0.4 -> 0.3) from flooring one
  // percent low when the division lands a few ulps under the integer.
  out_pct = static_cast<long long>(std::floor((treatment - baseline) / baseline * 100.0 + 1e-9));
  return true;
}

struct ReportLabels {
  std::string source;
  std::string target;
  std::string model;
  std::string variant;
};

/// Baseline/treatment comparison row. Per-metric Wilcoxon over per-query
/// pairs; a comparison too close to test (fewer than 5 nonzero differences)
/// reports a null p-value and no significance claim.
inline nlohmann::ordered_json emit_report(const ReportLabels& labels, const MetricsReport& baseline,
                                          const MetricsReport& treatment) {
  std::map<std::string, const PerQueryMetrics*> base_by_qid;
  for (const PerQueryMetrics& m : baseline.per_query) base_by_qid[m.qid] = &m;
  if (baseline.per_query.size() != treatment.per_query.size()) {
    throw DataError("emit_report: baseline and treatment cover different query sets");
  }
  std::vector<double> d_p1, d_rr;
  for (const PerQueryMetrics& m : treatment.per_query) {
    auto it = base_by_qid.find(m.qid);
    if (it == base_by_qid.end()) {
      throw DataError("emit_report: qid '" + m.qid + "' missing from baseline");
    }
    d_p1.push_back(m.p1 - it->second->p1);
    d_rr.push_back(m.rr - it->second->rr);
  }
  auto p_value_of = [](const std::vector<double>& diffs) -> nlohmann::ordered_json {
    try {
      return wilcoxon_signed_rank(diffs);
    } catch (const DataError&) {
      return nullptr;  // underpowered comparison
    }
  };
  nlohmann::ordered_json p_p1 = p_value_of(d_p1);
  nlohmann::ordered_json p_rr = p_value_of(d_rr);

  nlohmann::ordered_json j;
  j["source"] = labels.source;
  j["target"] = labels.target;
  j["model"] = labels.model;
  j["variant"] = labels.variant;
  j["p1"] = treatment.p_at_1;
  j["mrr"] = treatment.mrr;
  long long pct = 0;
  j["p1_delta_pct"] = relative_change_pct(baseline.p_at_1, treatment.p_at_1, pct)
                          ? nlohmann::ordered_json(pct)
                          : nlohmann::ordered_json(nullptr);
  j["mrr_delta_pct"] = relative_change_pct(baseline.mrr, treatment.mrr, pct)
                           ? nlohmann::ordered_json(pct)
                           : nlohmann::ordered_json(nullptr);
  j["p_value_p1"] = p_p1;
  j["p_value_mrr"] = p_rr;
  bool sig_p1 = p_p1.is_number() && p_p1.get<double>() < 0.05;
  bool sig_mrr = p_rr.is_number() && p_rr.get<double>() < 0.05;
  j["significant"] = sig_p1 || sig_mrr;
  return j;
}

/// Standalone row for a run with nothing to compare against: metrics only,
/// null deltas and p-values.
inline nlohmann::ordered_json report_row(const ReportLabels& labels, const MetricsReport& rep) {
  nlohmann::ordered_json j;
  j["source"] = labels.source;
  j["target"] = labels.target;
  j["model"] = labels.model;
  j["variant"] = labels.variant;
  j["p1"] = rep.p_at_1;
  j["mrr"] = rep.mrr;
  j["p1_delta_pct"] = nullptr;
  j["mrr_delta_pct"] = nullptr;
  j["p_value_p1"] = nullptr;
  j["p_value_mrr"] = nullptr;
  j["significant"] = false;
  return j;
}

inline nlohmann::ordered_json metrics_report_to_json(const MetricsReport& rep) {
  nlohmann::ordered_json j;
  j["p1"] = rep.p_at_1;
  j["mrr"] = rep.mrr;
  j["n_queries"] = rep.n_queries;
  j["n_excluded"] = rep.n_excluded;
  nlohmann::ordered_json pq = nlohmann::ordered_json::array();
  for (const PerQueryMetrics& m : rep.per_query) {
    pq.push_back({{"qid", m.qid}, {"p1", m.p1}, {"rr", m.rr}});
  }
  j["per_query"] = pq;
  return j;
}

inline MetricsReport metrics_report_from_json(const nlohmann::json& j) {
  MetricsReport rep;
  try {
    rep.p_at_1 = j.at("p1").get<double>();
    rep.mrr = j.at("mrr").get<double>();
    rep.n_queries = j.at("n_queries").get<std::size_t>();
    rep.n_excluded = j.at("n_excluded").get<std::size_t>();
    for (const auto& m : j.at("per_query")) {
      rep.per_query.push_back(
          {m.at("qid").get<std::string>(), m.at("p1").get<double>(), m.at("rr").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("metrics report: bad or missing field: ") + e.what());
  }
  return rep;
}

namespace detail {

inline std::string fmt4(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << v;
  return os.str();
}

inline std::string delta_cell(const nlohmann::ordered_json& pct, const nlohmann::ordered_json& p) {
  if (pct.is_null()) return "—";
  long long v = pct.get<long long>();
  std::string s = (v >= 0 ? "+" : "") + std::to_string(v) + "%";
  if (p.is_number() && p.get<double>() < 0.05) s += "†";
  return s;
}

}  // namespace detail

/// Aligned text rendering of comparison rows; a dagger marks Wilcoxon
/// p < 0.05 for that metric.
inline std::string render_report_table(const std::vector<nlohmann::ordered_json>& rows) {
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"source", "target", "model", "variant", "P@1", "MRR"});
  for (const auto& r : rows) {
    std::string p1 = detail::fmt4(r.at("p1").get<double>()) + " (" +
                     detail::delta_cell(r.at("p1_delta_pct"), r.at("p_value_p1")) + ")";
    std::string mrr_s = detail::fmt4(r.at("mrr").get<double>()) + " (" +
                        detail::delta_cell(r.at("mrr_delta_pct"), r.at("p_value_mrr")) + ")";
    cells.push_back({r.at("source").get<std::string>(), r.at("target").get<std::string>(),
                     r.at("model").get<std::string>(), r.at("variant").get<std::string>(), p1, mrr_s});
  }
  std::vector<std::size_t> width(cells[0].size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out += row[c];
      if (c + 1 < row.size()) out += std::string(width[c] - row[c].size() + 2, ' ');
    }
    out += '\n';
  }
  return out;
}

}  // namespace advrank
