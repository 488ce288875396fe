#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "advrank/metrics.hpp"
#include "advrank/rng.hpp"

using namespace advrank;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

// ---------------------------------------------------------------------------
// P@1 / MRR against a brute-force recount
// ---------------------------------------------------------------------------

namespace {

struct RandomPool {
  EvalPool pool;
  std::map<std::string, double> model_scores;
};

/// A judgeable pool with grid-valued scores (ties are frequent on purpose).
RandomPool random_pool(Rng& rng, std::size_t qi) {
  RandomPool rp;
  rp.pool.qid = "q" + std::to_string(qi);
  std::size_t n = 3 + rng.uniform_index(8);
  std::size_t rel_at = rng.uniform_index(n);
  for (std::size_t i = 0; i < n; ++i) {
    PoolEntry e;
    e.aid = "a" + std::to_string(qi) + "_" + std::to_string(i);
    e.score = 0.0;  // retrieval score, unused by the model scorer
    e.relevant = i == rel_at || rng.uniform_index(10) == 0;
    rp.pool.candidates.push_back(e);
    rp.model_scores[e.aid] = 0.5 * static_cast<double>(rng.uniform_index(5));
  }
  return rp;
}

/// Independent recount: re-sorts on (score desc, aid asc) with its own
/// comparator and scans for the first relevant candidate.
std::size_t brute_first_relevant(const RandomPool& rp) {
  std::vector<std::pair<std::string, bool>> rows;
  for (const PoolEntry& e : rp.pool.candidates) rows.emplace_back(e.aid, e.relevant);
  std::sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
    double sa = rp.model_scores.at(a.first), sb = rp.model_scores.at(b.first);
    if (sa != sb) return sa > sb;
    return a.first < b.first;
  });
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].second) return i + 1;
  }
  return 0;
}

}  // namespace

TEST_CASE("p@1 and mrr match a brute-force recount on random pools") {
  Rng rng(2024);
  std::vector<QueryResult> results;
  double sum_p1 = 0.0, sum_rr = 0.0;
  for (std::size_t qi = 0; qi < 100; ++qi) {
    RandomPool rp = random_pool(rng, qi);
    QueryResult r = score_pool(rp.pool, [&](const PoolEntry& e) { return rp.model_scores.at(e.aid); });

    std::size_t want = brute_first_relevant(rp);
    CHECK(r.first_relevant_rank == want);
    sum_p1 += want == 1 ? 1.0 : 0.0;
    sum_rr += want ? 1.0 / static_cast<double>(want) : 0.0;
    results.push_back(std::move(r));
  }
  CHECK(precision_at_1(results) == sum_p1 / 100.0);
  CHECK(mrr(results) == sum_rr / 100.0);
  CHECK(mrr(results) >= precision_at_1(results));

  MetricsReport rep = make_report(results, 7);
  CHECK(rep.p_at_1 == precision_at_1(results));
  CHECK(rep.mrr == mrr(results));
  CHECK(rep.n_queries == 100);
  CHECK(rep.n_excluded == 7);
  CHECK(rep.per_query.size() == 100);
}

TEST_CASE("rankings are invariant to candidate input order") {
  Rng rng(99);
  for (std::size_t qi = 0; qi < 20; ++qi) {
    RandomPool rp = random_pool(rng, qi);
    auto scorer = [&](const PoolEntry& e) { return rp.model_scores.at(e.aid); };
    QueryResult fwd = score_pool(rp.pool, scorer);

    EvalPool reversed = rp.pool;
    std::reverse(reversed.candidates.begin(), reversed.candidates.end());
    QueryResult rev = score_pool(reversed, scorer);
    CHECK(fwd.ranking == rev.ranking);
    CHECK(fwd.first_relevant_rank == rev.first_relevant_rank);
  }
}

TEST_CASE("scoring rejects unjudgeable pools and empty result sets") {
  EvalPool pool;
  pool.qid = "q";
  pool.unjudgeable = true;
  CHECK_THROWS_AS(score_pool(pool, [](const PoolEntry&) { return 0.0; }), Error);
  CHECK_THROWS_AS(precision_at_1({}), DataError);
  CHECK_THROWS_AS(mrr({}), DataError);
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank
// ---------------------------------------------------------------------------

namespace {

/// Independent exact two-sided Wilcoxon in integer arithmetic: doubled ranks
/// stay integral even with average-rank ties, so no tolerance is needed.
double wilcoxon_oracle(const std::vector<double>& diffs) {
  std::vector<double> nz;
  for (double d : diffs) {
    if (d != 0.0) nz.push_back(d);
  }
  std::size_t n = nz.size();
  std::vector<double> mags;
  for (double d : nz) mags.push_back(std::abs(d));
  std::vector<long long> rank2(n);  // 2 * rank
  for (std::size_t i = 0; i < n; ++i) {
    long long below = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mags[j] < mags[i]) ++below;
      if (mags[j] == mags[i]) ++equal;
    }
    // Average of ranks (below+1 .. below+equal), doubled.
    rank2[i] = 2 * below + equal + 1;
  }
  long long w_plus2 = 0, total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (nz[i] > 0) w_plus2 += rank2[i];
  }
  long long lo = std::min(w_plus2, total2 - w_plus2);
  long long hi = total2 - lo;
  std::size_t hits = 0;
  std::size_t combos = std::size_t{1} << n;
  for (std::size_t mask = 0; mask < combos; ++mask) {
    long long w = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (std::size_t{1} << i)) w += rank2[i];
    }
    if (w <= lo) ++hits;
    if (w >= hi) ++hits;
  }
  return std::min(1.0, static_cast<double>(hits) / static_cast<double>(combos));
}

}  // namespace

TEST_CASE("wilcoxon exact path: five one-sided differences give 2/32") {
  std::vector<double> diffs = {0.1, 0.2, 0.3, 0.4, 0.5};
  CHECK_THAT(wilcoxon_signed_rank(diffs), WithinAbs(0.0625, 1e-15));
  // Zero differences are dropped, not ranked.
  std::vector<double> padded = {0.0, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  CHECK_THAT(wilcoxon_signed_rank(padded), WithinAbs(0.0625, 1e-15));
}

TEST_CASE("wilcoxon exact path: perfectly balanced differences give 1") {
  CHECK(wilcoxon_signed_rank({0.1, -0.1, 0.2, -0.2, 0.3, -0.3}) == 1.0);
}

TEST_CASE("wilcoxon refuses underpowered comparisons") {
  CHECK_THROWS_AS(wilcoxon_signed_rank({0.1, 0.2, 0.3, 0.4}), DataError);
  CHECK_THROWS_AS(wilcoxon_signed_rank({0.0, 0.0, 0.0, 0.1, 0.2, 0.3, 0.4}), DataError);
  CHECK_THROWS_WITH(wilcoxon_signed_rank({}), ContainsSubstring("5"));
}

TEST_CASE("wilcoxon exact path matches full sign enumeration up to n = 12") {
  Rng rng(77);
  // Magnitudes from a small grid force frequent ties; signs are random.
  for (std::size_t n = 5; n <= 12; ++n) {
    for (int rep = 0; rep < 6; ++rep) {
      std::vector<double> diffs;
      for (std::size_t i = 0; i < n; ++i) {
        double mag = 0.1 * static_cast<double>(1 + rng.uniform_index(4));
        diffs.push_back(rng.uniform_index(2) ? mag : -mag);
      }
      double got = wilcoxon_signed_rank(diffs);
      double want = wilcoxon_oracle(diffs);
      CHECK_THAT(got, WithinAbs(want, 1e-12));
    }
  }
}

TEST_CASE("wilcoxon normal path behaves sanely beyond the exact cutoff") {
  // 20 one-sided differences: decisively significant.
  std::vector<double> one_sided;
  for (int i = 1; i <= 20; ++i) one_sided.push_back(0.01 * i);
  double p_small = wilcoxon_signed_rank(one_sided);
  CHECK(p_small > 0.0);
  CHECK(p_small < 0.01);

  // Balanced differences: far from significant.
  std::vector<double> balanced;
  for (int i = 1; i <= 10; ++i) {
    balanced.push_back(0.01 * i);
    balanced.push_back(-0.01 * i);
  }
  double p_big = wilcoxon_signed_rank(balanced);
  CHECK(p_big > 0.5);
  CHECK(p_big <= 1.0);

  // Heavy ties must not break the variance (tie correction keeps it positive).
  std::vector<double> tied;
  for (int i = 0; i < 16; ++i) tied.push_back(i % 2 ? 0.1 : -0.1);
  tied.push_back(0.2);
  double p_tied = wilcoxon_signed_rank(tied);
  CHECK(std::isfinite(p_tied));
  CHECK(p_tied > 0.0);
  CHECK(p_tied <= 1.0);
}

TEST_CASE("exact and normal paths agree loosely near the cutoff") {
  // The normal approximation at n = 13 should land near the exact answer
  // for a moderately one-sided sample; this pins the glue, not precision.
  std::vector<double> diffs;
  for (int i = 1; i <= 13; ++i) diffs.push_back(i <= 10 ? 0.01 * i : -0.01 * i);
  double p_normal = wilcoxon_signed_rank(diffs);
  double p_exact = wilcoxon_oracle(diffs);
  CHECK(std::abs(p_normal - p_exact) < 0.02);
}

// ---------------------------------------------------------------------------
// Relative change and report rows
// ---------------------------------------------------------------------------

TEST_CASE("relative change floors to whole percents") {
  long long pct = 0;
  REQUIRE(relative_change_pct(0.3282, 0.4041, pct));
  CHECK(pct == 23);
  REQUIRE(relative_change_pct(0.4, 0.3, pct));
  CHECK(pct == -25);
  REQUIRE(relative_change_pct(0.3282, 0.3, pct));
  CHECK(pct == -9);  // floor, not truncation, on negative changes
  REQUIRE(relative_change_pct(0.5, 0.5, pct));
  CHECK(pct == 0);
  CHECK_FALSE(relative_change_pct(0.0, 0.4, pct));
}

namespace {

MetricsReport report_from_ranks(const std::vector<std::size_t>& first_rel_ranks) {
  std::vector<QueryResult> results;
  for (std::size_t i = 0; i < first_rel_ranks.size(); ++i) {
    QueryResult r;
    r.qid = "q" + std::to_string(i);
    r.first_relevant_rank = first_rel_ranks[i];
    results.push_back(std::move(r));
  }
  return make_report(results, 0);
}

}  // namespace

TEST_CASE("comparison rows carry deltas, p-values, and the significance flag") {
  // Baseline ranks the relevant answer second everywhere; the treatment
  // lifts it to first for six of eight queries.
  MetricsReport base = report_from_ranks({2, 2, 2, 2, 2, 2, 2, 2});
  MetricsReport treat = report_from_ranks({1, 1, 1, 1, 1, 1, 2, 2});

  ReportLabels labels{"apps+cooking", "travel", "cossim", "adv"};
  nlohmann::ordered_json row = emit_report(labels, base, treat);

  CHECK(row["source"] == "apps+cooking");
  CHECK(row["target"] == "travel");
  CHECK(row["model"] == "cossim");
  CHECK(row["variant"] == "adv");
  CHECK(row["p1"] == 0.75);
  CHECK_THAT(row["mrr"].get<double>(), WithinAbs(0.875, 1e-15));
  CHECK(row["p1_delta_pct"].is_null());  // baseline P@1 is zero: undefined change
  CHECK(row["mrr_delta_pct"] == 75);
  CHECK_THAT(row["p_value_p1"].get<double>(), WithinAbs(0.03125, 1e-15));
  CHECK_THAT(row["p_value_mrr"].get<double>(), WithinAbs(0.03125, 1e-15));
  CHECK(row["significant"] == true);

  // Order of fields is part of the report contract.
  std::vector<std::string> keys;
  for (auto it = row.begin(); it != row.end(); ++it) keys.push_back(it.key());
  CHECK(keys == std::vector<std::string>{"source", "target", "model", "variant", "p1", "mrr",
                                         "p1_delta_pct", "mrr_delta_pct", "p_value_p1",
                                         "p_value_mrr", "significant"});
}

TEST_CASE("identical runs compare to zero delta and no significance") {
  MetricsReport rep = report_from_ranks({1, 2, 1, 3, 1, 2, 1, 4});
  nlohmann::ordered_json row = emit_report({"s", "t", "m", "base"}, rep, rep);
  CHECK(row["p1_delta_pct"] == 0);
  CHECK(row["mrr_delta_pct"] == 0);
  CHECK(row["p_value_p1"].is_null());  // all differences zero: untestable
  CHECK(row["p_value_mrr"].is_null());
  CHECK(row["significant"] == false);
}

TEST_CASE("significance follows either metric") {
  // P@1 never changes (no query crosses rank 1) but MRR improves on six
  // queries: the row is significant through MRR alone.
  MetricsReport base = report_from_ranks({3, 3, 3, 3, 3, 3, 1, 1});
  MetricsReport treat = report_from_ranks({2, 2, 2, 2, 2, 2, 1, 1});
  nlohmann::ordered_json row = emit_report({"s", "t", "m", "adv"}, base, treat);
  CHECK(row["p_value_p1"].is_null());
  CHECK_THAT(row["p_value_mrr"].get<double>(), WithinAbs(0.03125, 1e-15));
  CHECK(row["significant"] == true);
}

TEST_CASE("comparisons demand matching query sets") {
  MetricsReport base = report_from_ranks({1, 2, 1, 2, 1});
  MetricsReport short_rep = report_from_ranks({1, 2, 1, 2});
  CHECK_THROWS_AS(emit_report({}, base, short_rep), DataError);

  MetricsReport renamed = base;
  renamed.per_query[0].qid = "other";
  CHECK_THROWS_AS(emit_report({}, base, renamed), DataError);
}

TEST_CASE("standalone rows carry null comparisons") {
  MetricsReport rep = report_from_ranks({1, 2, 1});
  nlohmann::ordered_json row = report_row({"s", "t", "m", "base"}, rep);
  CHECK(row["p1"] == rep.p_at_1);
  CHECK(row["mrr"] == rep.mrr);
  CHECK(row["p1_delta_pct"].is_null());
  CHECK(row["mrr_delta_pct"].is_null());
  CHECK(row["p_value_p1"].is_null());
  CHECK(row["p_value_mrr"].is_null());
  CHECK(row["significant"] == false);
}

TEST_CASE("metrics reports round-trip through json exactly") {
  MetricsReport rep = report_from_ranks({1, 3, 2, 7, 1, 4});
  rep.n_excluded = 5;
  MetricsReport back = metrics_report_from_json(metrics_report_to_json(rep));
  CHECK(back.p_at_1 == rep.p_at_1);
  CHECK(back.mrr == rep.mrr);
  CHECK(back.n_queries == rep.n_queries);
  CHECK(back.n_excluded == rep.n_excluded);
  REQUIRE(back.per_query.size() == rep.per_query.size());
  for (std::size_t i = 0; i < rep.per_query.size(); ++i) {
    CHECK(back.per_query[i].qid == rep.per_query[i].qid);
    CHECK(back.per_query[i].p1 == rep.per_query[i].p1);
    CHECK(back.per_query[i].rr == rep.per_query[i].rr);
  }

  nlohmann::json bad = metrics_report_to_json(rep);
  bad.erase("mrr");
  CHECK_THROWS_AS(metrics_report_from_json(bad), DataError);
}

TEST_CASE("rendered tables mark significant deltas with a dagger") {
  MetricsReport base = report_from_ranks({2, 2, 2, 2, 2, 2, 2, 2});
  MetricsReport treat = report_from_ranks({1, 1, 1, 1, 1, 1, 2, 2});
  std::vector<nlohmann::ordered_json> rows = {
      report_row({"src", "tgt", "cossim", "base"}, base),
      emit_report({"src", "tgt", "cossim", "adv"}, base, treat),
  };
  std::string table = render_report_table(rows);
  CHECK_THAT(table, ContainsSubstring("source"));
  CHECK_THAT(table, ContainsSubstring("variant"));
  CHECK_THAT(table, ContainsSubstring("—"));        // null delta on the base row
  CHECK_THAT(table, ContainsSubstring("+75%†"));    // significant MRR lift
  CHECK_THAT(table, ContainsSubstring("0.8750"));
}
