#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "advrank/data.hpp"
#include "advrank/error.hpp"
#include "advrank/vocab.hpp"

namespace advrank {

/// Bag-of-words index over one answer collection. Documents are keyed by
/// aid; rows sharing an aid must carry identical answer text.
struct CorpusStats {
  std::size_t doc_count = 0;
  double avg_doc_len = 0.0;
  std::map<std::string, std::size_t> doc_freq;                         // term -> docs containing it
  std::map<std::string, std::size_t> doc_len;                          // aid -> token count
  std::map<std::string, std::map<std::string, std::size_t>> term_tf;   // aid -> term -> frequency
};

inline CorpusStats build_corpus_stats(const std::vector<Example>& examples) {
  CorpusStats s;
  std::map<std::string, const Example*> by_aid;
  for (const Example& e : examples) {
    auto [it, inserted] = by_aid.emplace(e.aid, &e);
    if (!inserted && it->second->answer != e.answer) {
      throw DataError("corpus stats: aid '" + e.aid + "' maps to two different answer texts");
    }
  }
  std::size_t total_len = 0;
  for (const auto& [aid, e] : by_aid) {
    std::vector<std::string> toks = tokenize(e->answer);
    s.doc_len[aid] = toks.size();
    total_len += toks.size();
    std::map<std::string, std::size_t>& tf = s.term_tf[aid];
    for (const std::string& t : toks) ++tf[t];
    for (const auto& [term, cnt] : tf) ++s.doc_freq[term];
  }
  s.doc_count = by_aid.size();
  s.avg_doc_len = s.doc_count ? static_cast<double>(total_len) / static_cast<double>(s.doc_count) : 0.0;
  return s;
}

/// Okapi BM25 over unique query terms. The idf keeps every term's
/// contribution non-negative: ln((N - df + 1)/(df + 0.5) + 1).
inline double bm25_score(const std::vector<std::string>& query_tokens, const std::string& aid,
                         const CorpusStats& stats, double k1 = 1.2, double b = 0.75) {
  auto len_it = stats.doc_len.find(aid);
  if (len_it == stats.doc_len.end()) throw DataError("bm25: unknown aid '" + aid + "'");
  const std::map<std::string, std::size_t>& tf_map = stats.term_tf.at(aid);
  double dl = static_cast<double>(len_it->second);
  double n = static_cast<double>(stats.doc_count);
  std::set<std::string> terms(query_tokens.begin(), query_tokens.end());
  double score = 0.0;
  for (const std::string& term : terms) {
    auto tf_it = tf_map.find(term);
    if (tf_it == tf_map.end()) continue;  // absent terms contribute nothing
    double tf = static_cast<double>(tf_it->second);
    double df = static_cast<double>(stats.doc_freq.at(term));
    double idf = std::log((n - df + 1.0) / (df + 0.5) + 1.0);
    double norm = k1 * (1.0 - b + b * dl / stats.avg_doc_len);
    score += idf * tf * (k1 + 1.0) / (tf + norm);
  }
  return score;
}

struct PoolEntry {
  std::string aid;
  double score;
  bool relevant;
};

struct EvalPool {
  std::string qid;
  std::string query;
  std::vector<PoolEntry> candidates;  // sorted score desc, aid asc
  bool unjudgeable = false;           // no relevant candidate reachable
  std::size_t pool_size = 0;
};

struct PoolSet {
  std::vector<EvalPool> pools;       // every query, unjudgeable ones flagged
  std::size_t n_excluded = 0;        // flagged pools, excluded from aggregation
};

/// Telescoped evaluation pools: per query, the top-k answers of its own
/// collection by BM25. Labels come from the query's judgments; unjudged
/// candidates count as non-relevant. Pools without any relevant candidate
/// are excluded and counted.
inline PoolSet build_pools(const std::vector<Example>& examples, std::size_t k, double k1 = 1.2,
                           double b = 0.75) {
  if (k == 0) throw ConfigError("build_pools: k must be >= 1");
  PoolSet out;

  std::map<std::string, std::vector<const Example*>> by_collection;
  for (const Example& e : examples) by_collection[e.collection].push_back(&e);

  for (const auto& [collection, rows] : by_collection) {
    std::vector<Example> coll_rows;
    coll_rows.reserve(rows.size());
    for (const Example* e : rows) coll_rows.push_back(*e);
    CorpusStats stats = build_corpus_stats(coll_rows);

    struct QueryInfo {
      std::string text;
      std::map<std::string, bool> judged;  // aid -> label
    };
    std::map<std::string, QueryInfo> queries;
    for (const Example* e : rows) {
      QueryInfo& qi = queries[e->qid];
      qi.text = e->query;
      qi.judged[e->aid] = e->relevant;
    }

    for (const auto& [qid, qi] : queries) {
      std::vector<std::string> qtoks = tokenize(qi.text);
      EvalPool pool;
      pool.qid = qid;
      pool.query = qi.text;
      pool.pool_size = k;
      for (const auto& [aid, len] : stats.doc_len) {
        PoolEntry entry;
        entry.aid = aid;
        entry.score = bm25_score(qtoks, aid, stats, k1, b);
        auto it = qi.judged.find(aid);
        entry.relevant = it != qi.judged.end() && it->second;
        pool.candidates.push_back(std::move(entry));
      }
      std::sort(pool.candidates.begin(), pool.candidates.end(), [](const PoolEntry& a, const PoolEntry& b2) {
        if (a.score != b2.score) return a.score > b2.score;
        return a.aid < b2.aid;
      });
      if (pool.candidates.size() > k) pool.candidates.resize(k);
      pool.unjudgeable = std::none_of(pool.candidates.begin(), pool.candidates.end(),
                                      [](const PoolEntry& p) { return p.relevant; });
      if (pool.unjudgeable) ++out.n_excluded;
      out.pools.push_back(std::move(pool));
    }
  }
  return out;
}

}  // namespace advrank
