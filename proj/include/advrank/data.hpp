#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "advrank/error.hpp"
#include "advrank/losses.hpp"
#include "advrank/rng.hpp"
#include "advrank/vocab.hpp"

namespace advrank {

struct Example {
  std::string query;
  std::string answer;
  bool relevant = false;
  std::string domain;
  std::string collection;
  std::string qid;
  std::string aid;
};

inline nlohmann::ordered_json example_to_json(const Example& e) {
  nlohmann::ordered_json j;
  j["query"] = e.query;
  j["answer"] = e.answer;
  j["label"] = e.relevant ? "relevant" : "nonrelevant";
  j["domain"] = e.domain;
  j["collection"] = e.collection;
  j["qid"] = e.qid;
  j["aid"] = e.aid;
  return j;
}

/// One Example per line. Strict: every field required, unknown keys
/// rejected, (qid, aid) unique within a collection; errors cite the line.
inline std::vector<Example> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  static const std::set<std::string> kFields = {"query", "answer", "label", "domain",
                                                "collection", "qid", "aid"};
  std::vector<Example> out;
  std::set<std::pair<std::string, std::string>> seen;  // (collection, qid:aid)
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw DataError(where + ": line is not a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (!kFields.count(key)) throw DataError(where + ": unknown field '" + key + "'");
    }
    Example e;
    auto field = [&](const char* name) -> std::string {
      if (!j.contains(name)) throw DataError(where + ": missing field '" + std::string(name) + "'");
      if (!j[name].is_string()) throw DataError(where + ": field '" + std::string(name) + "' must be a string");
      return j[name].get<std::string>();
    };
    e.query = field("query");
    e.answer = field("answer");
    std::string label = field("label");
    if (label == "relevant") {
      e.relevant = true;
    } else if (label == "nonrelevant") {
      e.relevant = false;
    } else {
      throw DataError(where + ": label must be 'relevant' or 'nonrelevant', got '" + label + "'");
    }
    e.domain = field("domain");
    e.collection = field("collection");
    e.qid = field("qid");
    e.aid = field("aid");
    if (e.qid.empty() || e.aid.empty()) throw DataError(where + ": qid and aid must be non-empty");
    if (!seen.emplace(e.collection, e.qid + "\x1f" + e.aid).second) {
      throw DataError(where + ": duplicate (qid, aid) pair '" + e.qid + "', '" + e.aid +
                      "' in collection '" + e.collection + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline void save_jsonl(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file: " + path);
  for (const Example& e : examples) out << example_to_json(e).dump() << '\n';
}

struct DatasetSplits {
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;
};

/// Split by qid (never by row) with seeded-hash ordering; proportions are
/// 80/10/10 of distinct qids within rounding.
inline DatasetSplits split_80_10_10(const std::vector<Example>& examples, std::uint64_t seed) {
  std::set<std::string> qid_set;
  for (const Example& e : examples) qid_set.insert(e.qid);
  if (qid_set.size() < 10) {
    throw DataError("split: need at least 10 distinct qids, got " + std::to_string(qid_set.size()));
  }
  std::vector<std::string> qids(qid_set.begin(), qid_set.end());
  std::sort(qids.begin(), qids.end(), [seed](const std::string& a, const std::string& b) {
    std::uint64_t ha = mix_seed(seed, a), hb = mix_seed(seed, b);
    if (ha != hb) return ha < hb;
    return a < b;
  });
  std::size_t n = qids.size();
  auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  auto n_dev = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  std::map<std::string, int> bucket;
  for (std::size_t i = 0; i < n; ++i) bucket[qids[i]] = i < n_train ? 0 : (i < n_train + n_dev ? 1 : 2);
  DatasetSplits s;
  for (const Example& e : examples) {
    switch (bucket[e.qid]) {
      case 0: s.train.push_back(e); break;
      case 1: s.dev.push_back(e); break;
      default: s.test.push_back(e); break;
    }
  }
  return s;
}

struct RegimeSpec {
  enum class Kind { kCrossTopic, kCrossCollection };
  Kind kind = Kind::kCrossTopic;
  std::vector<std::string> train_domains;  // kept sorted and unique
  std::string target_domain;
  bool equal_sampling = true;
  bool feed_target_to_disc = false;

  void validate() const {
    if (train_domains.empty()) throw ConfigError("regime: train_domains must be non-empty");
    for (std::size_t i = 1; i < train_domains.size(); ++i) {
      if (train_domains[i - 1] >= train_domains[i]) {
        throw ConfigError("regime: train_domains must be sorted and unique");
      }
    }
    for (const std::string& d : train_domains) {
      if (d == target_domain) throw ConfigError("regime: target domain '" + d + "' cannot be trained on");
    }
  }

  /// The grouping key the regime holds out: topic labels for cross_topic,
  /// collection names for cross_collection.
  const std::string& domain_of(const Example& e) const {
    return kind == Kind::kCrossTopic ? e.domain : e.collection;
  }

  bool is_train_domain(const std::string& d) const {
    return std::binary_search(train_domains.begin(), train_domains.end(), d);
  }

  /// Train domains map to their sorted position; the target maps to the
  /// extra trailing class used when it is fed to the discriminator.
  std::size_t domain_index(const std::string& d) const {
    auto it = std::lower_bound(train_domains.begin(), train_domains.end(), d);
    if (it != train_domains.end() && *it == d) {
      return static_cast<std::size_t>(it - train_domains.begin());
    }
    if (d == target_domain && feed_target_to_disc) return train_domains.size();
    throw DataError("regime: domain '" + d + "' is not in this run's domain set");
  }

  std::size_t num_domains() const { return train_domains.size() + (feed_target_to_disc ? 1 : 0); }
};

inline const char* regime_kind_name(RegimeSpec::Kind k) {
  return k == RegimeSpec::Kind::kCrossTopic ? "cross_topic" : "cross_collection";
}

inline RegimeSpec::Kind regime_kind_from(const std::string& s) {
  if (s == "cross_topic") return RegimeSpec::Kind::kCrossTopic;
  if (s == "cross_collection") return RegimeSpec::Kind::kCrossCollection;
  throw ConfigError("unknown regime kind '" + s + "' (expected cross_topic or cross_collection)");
}

struct SampleStats {
  std::size_t rel_triples = 0;
  std::size_t disc_only_triples = 0;
  std::size_t skipped_queries = 0;  // no non-relevant candidate anywhere in the domain
};

/// One epoch's triples. Every relevant pair in the training split yields a
/// triple with a non-relevant document from the same query (falling back to
/// a random same-domain answer). With equal sampling each train domain
/// contributes the same count; with target feeding, discriminator-only
/// triples from the target's allowed examples are interleaved at a
/// 1 : |train domains| ratio. Target qids in `forbidden_qids` are excluded.
inline std::vector<TrainingTriple> sample_triples(const std::vector<Example>& train_split,
                                                  const std::vector<Example>& target_feed,
                                                  const RegimeSpec& regime, const Vocabulary& vocab,
                                                  std::uint64_t seed,
                                                  const std::set<std::string>& forbidden_qids = {},
                                                  SampleStats* stats_out = nullptr) {
  regime.validate();
  Rng rng(seed);
  SampleStats stats;

  struct QueryGroup {
    std::string qid;
    std::string query_text;
    std::vector<const Example*> rel;
    std::vector<const Example*> nonrel;
  };
  // Domain -> qid -> group; std::map keeps iteration deterministic.
  std::map<std::string, std::map<std::string, QueryGroup>> by_domain;
  for (const Example& e : train_split) {
    const std::string& d = regime.domain_of(e);
    if (!regime.is_train_domain(d)) continue;
    QueryGroup& gq = by_domain[d][e.qid];
    gq.qid = e.qid;
    gq.query_text = e.query;
    (e.relevant ? gq.rel : gq.nonrel).push_back(&e);
  }

  std::map<std::string, std::vector<TrainingTriple>> triples_by_domain;
  for (auto& [domain, groups] : by_domain) {
    std::vector<const Example*> domain_answers;
    for (const auto& [qid, gq] : groups) {
      for (const Example* e : gq.rel) domain_answers.push_back(e);
      for (const Example* e : gq.nonrel) domain_answers.push_back(e);
    }
    std::size_t domain_idx = regime.domain_index(domain);
    for (const auto& [qid, gq] : groups) {
      for (const Example* rel : gq.rel) {
        const Example* neg = nullptr;
        if (!gq.nonrel.empty()) {
          neg = gq.nonrel[rng.uniform_index(gq.nonrel.size())];
        } else {
          // Fallback pool: any other answer from the same domain.
          std::vector<const Example*> pool;
          for (const Example* a : domain_answers) {
            if (a->aid != rel->aid || a->qid != rel->qid) pool.push_back(a);
          }
          if (pool.empty()) {
            ++stats.skipped_queries;
            continue;
          }
          neg = pool[rng.uniform_index(pool.size())];
        }
        TrainingTriple t;
        t.query = vocab.encode(gq.query_text);
        t.doc_rel = vocab.encode(rel->answer);
        t.doc_nonrel = vocab.encode(neg->answer);
        t.domain = domain_idx;
        t.discriminator_only = false;
        t.qid = gq.qid;
        triples_by_domain[domain].push_back(std::move(t));
      }
    }
  }

  std::size_t take = 0;
  if (regime.equal_sampling && !triples_by_domain.empty()) {
    take = SIZE_MAX;
    for (const auto& [d, v] : triples_by_domain) take = std::min(take, v.size());
  }
  std::vector<TrainingTriple> rel_triples;
  for (auto& [d, v] : triples_by_domain) {
    rng.shuffle(v);
    std::size_t n = regime.equal_sampling ? take : v.size();
    for (std::size_t i = 0; i < n; ++i) rel_triples.push_back(std::move(v[i]));
  }
  rng.shuffle(rel_triples);
  stats.rel_triples = rel_triples.size();

  std::vector<TrainingTriple> out;
  if (regime.feed_target_to_disc) {
    // Build target-side pairs the same way, keyed to the extra domain class.
    std::map<std::string, QueryGroup> tgroups;
    for (const Example& e : target_feed) {
      if (regime.domain_of(e) != regime.target_domain) continue;
      if (forbidden_qids.count(e.qid)) continue;
      QueryGroup& gq = tgroups[e.qid];
      gq.qid = e.qid;
      gq.query_text = e.query;
      (e.relevant ? gq.rel : gq.nonrel).push_back(&e);
    }
    std::vector<TrainingTriple> candidates;
    for (const auto& [qid, gq] : tgroups) {
      if (gq.rel.empty() || gq.nonrel.empty()) continue;
      for (const Example* rel : gq.rel) {
        TrainingTriple t;
        t.query = vocab.encode(gq.query_text);
        t.doc_rel = vocab.encode(rel->answer);
        t.doc_nonrel = vocab.encode(gq.nonrel[rng.uniform_index(gq.nonrel.size())]->answer);
        t.domain = regime.train_domains.size();
        t.discriminator_only = true;
        t.qid = gq.qid;
        candidates.push_back(std::move(t));
      }
    }
    std::size_t stride = regime.train_domains.size();
    std::size_t want = rel_triples.size() / stride;
    if (!candidates.empty() && want > 0) {
      std::size_t ci = 0;
      rng.shuffle(candidates);
      std::size_t placed = 0;
      for (std::size_t i = 0; i < rel_triples.size(); ++i) {
        out.push_back(std::move(rel_triples[i]));
        if ((i + 1) % stride == 0 && placed < want) {
          out.push_back(candidates[ci % candidates.size()]);
          ++ci;
          ++placed;
        }
      }
      stats.disc_only_triples = placed;
    } else {
      out = std::move(rel_triples);
    }
  } else {
    out = std::move(rel_triples);
  }

  if (stats_out) *stats_out = stats;
  return out;
}

/// Non-overlapping windows of random length in [min_len, max_len] over the
/// non-annotated segments of a document; annotated spans (token index
/// ranges, half-open) are never crossed.
inline std::vector<std::string> sliding_window_negatives(
    const std::vector<std::string>& tokens,
    const std::vector<std::pair<std::size_t, std::size_t>>& relevant_spans, std::size_t min_len,
    std::size_t max_len, std::uint64_t seed) {
  if (min_len == 0 || min_len > max_len) throw ConfigError("sliding windows: need 0 < min_len <= max_len");
  if (tokens.size() <= min_len) return {};
  std::vector<std::pair<std::size_t, std::size_t>> spans = relevant_spans;
  std::sort(spans.begin(), spans.end());
  // Carve the token stream into maximal non-annotated segments.
  std::vector<std::pair<std::size_t, std::size_t>> segments;
  std::size_t pos = 0;
  for (const auto& [lo, hi] : spans) {
    if (lo > pos) segments.emplace_back(pos, std::min(lo, tokens.size()));
    pos = std::max(pos, hi);
  }
  if (pos < tokens.size()) segments.emplace_back(pos, tokens.size());

  Rng rng(seed);
  std::vector<std::string> windows;
  for (const auto& [lo, hi] : segments) {
    std::size_t cur = lo;
    while (cur + min_len <= hi) {
      auto len = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(min_len),
                                                          static_cast<std::int64_t>(max_len)));
      len = std::min(len, hi - cur);
      if (len < min_len) break;
      std::string passage;
      for (std::size_t i = cur; i < cur + len; ++i) {
        if (i > cur) passage += ' ';
        passage += tokens[i];
      }
      windows.push_back(std::move(passage));
      cur += len;  // stride equals the window length: no overlap
    }
  }
  return windows;
}

}  // namespace advrank
