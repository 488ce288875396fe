#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "advrank/data.hpp"
#include "advrank/error.hpp"
#include "advrank/rng.hpp"

namespace advrank {

/// Multi-domain corpus with a domain-invariant relevance rule. Relevance is
/// carried entirely by shared-vocabulary overlap; domain identity leaks
/// through domain-specific tokens mixed in with probability domain_shift.
/// Answer-side domain tokens are additionally flavored by the label, so each
/// domain offers a local relevance shortcut that does not transfer: a model
/// free to use domain features will, and pays for it on an unseen domain.
struct SynthConfig {
  std::size_t num_domains = 3;
  std::size_t vocab_shared = 120;
  std::size_t vocab_per_domain = 12;
  std::size_t queries_per_domain = 60;
  std::size_t answers_per_query = 6;
  double domain_shift = 0.8;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_domains < 3) throw ConfigError("synth config: num_domains must be >= 3");
    if (answers_per_query < 2) throw ConfigError("synth config: answers_per_query must be >= 2");
    if (domain_shift < 0.0 || domain_shift > 1.0) {
      throw ConfigError("synth config: domain_shift must lie in [0, 1]");
    }
    if (vocab_shared < 32) throw ConfigError("synth config: vocab_shared must be >= 32");
    if (vocab_per_domain == 0 || queries_per_domain == 0) {
      throw ConfigError("synth config: vocabulary and query counts must be positive");
    }
  }
};

namespace detail {

constexpr std::size_t kQueryCoreTerms = 4;   // core terms defining a query's topic
constexpr std::size_t kRelCoreTerms = 3;     // core terms echoed by the relevant answer
constexpr std::size_t kNonrelCoreTerms = 2;  // strictly fewer: the relevance gap
constexpr std::size_t kQuerySlots = 2;       // per-query domain-or-filler slots
constexpr std::size_t kAnswerSlots = 3;      // per-answer domain-or-filler slots
constexpr std::size_t kAnswerLen = 11;       // core + fillers + slots, equal for both labels

inline std::string shared_token(std::size_t i) { return "sw" + std::to_string(i); }
inline std::string domain_token(std::size_t d, std::size_t i) {
  return "d" + std::to_string(d) + "w" + std::to_string(i);
}

/// k distinct indices in [0, n) by partial Fisher-Yates over a scratch pool.
inline std::vector<std::size_t> draw_distinct(Rng& rng, std::size_t n, std::size_t k,
                                              std::vector<std::size_t>& scratch) {
  scratch.resize(n);
  for (std::size_t i = 0; i < n; ++i) scratch[i] = i;
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
    std::swap(scratch[i], scratch[j]);
    out.push_back(scratch[i]);
  }
  return out;
}

}  // namespace detail

inline std::vector<Example> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<Example> out;
  std::vector<std::size_t> scratch;

  for (std::size_t d = 0; d < cfg.num_domains; ++d) {
    std::string domain = "dom" + std::to_string(d);
    for (std::size_t q = 0; q < cfg.queries_per_domain; ++q) {
      std::string qid = domain + "-q" + std::to_string(q);

      std::vector<std::size_t> core =
          detail::draw_distinct(rng, cfg.vocab_shared, detail::kQueryCoreTerms, scratch);
      std::set<std::size_t> query_terms(core.begin(), core.end());

      // A slot carries a domain token with probability domain_shift,
      // otherwise a shared filler.
      auto fill_slot = [&](std::vector<std::string>& words, std::set<std::size_t>* record) {
        if (rng.bernoulli(cfg.domain_shift)) {
          words.push_back(detail::domain_token(d, rng.uniform_index(cfg.vocab_per_domain)));
        } else {
          std::size_t t = rng.uniform_index(cfg.vocab_shared);
          words.push_back(detail::shared_token(t));
          if (record) record->insert(t);
        }
      };

      std::vector<std::string> qwords;
      for (std::size_t t : core) qwords.push_back(detail::shared_token(t));
      for (std::size_t s = 0; s < detail::kQuerySlots; ++s) fill_slot(qwords, &query_terms);

      std::string query_text;
      for (const std::string& w : qwords) {
        if (!query_text.empty()) query_text += ' ';
        query_text += w;
      }

      // Fillers come from the shared vocabulary minus every query term, so
      // overlap with the query is exactly the echoed core terms.
      std::vector<std::size_t> safe_pool;
      for (std::size_t t = 0; t < cfg.vocab_shared; ++t) {
        if (!query_terms.count(t)) safe_pool.push_back(t);
      }

      // Answer slots draw from a label-specific half of the domain
      // vocabulary. Within a domain this plants a perfect relevance
      // shortcut, but the halves are disjoint across domains, so a model
      // leaning on it transfers nothing; the label itself is still decided
      // by shared-term overlap alone.
      auto safe_slot = [&](std::vector<std::string>& words, bool relevant) {
        if (rng.bernoulli(cfg.domain_shift)) {
          std::size_t split = (cfg.vocab_per_domain + 1) / 2;
          std::size_t lo = relevant ? 0 : split;
          std::size_t n = relevant ? split : cfg.vocab_per_domain - split;
          if (n == 0) {  // a one-token domain vocabulary cannot be split
            lo = 0;
            n = cfg.vocab_per_domain;
          }
          words.push_back(detail::domain_token(d, lo + rng.uniform_index(n)));
        } else {
          words.push_back(detail::shared_token(safe_pool[rng.uniform_index(safe_pool.size())]));
        }
      };

      auto make_answer = [&](std::size_t n_core, bool relevant) {
        std::vector<std::string> words;
        std::vector<std::size_t> echoed =
            detail::draw_distinct(rng, detail::kQueryCoreTerms, n_core, scratch);
        for (std::size_t i : echoed) words.push_back(detail::shared_token(core[i]));
        std::size_t n_fillers = detail::kAnswerLen - n_core - detail::kAnswerSlots;
        std::vector<std::size_t> fillers = detail::draw_distinct(rng, safe_pool.size(), n_fillers, scratch);
        for (std::size_t i : fillers) words.push_back(detail::shared_token(safe_pool[i]));
        for (std::size_t s = 0; s < detail::kAnswerSlots; ++s) safe_slot(words, relevant);
        rng.shuffle(words);
        std::string text;
        for (const std::string& w : words) {
          if (!text.empty()) text += ' ';
          text += w;
        }
        return text;
      };

      // The relevant answer's position among the aids is randomized so aid
      // tie-breaking never favors it.
      std::size_t rel_pos = rng.uniform_index(cfg.answers_per_query);
      for (std::size_t a = 0; a < cfg.answers_per_query; ++a) {
        Example e;
        e.query = query_text;
        e.relevant = a == rel_pos;
        e.answer = make_answer(e.relevant ? detail::kRelCoreTerms : detail::kNonrelCoreTerms,
                               e.relevant);
        e.domain = domain;
        e.collection = domain;
        e.qid = qid;
        e.aid = qid + "-a" + std::to_string(a);
        out.push_back(std::move(e));
      }
    }
  }
  return out;
}

inline nlohmann::ordered_json synth_manifest(const SynthConfig& cfg, const std::vector<Example>& examples) {
  nlohmann::ordered_json j;
  j["config"] = {{"num_domains", cfg.num_domains},
                 {"vocab_shared", cfg.vocab_shared},
                 {"vocab_per_domain", cfg.vocab_per_domain},
                 {"queries_per_domain", cfg.queries_per_domain},
                 {"answers_per_query", cfg.answers_per_query},
                 {"domain_shift", cfg.domain_shift},
                 {"seed", cfg.seed}};
  std::map<std::string, std::size_t> counts;
  for (const Example& e : examples) ++counts[e.domain];
  j["counts_per_domain"] = counts;
  j["total_examples"] = examples.size();
  return j;
}

}  // namespace advrank
