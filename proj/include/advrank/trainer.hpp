#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "advrank/data.hpp"
#include "advrank/discriminator.hpp"
#include "advrank/error.hpp"
#include "advrank/losses.hpp"
#include "advrank/metrics.hpp"
#include "advrank/models.hpp"
#include "advrank/optimizer.hpp"
#include "advrank/retrieval.hpp"
#include "advrank/rng.hpp"
#include "advrank/vocab.hpp"

namespace advrank {

struct TrainState {
  ParamSet rel_params;
  ParamSet disc_params;
  Adam rel_opt;
  Adam disc_opt;
  bool next_is_disc_step = true;  // alternate regime starts with the discriminator step
};

struct StepStats {
  double loss = 0.0;            // the mean loss the optimizer saw this step
  std::size_t n_rel = 0;        // triples contributing a relevance term
  std::size_t n_disc_only = 0;  // discriminator-only triples in the batch
  bool updated_rel = false;
  bool updated_disc = false;
};

namespace detail {

inline NodeId mean_of(Graph& g, const std::vector<NodeId>& terms) {
  NodeId acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = g.add(acc, terms[i]);
  return g.scale(acc, 1.0 / static_cast<double>(terms.size()));
}

/// In-batch extra negatives for the Duet objective: other triples' relevant
/// documents, cyclically after `self`, up to k - 1 of them.
inline std::vector<const std::vector<std::size_t>*> extra_negatives_for(
    const std::vector<TrainingTriple>& batch, std::size_t self, std::size_t k) {
  std::vector<const std::vector<std::size_t>*> out;
  if (k <= 1) return out;
  for (std::size_t off = 1; off < batch.size() && out.size() < k - 1; ++off) {
    const TrainingTriple& other = batch[(self + off) % batch.size()];
    if (other.discriminator_only || other.qid == batch[self].qid) continue;
    out.push_back(&other.doc_rel);
  }
  return out;
}

}  // namespace detail

/// One optimizer step over a batch of triples.
///
/// Simultaneous regime: a single backward pass of the mean joint loss
/// updates both parameter groups; the reversal layer inside discriminate()
/// already negates the confusion gradient into the ranking model.
///
/// Alternate regime: step A trains the discriminator on the mean unscaled
/// confusion loss with the ranking model held constant; step B trains the
/// ranking model on the mean joint loss with the discriminator held
/// constant. The two steps alternate per call.
///
/// Discriminator-only triples contribute confusion terms only; no relevance
/// loss node is ever built for them, and with target_grad_to_rel disabled
/// their reversed gradients stop at a constant-bound copy of the ranking
/// parameters.
inline StepStats train_step(TrainState& state, const std::vector<TrainingTriple>& batch,
                            const ModelContext& mctx, const DiscriminatorConfig& dcfg,
                            const TrainConfig& cfg) {
  if (batch.empty()) throw DataError("train_step: empty batch");
  StepStats stats;
  for (const TrainingTriple& t : batch) {
    if (t.discriminator_only) {
      ++stats.n_disc_only;
    } else {
      ++stats.n_rel;
    }
  }

  if (cfg.regime == Regime::kSimultaneous) {
    Graph g;
    BoundParams rel_bp = bind(g, state.rel_params, true);
    BoundParams disc_bp = bind(g, state.disc_params, true);
    BoundParams rel_frozen;
    bool need_frozen = !cfg.target_grad_to_rel && stats.n_disc_only > 0;
    if (need_frozen) rel_frozen = bind(g, state.rel_params, false);

    std::vector<NodeId> terms;
    terms.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const TrainingTriple& t = batch[i];
      if (t.discriminator_only) {
        const BoundParams& through = need_frozen ? rel_frozen : rel_bp;
        auto [a, b] = disc_only_adv_parts(g, mctx, through, dcfg, disc_bp, cfg, t);
        terms.push_back(g.scale(g.add(a, b), cfg.lambda));
      } else {
        auto extras = detail::extra_negatives_for(batch, i, cfg.nll_negatives);
        terms.push_back(joint_loss_parts(g, mctx, rel_bp, dcfg, disc_bp, cfg, t, extras).joint);
      }
    }
    NodeId loss = detail::mean_of(g, terms);
    stats.loss = g.scalar_value(loss);
    auto table = g.backward(loss);
    state.rel_opt.step(state.rel_params, collect_grads(table, rel_bp));
    state.disc_opt.step(state.disc_params, collect_grads(table, disc_bp));
    stats.updated_rel = true;
    stats.updated_disc = true;
    return stats;
  }

  // Alternate regime.
  if (state.next_is_disc_step) {
    Graph g;
    BoundParams rel_bp = bind(g, state.rel_params, false);
    BoundParams disc_bp = bind(g, state.disc_params, true);
    std::vector<NodeId> terms;
    terms.reserve(batch.size() * 2);
    for (const TrainingTriple& t : batch) {
      auto [a, b] = disc_only_adv_parts(g, mctx, rel_bp, dcfg, disc_bp, cfg, t);
      terms.push_back(a);
      terms.push_back(b);
    }
    NodeId loss = detail::mean_of(g, terms);
    stats.loss = g.scalar_value(loss);
    auto table = g.backward(loss);
    state.disc_opt.step(state.disc_params, collect_grads(table, disc_bp));
    stats.updated_disc = true;
  } else {
    Graph g;
    BoundParams rel_bp = bind(g, state.rel_params, true);
    BoundParams disc_bp = bind(g, state.disc_params, false);
    std::vector<NodeId> terms;
    std::size_t contributing = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const TrainingTriple& t = batch[i];
      if (t.discriminator_only) {
        if (!cfg.target_grad_to_rel) continue;  // these samples stop at the discriminator
        auto [a, b] = disc_only_adv_parts(g, mctx, rel_bp, dcfg, disc_bp, cfg, t);
        terms.push_back(g.scale(g.add(a, b), cfg.lambda));
      } else {
        auto extras = detail::extra_negatives_for(batch, i, cfg.nll_negatives);
        terms.push_back(joint_loss_parts(g, mctx, rel_bp, dcfg, disc_bp, cfg, t, extras).joint);
      }
      ++contributing;
    }
    if (!terms.empty()) {
      NodeId loss = detail::mean_of(g, terms);
      stats.loss = g.scalar_value(loss);
      auto table = g.backward(loss);
      state.rel_opt.step(state.rel_params, collect_grads(table, rel_bp));
      stats.updated_rel = true;
    }
    (void)contributing;
  }
  state.next_is_disc_step = !state.next_is_disc_step;
  return stats;
}

// ---------------------------------------------------------------------------
// Evaluation over telescoped pools
// ---------------------------------------------------------------------------

inline std::map<std::string, std::string> answer_texts_of(const std::vector<Example>& examples) {
  std::map<std::string, std::string> m;
  for (const Example& e : examples) m.emplace(e.aid, e.answer);
  return m;
}

/// Score every judgeable pool with the model; one graph per pool, params
/// bound as constants.
inline std::vector<QueryResult> score_pools(const PoolSet& pools,
                                            const std::map<std::string, std::string>& answer_texts,
                                            const ModelContext& mctx, const ParamSet& params,
                                            const Vocabulary& vocab) {
  std::vector<QueryResult> results;
  for (const EvalPool& pool : pools.pools) {
    if (pool.unjudgeable) continue;
    Graph g;
    BoundParams bp = bind(g, params, false);
    std::vector<std::size_t> qids = vocab.encode(pool.query);
    results.push_back(score_pool(pool, [&](const PoolEntry& entry) {
      return g.scalar_value(model_score(g, bp, mctx, qids, vocab.encode(answer_texts.at(entry.aid))).score);
    }));
  }
  return results;
}

/// End-to-end evaluation of a parameter set on a slice of examples:
/// telescoped pools via BM25, then model rescoring.
inline MetricsReport evaluate_model(const std::vector<Example>& examples, std::size_t pool_k,
                                    const ModelContext& mctx, const ParamSet& params,
                                    const Vocabulary& vocab) {
  PoolSet pools = build_pools(examples, pool_k);
  std::vector<QueryResult> results = score_pools(pools, answer_texts_of(examples), mctx, params, vocab);
  if (results.empty()) throw DataError("evaluate: no judgeable pools");
  return make_report(results, pools.n_excluded);
}

/// Fraction of relevant training-domain pairs whose domain the
/// discriminator identifies from the model's representations. Forward only;
/// lambda does not affect it.
inline double discriminator_accuracy(const std::vector<Example>& examples, const RegimeSpec& regime,
                                     const ModelContext& mctx, const ParamSet& rel_params,
                                     const DiscriminatorConfig& dcfg, const ParamSet& disc_params,
                                     const Vocabulary& vocab) {
  std::size_t total = 0, correct = 0;
  Graph g;
  BoundParams rel_bp = bind(g, rel_params, false);
  BoundParams disc_bp = bind(g, disc_params, false);
  for (const Example& e : examples) {
    if (!e.relevant) continue;
    const std::string& d = regime.domain_of(e);
    if (!regime.is_train_domain(d)) continue;
    ScoredOutput so = model_score(g, rel_bp, mctx, vocab.encode(e.query), vocab.encode(e.answer));
    NodeId logits = discriminate(g, disc_bp, dcfg, so.reps, 0.0);
    const Tensor& z = g.value(logits);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < z.numel(); ++i) {
      if (z.at(i) > z.at(arg)) arg = i;
    }
    ++total;
    if (arg == regime.domain_index(d)) ++correct;
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

// ---------------------------------------------------------------------------
// Full training loop with early stopping
// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_p1 = 0.0;
  double dev_mrr = 0.0;
  double disc_acc = 0.0;
  std::size_t rel_triples = 0;
  std::size_t disc_only_triples = 0;
  std::size_t skipped_queries = 0;
};

struct FitSpec {
  RegimeSpec regime;
  DiscriminatorConfig dcfg;
  TrainConfig tcfg;
  std::uint64_t init_seed = 1;
  std::uint64_t disc_seed = 2;
  std::uint64_t sample_seed = 3;
  std::size_t dev_pool_k = 10;
  std::set<std::string> forbidden_qids;  // target qids the feed must avoid
};

struct FitOutcome {
  TrainState best;  // parameters and optimizer state at the best dev epoch
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;  // 1-based
  double best_dev_mrr = 0.0;
  std::size_t epochs_run = 0;
};

/// Train until dev MRR stops improving for `patience` consecutive epochs;
/// the returned state snapshots the best epoch. Pass `resume` (with
/// `start_epoch` = epochs already completed) to continue a saved run.
inline FitOutcome fit(const DatasetSplits& splits, const std::vector<Example>& target_feed,
                      const ModelContext& mctx, const FitSpec& spec, const Vocabulary& vocab,
                      const TrainState* resume = nullptr, std::size_t start_epoch = 0) {
  spec.tcfg.validate();
  spec.regime.validate();
  if (splits.train.empty() || splits.dev.empty()) throw DataError("fit: empty train or dev split");
  if (spec.dcfg.num_domains != spec.regime.num_domains()) {
    throw ConfigError("fit: discriminator domain count " + std::to_string(spec.dcfg.num_domains) +
                      " does not match the regime's " + std::to_string(spec.regime.num_domains()));
  }

  TrainState state;
  if (resume) {
    state = *resume;
  } else {
    state.rel_params = model_init(mctx, spec.init_seed);
    std::size_t in_w = discriminator_input_width(spec.dcfg, model_rep_widths(mctx));
    state.disc_params = discriminator_init(spec.dcfg, in_w, spec.disc_seed);
    state.rel_opt = Adam(spec.tcfg.learning_rate);
    state.disc_opt = Adam(spec.tcfg.learning_rate);
  }

  PoolSet dev_pools = build_pools(splits.dev, spec.dev_pool_k);
  std::map<std::string, std::string> dev_texts = answer_texts_of(splits.dev);

  FitOutcome out;
  double best = -1.0;
  std::size_t bad_epochs = 0;

  for (std::size_t epoch = start_epoch + 1; epoch <= spec.tcfg.max_epochs; ++epoch) {
    SampleStats sstats;
    std::vector<TrainingTriple> triples =
        sample_triples(splits.train, target_feed, spec.regime, vocab,
                       mix_seed(spec.sample_seed, static_cast<std::uint64_t>(epoch)),
                       spec.forbidden_qids, &sstats);
    if (triples.empty()) throw DataError("fit: sampling produced no training triples");

    double loss_sum = 0.0;
    std::size_t loss_terms = 0;
    for (std::size_t off = 0; off < triples.size(); off += spec.tcfg.batch_size) {
      std::size_t hi = std::min(triples.size(), off + spec.tcfg.batch_size);
      std::vector<TrainingTriple> batch(triples.begin() + static_cast<std::ptrdiff_t>(off),
                                        triples.begin() + static_cast<std::ptrdiff_t>(hi));
      StepStats st = train_step(state, batch, mctx, spec.dcfg, spec.tcfg);
      if (st.updated_rel) {
        loss_sum += st.loss;
        ++loss_terms;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_terms ? loss_sum / static_cast<double>(loss_terms) : 0.0;
    std::vector<QueryResult> dev_results =
        score_pools(dev_pools, dev_texts, mctx, state.rel_params, vocab);
    if (dev_results.empty()) throw DataError("fit: no judgeable dev pools");
    rec.dev_p1 = precision_at_1(dev_results);
    rec.dev_mrr = mrr(dev_results);
    rec.disc_acc = discriminator_accuracy(splits.dev, spec.regime, mctx, state.rel_params, spec.dcfg,
                                          state.disc_params, vocab);
    rec.rel_triples = sstats.rel_triples;
    rec.disc_only_triples = sstats.disc_only_triples;
    rec.skipped_queries = sstats.skipped_queries;
    out.log.push_back(rec);
    out.epochs_run = epoch;

    if (rec.dev_mrr > best) {
      best = rec.dev_mrr;
      out.best_epoch = epoch;
      out.best_dev_mrr = rec.dev_mrr;
      out.best = state;  // deep copy snapshot
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (bad_epochs >= spec.tcfg.patience) break;
    }
  }
  if (out.best_epoch == 0) throw DataError("fit: no epochs were run");
  return out;
}

}  // namespace advrank
