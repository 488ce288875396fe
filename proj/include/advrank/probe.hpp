#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "advrank/data.hpp"
#include "advrank/error.hpp"
#include "advrank/models.hpp"
#include "advrank/params.hpp"
#include "advrank/rng.hpp"
#include "advrank/vocab.hpp"

namespace advrank {

/// Linear softmax probe over frozen representations. Deliberately written
/// with plain loops and no tape so it cannot inherit a bug from the
/// training path it is meant to audit.
struct ProbeConfig {
  std::vector<std::string> inspected_reps = {"joint"};
  std::size_t epochs = 300;
  double learning_rate = 0.5;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 17;

  void validate() const {
    if (inspected_reps.empty()) throw ConfigError("probe: inspected_reps is empty");
    if (epochs == 0) throw ConfigError("probe: epochs must be positive");
    if (learning_rate <= 0.0) throw ConfigError("probe: learning_rate must be positive");
    if (holdout_fraction <= 0.0 || holdout_fraction >= 1.0) {
      throw ConfigError("probe: holdout_fraction must lie in (0, 1)");
    }
  }
};

struct ProbeResult {
  double train_accuracy = 0.0;
  double holdout_accuracy = 0.0;
  std::size_t n_train = 0;
  std::size_t n_holdout = 0;
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
};

namespace detail {

/// Frozen features for every relevant training-domain pair: the requested
/// representations concatenated, one row per pair.
inline void probe_features(const std::vector<Example>& examples, const RegimeSpec& regime,
                           const ModelContext& mctx, const ParamSet& rel_params,
                           const Vocabulary& vocab, const std::vector<std::string>& reps,
                           std::vector<std::vector<double>>& x, std::vector<std::size_t>& y) {
  auto widths = model_rep_widths(mctx);
  for (const std::string& r : reps) {
    if (!widths.count(r)) throw ConfigError("probe: model has no representation named '" + r + "'");
  }
  Graph g;
  BoundParams bp = bind(g, rel_params, false);
  for (const Example& e : examples) {
    if (!e.relevant) continue;
    const std::string& d = regime.domain_of(e);
    if (!regime.is_train_domain(d)) continue;
    ScoredOutput so = model_score(g, bp, mctx, vocab.encode(e.query), vocab.encode(e.answer));
    std::vector<double> row;
    for (const std::string& r : reps) {
      const Tensor& t = g.value(so.reps.at(r));
      row.insert(row.end(), t.data.begin(), t.data.end());
    }
    x.push_back(std::move(row));
    y.push_back(regime.domain_index(d));
  }
}

}  // namespace detail

/// Fits a multinomial logistic regression on frozen representations of
/// relevant pairs and reports held-out domain classification accuracy.
/// Features are standardized with train-portion statistics; the split is
/// per-class so every domain appears on both sides.
inline ProbeResult domain_probe(const std::vector<Example>& examples, const RegimeSpec& regime,
                                const ModelContext& mctx, const ParamSet& rel_params,
                                const Vocabulary& vocab, const ProbeConfig& cfg) {
  cfg.validate();
  std::vector<std::vector<double>> x;
  std::vector<std::size_t> y;
  detail::probe_features(examples, regime, mctx, rel_params, vocab, cfg.inspected_reps, x, y);
  if (x.empty()) throw DataError("probe: no relevant training-domain pairs to probe");

  std::size_t c = regime.train_domains.size();
  std::size_t dim = x[0].size();

  // Per-class shuffled split.
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < x.size(); ++i) by_class[y[i]].push_back(i);
  Rng rng(mix_seed(cfg.seed, "probe-split"));
  std::vector<std::size_t> train_idx, hold_idx;
  for (auto& [label, idxs] : by_class) {
    (void)label;
    rng.shuffle(idxs);
    std::size_t n_hold = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.holdout_fraction * static_cast<double>(idxs.size()))));
    if (n_hold >= idxs.size()) throw DataError("probe: a domain has too few pairs to split");
    for (std::size_t i = 0; i < idxs.size(); ++i) {
      (i < n_hold ? hold_idx : train_idx).push_back(idxs[i]);
    }
  }

  // Standardize with train-portion statistics.
  std::vector<double> mean(dim, 0.0), sd(dim, 0.0);
  for (std::size_t i : train_idx) {
    for (std::size_t j = 0; j < dim; ++j) mean[j] += x[i][j];
  }
  for (std::size_t j = 0; j < dim; ++j) mean[j] /= static_cast<double>(train_idx.size());
  for (std::size_t i : train_idx) {
    for (std::size_t j = 0; j < dim; ++j) {
      double d = x[i][j] - mean[j];
      sd[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < dim; ++j) {
    sd[j] = std::sqrt(sd[j] / static_cast<double>(train_idx.size()));
    if (sd[j] < 1e-8) sd[j] = 1.0;
  }
  auto standardized = [&](std::size_t i, std::size_t j) { return (x[i][j] - mean[j]) / sd[j]; };

  // Full-batch gradient descent on the cross entropy.
  std::vector<double> w(dim * c, 0.0), b(c, 0.0);
  std::vector<double> logits(c), probs(c);
  auto forward = [&](std::size_t i) {
    for (std::size_t k = 0; k < c; ++k) {
      double z = b[k];
      for (std::size_t j = 0; j < dim; ++j) z += standardized(i, j) * w[j * c + k];
      logits[k] = z;
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (std::size_t k = 0; k < c; ++k) denom += (probs[k] = std::exp(logits[k] - mx));
    for (std::size_t k = 0; k < c; ++k) probs[k] /= denom;
  };

  std::vector<double> gw(dim * c), gb(c);
  double inv_n = 1.0 / static_cast<double>(train_idx.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i : train_idx) {
      forward(i);
      for (std::size_t k = 0; k < c; ++k) {
        double err = probs[k] - (y[i] == k ? 1.0 : 0.0);
        gb[k] += err;
        for (std::size_t j = 0; j < dim; ++j) gw[j * c + k] += err * standardized(i, j);
      }
    }
    for (std::size_t k = 0; k < c; ++k) b[k] -= cfg.learning_rate * gb[k] * inv_n;
    for (std::size_t jk = 0; jk < dim * c; ++jk) w[jk] -= cfg.learning_rate * gw[jk] * inv_n;
  }

  auto accuracy = [&](const std::vector<std::size_t>& idxs) {
    std::size_t correct = 0;
    for (std::size_t i : idxs) {
      forward(i);
      std::size_t arg = 0;
      for (std::size_t k = 1; k < c; ++k) {
        if (probs[k] > probs[arg]) arg = k;
      }
      if (arg == y[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(idxs.size());
  };

  ProbeResult res;
  res.train_accuracy = accuracy(train_idx);
  res.holdout_accuracy = accuracy(hold_idx);
  res.n_train = train_idx.size();
  res.n_holdout = hold_idx.size();
  res.num_classes = c;
  res.feature_dim = dim;
  return res;
}

}  // namespace advrank
