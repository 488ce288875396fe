#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advrank/discriminator.hpp"
#include "advrank/error.hpp"
#include "advrank/graph.hpp"
#include "advrank/models.hpp"

namespace advrank {

enum class Regime { kAlternate, kSimultaneous };

inline const char* regime_name(Regime r) { return r == Regime::kAlternate ? "alternate" : "simultaneous"; }

inline Regime regime_from(const std::string& s) {
  if (s == "alternate") return Regime::kAlternate;
  if (s == "simultaneous") return Regime::kSimultaneous;
  throw ConfigError("unknown update regime '" + s + "' (expected alternate or simultaneous)");
}

struct TrainConfig {
  double lambda = 0.0;
  Regime regime = Regime::kSimultaneous;
  double margin = 0.2;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::size_t patience = 3;
  std::uint64_t seed = 1;
  std::size_t nll_negatives = 4;    // in-batch negatives for the Duet objective
  bool target_grad_to_rel = true;   // reversed target-sample gradients reach the ranking model

  void validate() const {
    if (lambda < 0) throw ConfigError("train config: lambda must be >= 0");
    if (margin <= 0) throw ConfigError("train config: margin must be > 0");
    if (learning_rate <= 0) throw ConfigError("train config: learning_rate must be > 0");
    if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
    if (max_epochs == 0) throw ConfigError("train config: max_epochs must be positive");
    if (patience == 0) throw ConfigError("train config: patience must be >= 1");
    if (nll_negatives == 0) throw ConfigError("train config: nll_negatives must be >= 1");
  }
};

/// One relevance judgment turned into a pairwise training sample. For
/// discriminator-only samples (held-out-domain feeding) the relevance loss
/// is never built; only the confusion terms are.
struct TrainingTriple {
  std::vector<std::size_t> query;
  std::vector<std::size_t> doc_rel;
  std::vector<std::size_t> doc_nonrel;
  std::size_t domain = 0;  // index into the run's domain list
  bool discriminator_only = false;
  std::string qid;
};

/// max(0, margin - s_pos + s_neg) over scalar score nodes.
inline NodeId hinge_loss(Graph& g, NodeId s_pos, NodeId s_neg, double margin) {
  return g.relu(g.sub(g.add(g.scalar(margin), s_neg), s_pos));
}

/// -log softmax(scores)[positive]; scores holds the positive plus k >= 1
/// negatives as scalar nodes.
inline NodeId nll_loss(Graph& g, const std::vector<NodeId>& scores, std::size_t positive_index) {
  if (scores.size() < 2) throw DataError("nll_loss: need at least one negative score");
  if (positive_index >= scores.size()) throw DataError("nll_loss: positive index out of range");
  NodeId z = g.concat(scores);
  return g.scale(g.log(g.select_index(g.softmax(z), positive_index)), -1.0);
}

/// Cross-entropy of softmax(logits) against the true domain id.
inline NodeId adv_loss(Graph& g, NodeId logits, std::size_t d_true) {
  const Tensor& z = g.value(logits);
  if (z.rank() != 1) throw ShapeError("adv_loss: logits must be rank-1, got " + Tensor::shape_str(z.shape));
  if (d_true >= z.numel()) {
    throw DataError("adv_loss: domain id " + std::to_string(d_true) + " out of range for " +
                    std::to_string(z.numel()) + " domains");
  }
  return g.scale(g.log(g.select_index(g.softmax(logits), d_true)), -1.0);
}

struct JointLossParts {
  NodeId joint;
  NodeId rel;
  NodeId adv_pos;
  NodeId adv_neg;
};

/// The combined objective for one triple: relevance loss plus
/// lambda * (confusion loss on the relevant pair + confusion loss on the
/// non-relevant pair). Both confusion terms read the model's reps through
/// the reversal layer. Duet's relevance term may take extra in-batch
/// negative documents.
inline JointLossParts joint_loss_parts(Graph& g, const ModelContext& m, const BoundParams& rel_bp,
                                       const DiscriminatorConfig& dcfg, const BoundParams& disc_bp,
                                       const TrainConfig& cfg, const TrainingTriple& triple,
                                       const std::vector<const std::vector<std::size_t>*>& extra_negatives = {}) {
  if (triple.discriminator_only) {
    throw Error("joint_loss: discriminator-only samples carry no relevance loss");
  }
  ScoredOutput pos = model_score(g, rel_bp, m, triple.query, triple.doc_rel);
  ScoredOutput neg = model_score(g, rel_bp, m, triple.query, triple.doc_nonrel);

  JointLossParts parts;
  if (m.kind == ModelKind::kCosSim) {
    parts.rel = hinge_loss(g, pos.score, neg.score, cfg.margin);
  } else {
    std::vector<NodeId> scores = {pos.score, neg.score};
    for (const std::vector<std::size_t>* doc : extra_negatives) {
      scores.push_back(model_score(g, rel_bp, m, triple.query, *doc).score);
    }
    parts.rel = nll_loss(g, scores, 0);
  }
  parts.adv_pos = adv_loss(g, discriminate(g, disc_bp, dcfg, pos.reps, cfg.lambda), triple.domain);
  parts.adv_neg = adv_loss(g, discriminate(g, disc_bp, dcfg, neg.reps, cfg.lambda), triple.domain);
  parts.joint = g.add(parts.rel, g.scale(g.add(parts.adv_pos, parts.adv_neg), cfg.lambda));
  return parts;
}

inline NodeId joint_loss(Graph& g, const ModelContext& m, const BoundParams& rel_bp,
                         const DiscriminatorConfig& dcfg, const BoundParams& disc_bp,
                         const TrainConfig& cfg, const TrainingTriple& triple) {
  return joint_loss_parts(g, m, rel_bp, dcfg, disc_bp, cfg, triple).joint;
}

/// Confusion terms alone for a discriminator-only sample (both documents,
/// no relevance loss node is ever created).
inline std::pair<NodeId, NodeId> disc_only_adv_parts(Graph& g, const ModelContext& m,
                                                     const BoundParams& rel_bp,
                                                     const DiscriminatorConfig& dcfg,
                                                     const BoundParams& disc_bp, const TrainConfig& cfg,
                                                     const TrainingTriple& triple) {
  ScoredOutput pos = model_score(g, rel_bp, m, triple.query, triple.doc_rel);
  ScoredOutput neg = model_score(g, rel_bp, m, triple.query, triple.doc_nonrel);
  NodeId a = adv_loss(g, discriminate(g, disc_bp, dcfg, pos.reps, cfg.lambda), triple.domain);
  NodeId b = adv_loss(g, discriminate(g, disc_bp, dcfg, neg.reps, cfg.lambda), triple.domain);
  return {a, b};
}

}  // namespace advrank
