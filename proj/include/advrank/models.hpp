#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "advrank/error.hpp"
#include "advrank/graph.hpp"
#include "advrank/params.hpp"
#include "advrank/rng.hpp"
#include "advrank/vocab.hpp"

namespace advrank {

struct CosSimConfig {
  std::size_t vocab_size = 0;  // set from the vocabulary at init time
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 32;
  std::size_t max_len = 60;

  void validate() const {
    if (vocab_size == 0 || embed_dim == 0 || hidden_dim == 0 || max_len == 0) {
      throw ConfigError("cossim config: all dimensions must be positive");
    }
  }
};

struct DuetDistConfig {
  std::size_t trigraph_vocab = 2000;
  std::size_t conv_channels = 32;
  std::size_t conv_width = 3;
  std::size_t query_len = 20;
  std::size_t doc_len = 300;
  std::size_t hidden_dim = 32;

  void validate() const {
    if (trigraph_vocab == 0 || conv_channels == 0 || conv_width == 0 || query_len == 0 ||
        doc_len == 0 || hidden_dim == 0) {
      throw ConfigError("duet config: all dimensions must be positive");
    }
    if (query_len > doc_len) throw ConfigError("duet config: query_len must not exceed doc_len");
    if (conv_width > query_len) throw ConfigError("duet config: conv_width must not exceed query_len");
  }
};

/// A model's scalar score plus its named internal representations. The
/// "joint" key is always present; the discriminator taps these by name.
struct ScoredOutput {
  NodeId score;
  std::map<std::string, NodeId> reps;
};

/// concat(q, d, q ⊙ d); both inputs rank-1 of equal length.
inline NodeId joint_representation(Graph& g, NodeId q_rep, NodeId d_rep) {
  const Tensor& q = g.value(q_rep);
  const Tensor& d = g.value(d_rep);
  if (q.rank() != 1 || d.rank() != 1 || q.numel() != d.numel()) {
    throw ShapeError("joint_representation: inputs must be rank-1 of equal length, got " +
                     Tensor::shape_str(q.shape) + " and " + Tensor::shape_str(d.shape));
  }
  return g.concat({q_rep, d_rep, g.mul(q_rep, d_rep)});
}

namespace detail {

/// Truncate to max_len, drop pad ids, optionally re-pad up to min_len with
/// the pad id (pad rows contribute nothing downstream). Raw pad positions
/// therefore never influence the score.
inline std::vector<std::size_t> prep_ids(const std::vector<std::size_t>& ids, std::size_t max_len,
                                         std::size_t min_len, const char* what) {
  std::vector<std::size_t> real;
  for (std::size_t i = 0; i < ids.size() && i < max_len; ++i) {
    if (ids[i] != Vocabulary::kPadId) real.push_back(ids[i]);
  }
  if (real.empty()) throw DataError(std::string(what) + ": empty token sequence after truncation");
  while (real.size() < min_len) real.push_back(Vocabulary::kPadId);
  return real;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CosSim: siamese recurrent encoders compared by cosine similarity
// ---------------------------------------------------------------------------

inline ParamSet cossim_init(const CosSimConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamSet p;
  p.add_weight("embed", cfg.vocab_size, cfg.embed_dim, rng);
  for (const char* dir : {"fwd", "bwd"}) {
    std::string base = std::string("gru.") + dir + ".";
    p.add_weight(base + "wz", cfg.embed_dim, cfg.hidden_dim, rng);
    p.add_weight(base + "uz", cfg.hidden_dim, cfg.hidden_dim, rng);
    p.add_bias(base + "bz", cfg.hidden_dim);
    p.add_weight(base + "wh", cfg.embed_dim, cfg.hidden_dim, rng);
    p.add_weight(base + "uh", cfg.hidden_dim, cfg.hidden_dim, rng);
    p.add_bias(base + "bh", cfg.hidden_dim);
  }
  return p;
}

namespace detail {

/// Single-gate recurrent encoding of one direction, max-pooled over time.
inline NodeId gru_direction(Graph& g, const BoundParams& bp, const std::string& base, NodeId emb,
                            std::size_t len, std::size_t hidden, bool reverse) {
  NodeId wz = bp.at(base + "wz"), uz = bp.at(base + "uz"), bz = bp.at(base + "bz");
  NodeId wh = bp.at(base + "wh"), uh = bp.at(base + "uh"), bh = bp.at(base + "bh");
  NodeId h = g.constant(Tensor::zeros({hidden}));
  NodeId ones = g.constant(Tensor::full({hidden}, 1.0));
  std::vector<NodeId> states;
  states.reserve(len);
  for (std::size_t step = 0; step < len; ++step) {
    std::size_t t = reverse ? len - 1 - step : step;
    NodeId x = g.row_select(emb, t);
    NodeId z = g.sigmoid(g.add(g.add(g.matmul(x, wz), g.matmul(h, uz)), bz));
    NodeId hc = g.tanh(g.add(g.add(g.matmul(x, wh), g.matmul(h, uh)), bh));
    h = g.add(g.mul(z, hc), g.mul(g.sub(ones, z), h));
    states.push_back(h);
  }
  return g.max_axis(g.stack_rows(states), 0);
}

/// Bidirectional encoding: concat of forward and backward max-pooled states.
inline NodeId cossim_encode(Graph& g, const BoundParams& bp, const CosSimConfig& cfg,
                            const std::vector<std::size_t>& ids, const char* what) {
  std::vector<std::size_t> real = prep_ids(ids, cfg.max_len, 1, what);
  NodeId emb = g.embedding(bp.at("embed"), real);
  NodeId fwd = gru_direction(g, bp, "gru.fwd.", emb, real.size(), cfg.hidden_dim, false);
  NodeId bwd = gru_direction(g, bp, "gru.bwd.", emb, real.size(), cfg.hidden_dim, true);
  return g.concat({fwd, bwd});
}

}  // namespace detail

inline ScoredOutput cossim_score(Graph& g, const BoundParams& bp, const CosSimConfig& cfg,
                                 const std::vector<std::size_t>& query,
                                 const std::vector<std::size_t>& doc) {
  NodeId q_rep = detail::cossim_encode(g, bp, cfg, query, "cossim query");
  NodeId d_rep = detail::cossim_encode(g, bp, cfg, doc, "cossim doc");
  ScoredOutput out;
  out.score = g.cosine(q_rep, d_rep);
  out.reps["q_rep"] = q_rep;
  out.reps["d_rep"] = d_rep;
  out.reps["joint"] = joint_representation(g, q_rep, d_rep);
  return out;
}

inline std::map<std::string, std::size_t> cossim_rep_widths(const CosSimConfig& cfg) {
  std::size_t w = 2 * cfg.hidden_dim;
  return {{"q_rep", w}, {"d_rep", w}, {"joint", 3 * w}};
}

// ---------------------------------------------------------------------------
// Duet (distributed sub-network): hashed trigraph bags, convolutions,
// Hadamard interaction, max pooling, fully connected layers
// ---------------------------------------------------------------------------

inline ParamSet duet_init(const DuetDistConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  std::size_t c = cfg.conv_channels;
  ParamSet p;
  p.add_weight("embed", cfg.trigraph_vocab, c, rng);
  for (const char* side : {"q", "d"}) {
    std::string base = std::string("conv.") + side + ".";
    p.add_weight(base + "w", cfg.conv_width * c, c, rng);
    p.add_bias(base + "b", c);
  }
  p.add_weight("proj.q.w", c, c, rng);
  p.add_bias("proj.q.b", c);
  p.add_weight("fc1.w", c, cfg.hidden_dim, rng);
  p.add_bias("fc1.b", cfg.hidden_dim);
  p.add_weight("out.w", cfg.hidden_dim, 1, rng);
  p.add_bias("out.b", 1);
  return p;
}

namespace detail {

/// Trigraph-bag rows convolved into per-window channel activations.
inline NodeId duet_conv(Graph& g, const BoundParams& bp, const DuetDistConfig& cfg,
                        const std::vector<TokenBag>& bag_table, const std::vector<std::size_t>& ids,
                        const char* side, std::size_t max_len, const char* what) {
  std::vector<std::size_t> real = prep_ids(ids, max_len, cfg.conv_width, what);
  std::vector<TokenBag> bags;
  bags.reserve(real.size());
  for (std::size_t id : real) {
    if (id >= bag_table.size()) throw DataError(std::string(what) + ": token id out of vocabulary");
    bags.push_back(bag_table[id]);
  }
  NodeId rows = g.bag_embedding(bp.at("embed"), bags);
  std::string base = std::string("conv.") + side + ".";
  return g.tanh(g.add_rowvec(g.matmul(g.unfold(rows, cfg.conv_width), bp.at(base + "w")), bp.at(base + "b")));
}

}  // namespace detail

inline ScoredOutput duet_score(Graph& g, const BoundParams& bp, const DuetDistConfig& cfg,
                               const std::vector<TokenBag>& bag_table,
                               const std::vector<std::size_t>& query,
                               const std::vector<std::size_t>& doc) {
  NodeId q_windows = detail::duet_conv(g, bp, cfg, bag_table, query, "q", cfg.query_len, "duet query");
  NodeId d_windows = detail::duet_conv(g, bp, cfg, bag_table, doc, "d", cfg.doc_len, "duet doc");
  NodeId q_rep = g.tanh(g.add(g.matmul(g.max_axis(q_windows, 0), bp.at("proj.q.w")), bp.at("proj.q.b")));
  NodeId d_rep = g.max_axis(d_windows, 0);
  NodeId hadamard_pooled = g.max_axis(g.mul_rowvec(d_windows, q_rep), 0);
  NodeId fc1 = g.tanh(g.add(g.matmul(hadamard_pooled, bp.at("fc1.w")), bp.at("fc1.b")));
  ScoredOutput out;
  out.score = g.add(g.matmul(fc1, bp.at("out.w")), bp.at("out.b"));
  out.reps["q_rep"] = q_rep;
  out.reps["d_rep"] = d_rep;
  out.reps["hadamard_pooled"] = hadamard_pooled;
  out.reps["fc1"] = fc1;
  out.reps["joint"] = joint_representation(g, q_rep, d_rep);
  return out;
}

inline std::map<std::string, std::size_t> duet_rep_widths(const DuetDistConfig& cfg) {
  std::size_t c = cfg.conv_channels;
  return {{"q_rep", c}, {"d_rep", c}, {"hadamard_pooled", c}, {"joint", 3 * c}, {"fc1", cfg.hidden_dim}};
}

// ---------------------------------------------------------------------------
// Kind-dispatched front door used by training and evaluation
// ---------------------------------------------------------------------------

enum class ModelKind { kCosSim, kDuetDist };

inline const char* model_kind_name(ModelKind k) { return k == ModelKind::kCosSim ? "cossim" : "duet_dist"; }

inline ModelKind model_kind_from(const std::string& s) {
  if (s == "cossim") return ModelKind::kCosSim;
  if (s == "duet_dist") return ModelKind::kDuetDist;
  throw ConfigError("unknown model kind '" + s + "' (expected cossim or duet_dist)");
}

/// Everything needed to score with either model. The bag table belongs to
/// the Duet variant and is derived from the vocabulary once.
struct ModelContext {
  ModelKind kind = ModelKind::kCosSim;
  CosSimConfig cossim;
  DuetDistConfig duet;
  std::vector<TokenBag> bag_table;

  static ModelContext make_cossim(CosSimConfig cfg) {
    cfg.validate();
    ModelContext m;
    m.kind = ModelKind::kCosSim;
    m.cossim = cfg;
    return m;
  }

  static ModelContext make_duet(DuetDistConfig cfg, const Vocabulary& vocab) {
    cfg.validate();
    ModelContext m;
    m.kind = ModelKind::kDuetDist;
    m.duet = cfg;
    m.bag_table = build_bag_table(vocab, cfg.trigraph_vocab);
    return m;
  }
};

inline ParamSet model_init(const ModelContext& m, std::uint64_t seed) {
  return m.kind == ModelKind::kCosSim ? cossim_init(m.cossim, seed) : duet_init(m.duet, seed);
}

inline ScoredOutput model_score(Graph& g, const BoundParams& bp, const ModelContext& m,
                                const std::vector<std::size_t>& query,
                                const std::vector<std::size_t>& doc) {
  if (m.kind == ModelKind::kCosSim) return cossim_score(g, bp, m.cossim, query, doc);
  return duet_score(g, bp, m.duet, m.bag_table, query, doc);
}

inline std::map<std::string, std::size_t> model_rep_widths(const ModelContext& m) {
  return m.kind == ModelKind::kCosSim ? cossim_rep_widths(m.cossim) : duet_rep_widths(m.duet);
}

}  // namespace advrank
