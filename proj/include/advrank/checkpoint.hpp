#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advrank/data.hpp"
#include "advrank/error.hpp"
#include "advrank/models.hpp"
#include "advrank/trainer.hpp"

namespace advrank {

/// Everything needed to resume or evaluate a run: one line of JSON metadata
/// followed by the raw parameter and optimizer payload as little-endian
/// doubles. The header pins the payload length and an FNV-1a hash so a
/// truncated or doctored file fails loudly instead of training quietly
/// from garbage.
struct Checkpoint {
  ModelKind kind = ModelKind::kCosSim;
  CosSimConfig cossim;
  DuetDistConfig duet;
  DiscriminatorConfig dcfg;
  TrainConfig tcfg;
  RegimeSpec regime;
  std::uint64_t init_seed = 0;
  std::uint64_t disc_seed = 0;
  std::uint64_t sample_seed = 0;
  std::vector<std::string> vocab_tokens;
  TrainState state;
  std::size_t epoch = 0;  // epochs completed so far
  std::size_t best_epoch = 0;
  double best_dev_mrr = 0.0;
};

namespace detail {

inline std::uint64_t fnv1a_bytes(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline void append_le(std::vector<unsigned char>& buf, double v) {
  unsigned char b[8];
  std::memcpy(b, &v, 8);
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + 8);
  buf.insert(buf.end(), b, b + 8);
}

inline double read_le(const unsigned char* p) {
  unsigned char b[8];
  std::memcpy(b, p, 8);
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + 8);
  double v;
  std::memcpy(&v, b, 8);
  return v;
}

inline void append_tensors(std::vector<unsigned char>& buf, const std::vector<Tensor>& ts) {
  for (const Tensor& t : ts) {
    for (double v : t.data) append_le(buf, v);
  }
}

inline void append_params(std::vector<unsigned char>& buf, const ParamSet& ps) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (double v : ps.entry(i).value.data) append_le(buf, v);
  }
}

inline nlohmann::ordered_json params_meta(const ParamSet& ps) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    arr.push_back({{"name", ps.entry(i).name}, {"shape", ps.entry(i).value.shape}});
  }
  return arr;
}

inline std::vector<std::size_t> json_shape(const nlohmann::json& j) {
  std::vector<std::size_t> s;
  for (const auto& v : j) s.push_back(v.get<std::size_t>());
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& cp) {
  std::vector<unsigned char> payload;
  detail::append_params(payload, cp.state.rel_params);
  detail::append_tensors(payload, cp.state.rel_opt.first_moments());
  detail::append_tensors(payload, cp.state.rel_opt.second_moments());
  detail::append_params(payload, cp.state.disc_params);
  detail::append_tensors(payload, cp.state.disc_opt.first_moments());
  detail::append_tensors(payload, cp.state.disc_opt.second_moments());

  nlohmann::ordered_json h;
  h["version"] = 1;
  h["model"] = {{"kind", model_kind_name(cp.kind)}};
  if (cp.kind == ModelKind::kCosSim) {
    h["model"]["cossim"] = {{"vocab_size", cp.cossim.vocab_size},
                            {"embed_dim", cp.cossim.embed_dim},
                            {"hidden_dim", cp.cossim.hidden_dim},
                            {"max_len", cp.cossim.max_len}};
  } else {
    h["model"]["duet"] = {{"trigraph_vocab", cp.duet.trigraph_vocab},
                          {"conv_channels", cp.duet.conv_channels},
                          {"conv_width", cp.duet.conv_width},
                          {"query_len", cp.duet.query_len},
                          {"doc_len", cp.duet.doc_len},
                          {"hidden_dim", cp.duet.hidden_dim}};
  }
  h["discriminator"] = {{"num_domains", cp.dcfg.num_domains},
                        {"hidden_widths", cp.dcfg.hidden_widths},
                        {"inspected_reps", cp.dcfg.inspected_reps}};
  h["train"] = {{"lambda", cp.tcfg.lambda},
                {"regime", regime_name(cp.tcfg.regime)},
                {"margin", cp.tcfg.margin},
                {"learning_rate", cp.tcfg.learning_rate},
                {"batch_size", cp.tcfg.batch_size},
                {"max_epochs", cp.tcfg.max_epochs},
                {"patience", cp.tcfg.patience},
                {"seed", cp.tcfg.seed},
                {"nll_negatives", cp.tcfg.nll_negatives},
                {"target_grad_to_rel", cp.tcfg.target_grad_to_rel}};
  h["regime"] = {{"kind", regime_kind_name(cp.regime.kind)},
                 {"train_domains", cp.regime.train_domains},
                 {"target_domain", cp.regime.target_domain},
                 {"equal_sampling", cp.regime.equal_sampling},
                 {"feed_target_to_disc", cp.regime.feed_target_to_disc}};
  h["seeds"] = {{"init", cp.init_seed}, {"disc", cp.disc_seed}, {"sample", cp.sample_seed}};
  h["vocab"] = cp.vocab_tokens;
  h["params"] = {{"rel", detail::params_meta(cp.state.rel_params)},
                 {"disc", detail::params_meta(cp.state.disc_params)}};
  h["optimizer"] = {{"rel_steps", cp.state.rel_opt.step_count()},
                    {"disc_steps", cp.state.disc_opt.step_count()},
                    {"next_is_disc_step", cp.state.next_is_disc_step}};
  h["epoch"] = cp.epoch;
  h["best_epoch"] = cp.best_epoch;
  h["best_dev_mrr"] = cp.best_dev_mrr;
  h["payload_doubles"] = payload.size() / 8;
  {
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(detail::fnv1a_bytes(payload.data(), payload.size())));
    h["payload_hash"] = hex;
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot open '" + path + "' for writing");
  out << h.dump() << "\n";
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw DataError("checkpoint: write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
  std::string header_line;
  if (!std::getline(in, header_line)) throw DataError("checkpoint: missing header line");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed header: ") + e.what());
  }

  Checkpoint cp;
  try {
    if (h.at("version").get<int>() != 1) throw DataError("checkpoint: unsupported version");
    cp.kind = model_kind_from(h.at("model").at("kind").get<std::string>());
    if (cp.kind == ModelKind::kCosSim) {
      const auto& m = h.at("model").at("cossim");
      cp.cossim.vocab_size = m.at("vocab_size").get<std::size_t>();
      cp.cossim.embed_dim = m.at("embed_dim").get<std::size_t>();
      cp.cossim.hidden_dim = m.at("hidden_dim").get<std::size_t>();
      cp.cossim.max_len = m.at("max_len").get<std::size_t>();
    } else {
      const auto& m = h.at("model").at("duet");
      cp.duet.trigraph_vocab = m.at("trigraph_vocab").get<std::size_t>();
      cp.duet.conv_channels = m.at("conv_channels").get<std::size_t>();
      cp.duet.conv_width = m.at("conv_width").get<std::size_t>();
      cp.duet.query_len = m.at("query_len").get<std::size_t>();
      cp.duet.doc_len = m.at("doc_len").get<std::size_t>();
      cp.duet.hidden_dim = m.at("hidden_dim").get<std::size_t>();
    }
    const auto& d = h.at("discriminator");
    cp.dcfg.num_domains = d.at("num_domains").get<std::size_t>();
    cp.dcfg.hidden_widths = d.at("hidden_widths").get<std::vector<std::size_t>>();
    cp.dcfg.inspected_reps = d.at("inspected_reps").get<std::vector<std::string>>();
    const auto& t = h.at("train");
    cp.tcfg.lambda = t.at("lambda").get<double>();
    cp.tcfg.regime = regime_from(t.at("regime").get<std::string>());
    cp.tcfg.margin = t.at("margin").get<double>();
    cp.tcfg.learning_rate = t.at("learning_rate").get<double>();
    cp.tcfg.batch_size = t.at("batch_size").get<std::size_t>();
    cp.tcfg.max_epochs = t.at("max_epochs").get<std::size_t>();
    cp.tcfg.patience = t.at("patience").get<std::size_t>();
    cp.tcfg.seed = t.at("seed").get<std::uint64_t>();
    cp.tcfg.nll_negatives = t.at("nll_negatives").get<std::size_t>();
    cp.tcfg.target_grad_to_rel = t.at("target_grad_to_rel").get<bool>();
    const auto& r = h.at("regime");
    cp.regime.kind = regime_kind_from(r.at("kind").get<std::string>());
    cp.regime.train_domains = r.at("train_domains").get<std::vector<std::string>>();
    cp.regime.target_domain = r.at("target_domain").get<std::string>();
    cp.regime.equal_sampling = r.at("equal_sampling").get<bool>();
    cp.regime.feed_target_to_disc = r.at("feed_target_to_disc").get<bool>();
    cp.init_seed = h.at("seeds").at("init").get<std::uint64_t>();
    cp.disc_seed = h.at("seeds").at("disc").get<std::uint64_t>();
    cp.sample_seed = h.at("seeds").at("sample").get<std::uint64_t>();
    cp.vocab_tokens = h.at("vocab").get<std::vector<std::string>>();
    cp.epoch = h.at("epoch").get<std::size_t>();
    cp.best_epoch = h.at("best_epoch").get<std::size_t>();
    cp.best_dev_mrr = h.at("best_dev_mrr").get<double>();
    cp.state.next_is_disc_step = h.at("optimizer").at("next_is_disc_step").get<bool>();

    for (const char* group : {"rel", "disc"}) {
      ParamSet& ps = group[0] == 'r' ? cp.state.rel_params : cp.state.disc_params;
      for (const auto& pm : h.at("params").at(group)) {
        Tensor t0 = Tensor::zeros(detail::json_shape(pm.at("shape")));
        ps.add(pm.at("name").get<std::string>(), std::move(t0));
      }
    }

    std::size_t want = h.at("payload_doubles").get<std::size_t>();
    std::vector<unsigned char> payload(want * 8);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (static_cast<std::size_t>(in.gcount()) != payload.size()) {
      throw DataError("checkpoint: payload truncated in '" + path + "'");
    }
    char probe;
    if (in.read(&probe, 1) && in.gcount() == 1) {
      throw DataError("checkpoint: trailing bytes after payload in '" + path + "'");
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(detail::fnv1a_bytes(payload.data(), payload.size())));
    if (h.at("payload_hash").get<std::string>() != hex) {
      throw DataError("checkpoint: payload hash mismatch in '" + path + "'");
    }

    std::size_t off = 0;
    auto take_params = [&](ParamSet& ps) {
      for (std::size_t i = 0; i < ps.size(); ++i) {
        Tensor& tv = ps.at(ps.entry(i).name);
        for (double& v : tv.data) {
          v = detail::read_le(payload.data() + off);
          off += 8;
        }
      }
    };
    auto take_moments = [&](const ParamSet& ps) {
      std::vector<Tensor> ms;
      for (std::size_t i = 0; i < ps.size(); ++i) {
        Tensor tv = Tensor::zeros(ps.entry(i).value.shape);
        for (double& v : tv.data) {
          v = detail::read_le(payload.data() + off);
          off += 8;
        }
        ms.push_back(std::move(tv));
      }
      return ms;
    };
    take_params(cp.state.rel_params);
    auto rel_m = take_moments(cp.state.rel_params);
    auto rel_v = take_moments(cp.state.rel_params);
    take_params(cp.state.disc_params);
    auto disc_m = take_moments(cp.state.disc_params);
    auto disc_v = take_moments(cp.state.disc_params);
    if (off != payload.size()) throw DataError("checkpoint: payload length disagrees with param shapes");

    cp.state.rel_opt = Adam(cp.tcfg.learning_rate);
    cp.state.rel_opt.restore(h.at("optimizer").at("rel_steps").get<std::uint64_t>(), std::move(rel_m),
                             std::move(rel_v));
    cp.state.disc_opt = Adam(cp.tcfg.learning_rate);
    cp.state.disc_opt.restore(h.at("optimizer").at("disc_steps").get<std::uint64_t>(),
                              std::move(disc_m), std::move(disc_v));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad header field: ") + e.what());
  }
  return cp;
}

/// Rebuilds the vocabulary and model context a checkpoint was trained with.
inline Vocabulary checkpoint_vocab(const Checkpoint& cp) {
  return Vocabulary::from_tokens(cp.vocab_tokens);
}

inline ModelContext checkpoint_model(const Checkpoint& cp, const Vocabulary& vocab) {
  if (cp.kind == ModelKind::kCosSim) return ModelContext::make_cossim(cp.cossim);
  return ModelContext::make_duet(cp.duet, vocab);
}

}  // namespace advrank
