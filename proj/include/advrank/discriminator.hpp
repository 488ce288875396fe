#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "advrank/error.hpp"
#include "advrank/graph.hpp"
#include "advrank/models.hpp"
#include "advrank/params.hpp"

namespace advrank {

struct DiscriminatorConfig {
  std::size_t num_domains = 2;
  std::vector<std::size_t> hidden_widths = {32};
  std::vector<std::string> inspected_reps = {"joint"};

  void validate(const std::map<std::string, std::size_t>& rep_widths) const {
    if (num_domains < 2) throw ConfigError("discriminator config: num_domains must be >= 2");
    if (inspected_reps.empty()) throw ConfigError("discriminator config: inspected_reps must be non-empty");
    for (std::size_t w : hidden_widths) {
      if (w == 0) throw ConfigError("discriminator config: hidden widths must be positive");
    }
    for (const std::string& name : inspected_reps) {
      if (!rep_widths.count(name)) {
        std::string have;
        for (const auto& [k, v] : rep_widths) have += (have.empty() ? "" : ", ") + k;
        throw ConfigError("discriminator config: representation '" + name +
                          "' not provided by the model (available: " + have + ")");
      }
    }
  }
};

inline std::size_t discriminator_input_width(const DiscriminatorConfig& cfg,
                                             const std::map<std::string, std::size_t>& rep_widths) {
  cfg.validate(rep_widths);
  std::size_t w = 0;
  for (const std::string& name : cfg.inspected_reps) w += rep_widths.at(name);
  return w;
}

inline ParamSet discriminator_init(const DiscriminatorConfig& cfg, std::size_t input_width,
                                   std::uint64_t seed) {
  if (input_width == 0) throw ConfigError("discriminator: input width must be positive");
  Rng rng(seed);
  ParamSet p;
  std::size_t in = input_width;
  for (std::size_t i = 0; i < cfg.hidden_widths.size(); ++i) {
    std::string base = "disc.h" + std::to_string(i) + ".";
    p.add_weight(base + "w", in, cfg.hidden_widths[i], rng);
    // Hidden biases start slightly positive: a narrow relu layer whose units
    // are all dead at init has zero gradient everywhere and never recovers.
    p.add(base + "b", Tensor({cfg.hidden_widths[i]},
                             std::vector<double>(cfg.hidden_widths[i], 0.1)));
    in = cfg.hidden_widths[i];
  }
  p.add_weight("disc.out.w", in, cfg.num_domains, rng);
  p.add_bias("disc.out.b", cfg.num_domains);
  return p;
}

/// Domain logits from a model's representations. Each inspected rep passes
/// through the reversal layer before the shared MLP, so during backward the
/// confusion gradient reaches the host model negated and scaled by lambda.
inline NodeId discriminate(Graph& g, const BoundParams& disc, const DiscriminatorConfig& cfg,
                           const std::map<std::string, NodeId>& reps, double lambda) {
  std::vector<NodeId> parts;
  parts.reserve(cfg.inspected_reps.size());
  for (const std::string& name : cfg.inspected_reps) {
    auto it = reps.find(name);
    if (it == reps.end()) {
      std::string have;
      for (const auto& [k, v] : reps) have += (have.empty() ? "" : ", ") + k;
      throw ConfigError("discriminate: representation '" + name + "' missing (available: " + have + ")");
    }
    parts.push_back(g.gradient_reverse(it->second, {lambda}));
  }
  NodeId h = parts.size() == 1 ? parts[0] : g.concat(parts);
  for (std::size_t i = 0; i < cfg.hidden_widths.size(); ++i) {
    std::string base = "disc.h" + std::to_string(i) + ".";
    h = g.relu(g.add(g.matmul(h, disc.at(base + "w")), disc.at(base + "b")));
  }
  return g.add(g.matmul(h, disc.at("disc.out.w")), disc.at("disc.out.b"));
}

}  // namespace advrank
