#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "advrank/checkpoint.hpp"
#include "advrank/data.hpp"
#include "advrank/error.hpp"
#include "advrank/metrics.hpp"
#include "advrank/models.hpp"
#include "advrank/retrieval.hpp"
#include "advrank/rng.hpp"
#include "advrank/synth.hpp"
#include "advrank/trainer.hpp"
#include "advrank/vocab.hpp"

namespace advrank {

// ---------------------------------------------------------------------------
// Strict config parsing: every key must be known, wrong types name the key
// ---------------------------------------------------------------------------

namespace cfgdetail {

class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }
  const nlohmann::json& require(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) throw ConfigError(where_ + ": missing required key '" + key + "'");
    used_.insert(key);
    return *it;
  }
  const nlohmann::json* optional(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    used_.insert(key);
    return &(*it);
  }
  /// Call after all keys are consumed; anything left is a typo.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> used_;
};

inline std::size_t get_size(const nlohmann::json& v, const std::string& what) {
  if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
    throw ConfigError(what + ": expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

inline std::uint64_t get_seed(const nlohmann::json& v, const std::string& what) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(what + ": expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline double get_number(const nlohmann::json& v, const std::string& what) {
  if (!v.is_number()) throw ConfigError(what + ": expected a number");
  return v.get<double>();
}

inline bool get_bool(const nlohmann::json& v, const std::string& what) {
  if (!v.is_boolean()) throw ConfigError(what + ": expected a boolean");
  return v.get<bool>();
}

inline std::string get_string(const nlohmann::json& v, const std::string& what) {
  if (!v.is_string()) throw ConfigError(what + ": expected a string");
  return v.get<std::string>();
}

inline std::vector<std::string> get_string_list(const nlohmann::json& v, const std::string& what) {
  if (!v.is_array()) throw ConfigError(what + ": expected an array of strings");
  std::vector<std::string> out;
  for (const auto& e : v) out.push_back(get_string(e, what));
  return out;
}

inline std::vector<std::size_t> get_size_list(const nlohmann::json& v, const std::string& what) {
  if (!v.is_array()) throw ConfigError(what + ": expected an array of integers");
  std::vector<std::size_t> out;
  for (const auto& e : v) out.push_back(get_size(e, what));
  return out;
}

}  // namespace cfgdetail

struct DataSection {
  bool synthetic = false;
  SynthConfig synth;
  std::vector<std::string> paths;
};

struct ModelSection {
  ModelKind kind = ModelKind::kCosSim;
  CosSimConfig cossim;  // vocab_size filled in at run time
  DuetDistConfig duet;
};

namespace cfgdetail {

inline SynthConfig parse_synth(const nlohmann::json& j) {
  StrictObject o(j, "data.synthetic");
  SynthConfig s;
  if (auto* v = o.optional("num_domains")) s.num_domains = get_size(*v, "synthetic.num_domains");
  if (auto* v = o.optional("vocab_shared")) s.vocab_shared = get_size(*v, "synthetic.vocab_shared");
  if (auto* v = o.optional("vocab_per_domain")) {
    s.vocab_per_domain = get_size(*v, "synthetic.vocab_per_domain");
  }
  if (auto* v = o.optional("queries_per_domain")) {
    s.queries_per_domain = get_size(*v, "synthetic.queries_per_domain");
  }
  if (auto* v = o.optional("answers_per_query")) {
    s.answers_per_query = get_size(*v, "synthetic.answers_per_query");
  }
  if (auto* v = o.optional("domain_shift")) s.domain_shift = get_number(*v, "synthetic.domain_shift");
  o.finish();  // the seed always fans out from master_seed, so a "seed" key is a typo
  s.validate();
  return s;
}

inline DataSection parse_data(const nlohmann::json& j, bool allow_synthetic) {
  StrictObject o(j, "data");
  DataSection d;
  const nlohmann::json* synth = allow_synthetic ? o.optional("synthetic") : nullptr;
  const nlohmann::json* paths = o.optional("paths");
  if (synth && paths) throw ConfigError("data: give either 'synthetic' or 'paths', not both");
  if (synth) {
    d.synthetic = true;
    d.synth = parse_synth(*synth);
  } else if (paths) {
    d.paths = get_string_list(*paths, "data.paths");
    if (d.paths.empty()) throw ConfigError("data.paths: must list at least one file");
  } else {
    throw ConfigError(allow_synthetic ? "data: need 'synthetic' or 'paths'" : "data: need 'paths'");
  }
  o.finish();
  return d;
}

inline ModelSection parse_model(const nlohmann::json& j) {
  StrictObject o(j, "model");
  ModelSection m;
  m.kind = model_kind_from(get_string(o.require("kind"), "model.kind"));
  if (m.kind == ModelKind::kCosSim) {
    if (auto* c = o.optional("cossim")) {
      StrictObject oc(*c, "model.cossim");
      if (auto* v = oc.optional("embed_dim")) m.cossim.embed_dim = get_size(*v, "cossim.embed_dim");
      if (auto* v = oc.optional("hidden_dim")) m.cossim.hidden_dim = get_size(*v, "cossim.hidden_dim");
      if (auto* v = oc.optional("max_len")) m.cossim.max_len = get_size(*v, "cossim.max_len");
      oc.finish();
    }
  } else {
    if (auto* c = o.optional("duet")) {
      StrictObject oc(*c, "model.duet");
      if (auto* v = oc.optional("trigraph_vocab")) {
        m.duet.trigraph_vocab = get_size(*v, "duet.trigraph_vocab");
      }
      if (auto* v = oc.optional("conv_channels")) {
        m.duet.conv_channels = get_size(*v, "duet.conv_channels");
      }
      if (auto* v = oc.optional("conv_width")) m.duet.conv_width = get_size(*v, "duet.conv_width");
      if (auto* v = oc.optional("query_len")) m.duet.query_len = get_size(*v, "duet.query_len");
      if (auto* v = oc.optional("doc_len")) m.duet.doc_len = get_size(*v, "duet.doc_len");
      if (auto* v = oc.optional("hidden_dim")) m.duet.hidden_dim = get_size(*v, "duet.hidden_dim");
      oc.finish();
    }
  }
  o.finish();
  return m;
}

/// The train section never carries a seed; all randomness fans out from
/// the config's master_seed.
inline TrainConfig parse_train(const nlohmann::json& j) {
  StrictObject o(j, "train");
  TrainConfig t;
  if (auto* v = o.optional("lambda")) t.lambda = get_number(*v, "train.lambda");
  if (auto* v = o.optional("regime")) t.regime = regime_from(get_string(*v, "train.regime"));
  if (auto* v = o.optional("margin")) t.margin = get_number(*v, "train.margin");
  if (auto* v = o.optional("learning_rate")) t.learning_rate = get_number(*v, "train.learning_rate");
  if (auto* v = o.optional("batch_size")) t.batch_size = get_size(*v, "train.batch_size");
  if (auto* v = o.optional("max_epochs")) t.max_epochs = get_size(*v, "train.max_epochs");
  if (auto* v = o.optional("patience")) t.patience = get_size(*v, "train.patience");
  if (auto* v = o.optional("nll_negatives")) t.nll_negatives = get_size(*v, "train.nll_negatives");
  if (auto* v = o.optional("target_grad_to_rel")) {
    t.target_grad_to_rel = get_bool(*v, "train.target_grad_to_rel");
  }
  o.finish();
  t.validate();
  return t;
}

inline DiscriminatorConfig parse_disc(const nlohmann::json& j) {
  StrictObject o(j, "discriminator");
  DiscriminatorConfig d;
  if (auto* v = o.optional("hidden_widths")) {
    d.hidden_widths = get_size_list(*v, "discriminator.hidden_widths");
  }
  if (auto* v = o.optional("inspected_reps")) {
    d.inspected_reps = get_string_list(*v, "discriminator.inspected_reps");
  }
  o.finish();  // num_domains is derived from the regime, never configured
  return d;
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
}

inline void check_version(StrictObject& o) {
  if (cfgdetail::get_size(o.require("version"), "version") != 1) {
    throw ConfigError("config: unsupported version (expected 1)");
  }
}

inline std::string sanitize_name(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out.empty() ? std::string("_") : out;
}

}  // namespace cfgdetail

// ---------------------------------------------------------------------------
// Per-command configs
// ---------------------------------------------------------------------------

struct GenerateConfig {
  std::uint64_t master_seed = 1;
  std::string output_dir;
  SynthConfig synth;

  static GenerateConfig parse(const nlohmann::json& j) {
    cfgdetail::StrictObject o(j, "config");
    cfgdetail::check_version(o);
    GenerateConfig c;
    c.master_seed = cfgdetail::get_seed(o.require("master_seed"), "master_seed");
    c.output_dir = cfgdetail::get_string(o.require("output_dir"), "output_dir");
    c.synth = cfgdetail::parse_synth(o.require("synthetic"));
    o.finish();
    return c;
  }
};

struct TrainCommandConfig {
  std::uint64_t master_seed = 1;
  std::string output_dir;
  DataSection data;
  ModelSection model;
  TrainConfig train;
  DiscriminatorConfig disc;
  RegimeSpec regime;
  std::size_t pool_k = 10;
  std::size_t vocab_max_size = 0;

  static TrainCommandConfig parse(const nlohmann::json& j) {
    cfgdetail::StrictObject o(j, "config");
    cfgdetail::check_version(o);
    TrainCommandConfig c;
    c.master_seed = cfgdetail::get_seed(o.require("master_seed"), "master_seed");
    c.output_dir = cfgdetail::get_string(o.require("output_dir"), "output_dir");
    c.data = cfgdetail::parse_data(o.require("data"), true);
    c.model = cfgdetail::parse_model(o.require("model"));
    c.train = cfgdetail::parse_train(o.require("train"));
    if (auto* v = o.optional("discriminator")) c.disc = cfgdetail::parse_disc(*v);
    {
      cfgdetail::StrictObject r(o.require("regime"), "regime");
      c.regime.kind = regime_kind_from(cfgdetail::get_string(r.require("kind"), "regime.kind"));
      c.regime.train_domains =
          cfgdetail::get_string_list(r.require("train_domains"), "regime.train_domains");
      std::sort(c.regime.train_domains.begin(), c.regime.train_domains.end());
      c.regime.target_domain =
          cfgdetail::get_string(r.require("target_domain"), "regime.target_domain");
      if (auto* v = r.optional("equal_sampling")) {
        c.regime.equal_sampling = cfgdetail::get_bool(*v, "regime.equal_sampling");
      }
      if (auto* v = r.optional("feed_target_to_disc")) {
        c.regime.feed_target_to_disc = cfgdetail::get_bool(*v, "regime.feed_target_to_disc");
      }
      r.finish();
      c.regime.validate();
    }
    c.pool_k = cfgdetail::get_size(o.require("pool_k"), "pool_k");
    if (c.pool_k == 0) throw ConfigError("pool_k: must be >= 1");
    if (auto* v = o.optional("vocab_max_size")) {
      c.vocab_max_size = cfgdetail::get_size(*v, "vocab_max_size");
    }
    o.finish();
    return c;
  }
};

struct EvalCommandConfig {
  std::string checkpoint;
  std::string output_dir;
  std::vector<std::string> data_paths;
  std::size_t pool_k = 10;
  ReportLabels labels;

  static EvalCommandConfig parse(const nlohmann::json& j) {
    cfgdetail::StrictObject o(j, "config");
    cfgdetail::check_version(o);
    EvalCommandConfig c;
    c.checkpoint = cfgdetail::get_string(o.require("checkpoint"), "checkpoint");
    c.output_dir = cfgdetail::get_string(o.require("output_dir"), "output_dir");
    c.data_paths = cfgdetail::parse_data(o.require("data"), false).paths;
    c.pool_k = cfgdetail::get_size(o.require("pool_k"), "pool_k");
    if (c.pool_k == 0) throw ConfigError("pool_k: must be >= 1");
    if (auto* v = o.optional("labels")) {
      cfgdetail::StrictObject l(*v, "labels");
      if (auto* s = l.optional("source")) c.labels.source = cfgdetail::get_string(*s, "labels.source");
      if (auto* s = l.optional("target")) c.labels.target = cfgdetail::get_string(*s, "labels.target");
      if (auto* s = l.optional("model")) c.labels.model = cfgdetail::get_string(*s, "labels.model");
      if (auto* s = l.optional("variant")) c.labels.variant = cfgdetail::get_string(*s, "labels.variant");
      l.finish();
    }
    o.finish();
    return c;
  }
};

struct ExperimentConfig {
  std::uint64_t master_seed = 1;
  std::string output_dir;
  DataSection data;
  ModelSection model;
  TrainConfig train;  // train.lambda is the adversarial variant's lambda
  DiscriminatorConfig disc;
  RegimeSpec::Kind regime_kind = RegimeSpec::Kind::kCrossTopic;
  bool equal_sampling = true;
  bool feed_target_to_disc = false;
  std::vector<std::string> targets;
  std::size_t pool_k = 10;
  std::size_t vocab_max_size = 0;

  static ExperimentConfig parse(const nlohmann::json& j) {
    cfgdetail::StrictObject o(j, "config");
    cfgdetail::check_version(o);
    ExperimentConfig c;
    c.master_seed = cfgdetail::get_seed(o.require("master_seed"), "master_seed");
    c.output_dir = cfgdetail::get_string(o.require("output_dir"), "output_dir");
    c.data = cfgdetail::parse_data(o.require("data"), true);
    c.model = cfgdetail::parse_model(o.require("model"));
    c.train = cfgdetail::parse_train(o.require("train"));
    if (c.train.lambda <= 0.0) {
      throw ConfigError("train.lambda: the adversarial variant needs a positive lambda");
    }
    if (auto* v = o.optional("discriminator")) c.disc = cfgdetail::parse_disc(*v);
    {
      cfgdetail::StrictObject r(o.require("regime"), "regime");
      c.regime_kind = regime_kind_from(cfgdetail::get_string(r.require("kind"), "regime.kind"));
      if (auto* v = r.optional("equal_sampling")) {
        c.equal_sampling = cfgdetail::get_bool(*v, "regime.equal_sampling");
      }
      if (auto* v = r.optional("feed_target_to_disc")) {
        c.feed_target_to_disc = cfgdetail::get_bool(*v, "regime.feed_target_to_disc");
      }
      r.finish();
    }
    c.targets = cfgdetail::get_string_list(o.require("targets"), "targets");
    if (c.targets.empty()) throw ConfigError("targets: must name at least one held-out domain");
    {
      std::set<std::string> seen;
      for (const std::string& t : c.targets) {
        if (!seen.insert(t).second) throw ConfigError("targets: duplicate entry '" + t + "'");
      }
    }
    c.pool_k = cfgdetail::get_size(o.require("pool_k"), "pool_k");
    if (c.pool_k == 0) throw ConfigError("pool_k: must be >= 1");
    if (auto* v = o.optional("vocab_max_size")) {
      c.vocab_max_size = cfgdetail::get_size(*v, "vocab_max_size");
    }
    o.finish();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Loads and concatenates JSONL files, rejecting (collection, qid, aid)
/// duplicates across files as well as within one.
inline std::vector<Example> load_examples(const std::vector<std::string>& paths) {
  std::vector<Example> all;
  std::set<std::string> keys;
  for (const std::string& p : paths) {
    for (Example& e : load_jsonl(p)) {
      std::string key = e.collection + "\x1f" + e.qid + "\x1f" + e.aid;
      if (!keys.insert(key).second) {
        throw DataError("dataset: duplicate example (" + e.collection + ", " + e.qid + ", " + e.aid +
                        ") across input files");
      }
      all.push_back(std::move(e));
    }
  }
  return all;
}

inline std::vector<Example> materialize_examples(const DataSection& data, std::uint64_t master_seed) {
  if (data.synthetic) {
    SynthConfig s = data.synth;
    s.seed = mix_seed(master_seed, "synth");
    return generate_synthetic(s);
  }
  return load_examples(data.paths);
}

inline Vocabulary build_vocabulary(const std::vector<Example>& examples, std::size_t max_size) {
  std::vector<std::string> texts;
  texts.reserve(examples.size() * 2);
  for (const Example& e : examples) {
    texts.push_back(e.query);
    texts.push_back(e.answer);
  }
  return Vocabulary::build(texts, max_size);
}

inline ModelContext make_model_context(const ModelSection& m, const Vocabulary& vocab) {
  if (m.kind == ModelKind::kCosSim) {
    CosSimConfig c = m.cossim;
    c.vocab_size = vocab.tokens().size();
    return ModelContext::make_cossim(c);
  }
  return ModelContext::make_duet(m.duet, vocab);
}

namespace detail {

inline nlohmann::ordered_json epoch_record_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["dev_p1"] = r.dev_p1;
  j["dev_mrr"] = r.dev_mrr;
  j["disc_acc"] = r.disc_acc;
  j["rel_triples"] = r.rel_triples;
  j["disc_only_triples"] = r.disc_only_triples;
  j["skipped_queries"] = r.skipped_queries;
  return j;
}

inline nlohmann::ordered_json run_header_json(const RegimeSpec& regime, const ModelKind kind,
                                              const TrainConfig& tcfg, std::uint64_t master_seed) {
  nlohmann::ordered_json j;
  j["run"] = "train";
  j["model"] = model_kind_name(kind);
  j["lambda"] = tcfg.lambda;
  j["regime"] = regime_name(tcfg.regime);
  j["holdout_kind"] = regime_kind_name(regime.kind);
  j["train_domains"] = regime.train_domains;
  j["target_domain"] = regime.target_domain;
  j["feed_target_to_disc"] = regime.feed_target_to_disc;
  j["master_seed"] = master_seed;
  return j;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw DataError("write to '" + path + "' failed");
}

inline std::vector<Example> domain_slice(const std::vector<Example>& examples,
                                         const RegimeSpec& regime, bool train_side) {
  std::vector<Example> out;
  for (const Example& e : examples) {
    const std::string& d = regime.domain_of(e);
    bool in_train = regime.is_train_domain(d);
    bool is_target = d == regime.target_domain;
    if (train_side ? in_train : is_target) out.push_back(e);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Command drivers
// ---------------------------------------------------------------------------

struct GenerateOutputs {
  std::string dataset_path;
  std::string manifest_path;
};

inline GenerateOutputs run_generate(const GenerateConfig& cfg) {
  SynthConfig s = cfg.synth;
  s.seed = mix_seed(cfg.master_seed, "synth");
  std::vector<Example> examples = generate_synthetic(s);
  std::filesystem::create_directories(cfg.output_dir);
  GenerateOutputs out;
  out.dataset_path = cfg.output_dir + "/synthetic.jsonl";
  out.manifest_path = cfg.output_dir + "/manifest.json";
  save_jsonl(out.dataset_path, examples);
  detail::write_text_file(out.manifest_path, synth_manifest(s, examples).dump(2) + "\n");
  return out;
}

struct TrainOutputs {
  std::string checkpoint_path;
  std::string log_path;
  std::string dev_path;
  FitOutcome outcome;
};

inline TrainOutputs run_train(const TrainCommandConfig& cfg, bool resume = false) {
  std::vector<Example> examples = materialize_examples(cfg.data, cfg.master_seed);
  std::filesystem::create_directories(cfg.output_dir);
  TrainOutputs out;
  out.checkpoint_path = cfg.output_dir + "/checkpoint.ckpt";
  out.log_path = cfg.output_dir + "/train_log.jsonl";
  out.dev_path = cfg.output_dir + "/dev.jsonl";

  Vocabulary vocab;
  const TrainState* resume_state = nullptr;
  std::size_t start_epoch = 0;
  Checkpoint prev;
  if (resume) {
    prev = load_checkpoint(out.checkpoint_path);
    if (prev.kind != cfg.model.kind) {
      throw ConfigError("resume: checkpoint model kind does not match the config");
    }
    if (prev.epoch >= cfg.train.max_epochs) {
      throw ConfigError("resume: checkpoint already completed max_epochs");
    }
    vocab = checkpoint_vocab(prev);
    resume_state = &prev.state;
    start_epoch = prev.epoch;
  } else {
    vocab = build_vocabulary(examples, cfg.vocab_max_size);
  }
  ModelContext mctx = make_model_context(cfg.model, vocab);

  std::vector<Example> train_side = detail::domain_slice(examples, cfg.regime, true);
  if (train_side.empty()) throw DataError("train: no examples from the training domains");
  DatasetSplits splits = split_80_10_10(train_side, mix_seed(cfg.master_seed, "split"));
  std::vector<Example> feed;
  if (cfg.regime.feed_target_to_disc) feed = detail::domain_slice(examples, cfg.regime, false);

  FitSpec spec;
  spec.regime = cfg.regime;
  spec.dcfg = cfg.disc;
  spec.dcfg.num_domains = cfg.regime.num_domains();
  spec.tcfg = cfg.train;
  spec.tcfg.seed = cfg.master_seed;
  spec.init_seed = mix_seed(cfg.master_seed, "init");
  spec.disc_seed = mix_seed(cfg.master_seed, "disc");
  spec.sample_seed = mix_seed(cfg.master_seed, "sample");
  spec.dev_pool_k = cfg.pool_k;
  out.outcome = fit(splits, feed, mctx, spec, vocab, resume_state, start_epoch);

  save_jsonl(cfg.output_dir + "/train.jsonl", splits.train);
  save_jsonl(out.dev_path, splits.dev);
  save_jsonl(cfg.output_dir + "/test.jsonl", splits.test);

  Checkpoint cp;
  cp.kind = cfg.model.kind;
  cp.cossim = mctx.cossim;
  cp.duet = mctx.duet;
  cp.dcfg = spec.dcfg;
  cp.tcfg = spec.tcfg;
  cp.regime = cfg.regime;
  cp.init_seed = spec.init_seed;
  cp.disc_seed = spec.disc_seed;
  cp.sample_seed = spec.sample_seed;
  cp.vocab_tokens = vocab.tokens();
  cp.state = out.outcome.best;
  cp.epoch = out.outcome.epochs_run;
  cp.best_epoch = out.outcome.best_epoch;
  cp.best_dev_mrr = out.outcome.best_dev_mrr;
  save_checkpoint(out.checkpoint_path, cp);

  std::ofstream log(out.log_path, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot open '" + out.log_path + "' for writing");
  log << detail::run_header_json(cfg.regime, cfg.model.kind, spec.tcfg, cfg.master_seed).dump() << "\n";
  for (const EpochRecord& r : out.outcome.log) log << detail::epoch_record_json(r).dump() << "\n";
  return out;
}

struct EvalOutputs {
  std::string report_json_path;
  std::string report_text_path;
  std::string comparison_json_path;  // empty unless a baseline was given
  std::string comparison_text_path;
  MetricsReport report;
};

inline EvalOutputs run_eval(const EvalCommandConfig& cfg, const std::string& compare_path = "") {
  Checkpoint cp = load_checkpoint(cfg.checkpoint);
  Vocabulary vocab = checkpoint_vocab(cp);
  ModelContext mctx = checkpoint_model(cp, vocab);
  std::vector<Example> examples = load_examples(cfg.data_paths);

  EvalOutputs out;
  out.report = evaluate_model(examples, cfg.pool_k, mctx, cp.state.rel_params, vocab);
  std::filesystem::create_directories(cfg.output_dir);
  out.report_json_path = cfg.output_dir + "/eval_report.json";
  out.report_text_path = cfg.output_dir + "/eval_report.txt";
  detail::write_text_file(out.report_json_path, metrics_report_to_json(out.report).dump(2) + "\n");
  {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "P@1       " << out.report.p_at_1 << "\n"
       << "MRR       " << out.report.mrr << "\n"
       << "queries   " << out.report.n_queries << "\n"
       << "excluded  " << out.report.n_excluded << "\n";
    detail::write_text_file(out.report_text_path, os.str());
  }

  if (!compare_path.empty()) {
    std::ifstream in(compare_path);
    if (!in) throw DataError("compare: cannot open '" + compare_path + "'");
    nlohmann::json bj;
    try {
      bj = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("compare: malformed baseline report: ") + e.what());
    }
    MetricsReport baseline = metrics_report_from_json(bj);
    nlohmann::ordered_json row = emit_report(cfg.labels, baseline, out.report);
    out.comparison_json_path = cfg.output_dir + "/comparison.json";
    out.comparison_text_path = cfg.output_dir + "/comparison.txt";
    detail::write_text_file(out.comparison_json_path, row.dump(2) + "\n");
    detail::write_text_file(out.comparison_text_path, render_report_table({row}));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full cross-domain matrix
// ---------------------------------------------------------------------------

struct ExperimentOutputs {
  std::string report_json_path;
  std::string report_text_path;
  std::vector<nlohmann::ordered_json> rows;
};

namespace detail {

inline std::size_t experiment_threads() {
  const char* env = std::getenv("ADVRANK_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  long v = std::strtol(env, &end, 10);
  if (!end || *end != '\0' || v < 1) {
    throw ConfigError("ADVRANK_THREADS: expected a positive integer");
  }
  return static_cast<std::size_t>(v);
}

/// Rethrows with the failing target named, preserving the error type so
/// exit codes stay faithful.
template <typename Fn>
auto with_target_context(const std::string& target, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError("target '" + target + "': " + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError("target '" + target + "': " + e.what());
  } catch (const NumericError& e) {
    throw NumericError("target '" + target + "': " + e.what());
  } catch (const DataError& e) {
    throw DataError("target '" + target + "': " + e.what());
  } catch (const Error& e) {
    throw Error("target '" + target + "': " + e.what());
  }
}

}  // namespace detail

inline ExperimentOutputs run_experiment(const ExperimentConfig& cfg) {
  std::vector<Example> examples = materialize_examples(cfg.data, cfg.master_seed);
  Vocabulary vocab = build_vocabulary(examples, cfg.vocab_max_size);
  std::filesystem::create_directories(cfg.output_dir);

  std::set<std::string> domains;
  {
    RegimeSpec probe;
    probe.kind = cfg.regime_kind;
    for (const Example& e : examples) domains.insert(probe.domain_of(e));
  }
  for (const std::string& t : cfg.targets) {
    if (!domains.count(t)) {
      throw ConfigError("targets: '" + t + "' does not appear in the data (holdout kind " +
                        std::string(regime_kind_name(cfg.regime_kind)) + ")");
    }
  }

  ModelContext mctx = make_model_context(cfg.model, vocab);

  struct Cell {
    std::string target;
    bool adversarial;
  };
  std::vector<Cell> cells;
  for (const std::string& t : cfg.targets) {
    cells.push_back({t, false});
    cells.push_back({t, true});
  }

  std::vector<MetricsReport> cell_reports(cells.size());
  std::vector<std::exception_ptr> cell_errors(cells.size());

  auto run_cell = [&](std::size_t idx) {
    const Cell& cell = cells[idx];
    detail::with_target_context(cell.target, [&] {
      RegimeSpec regime;
      regime.kind = cfg.regime_kind;
      regime.equal_sampling = cfg.equal_sampling;
      regime.feed_target_to_disc = cfg.feed_target_to_disc;
      regime.target_domain = cell.target;
      for (const std::string& d : domains) {
        if (d != cell.target) regime.train_domains.push_back(d);
      }
      regime.validate();

      std::vector<Example> train_side = detail::domain_slice(examples, regime, true);
      std::vector<Example> target_side = detail::domain_slice(examples, regime, false);
      if (train_side.empty() || target_side.empty()) {
        throw DataError("experiment: a domain slice is empty");
      }
      DatasetSplits splits = split_80_10_10(train_side, mix_seed(cfg.master_seed, "split"));

      FitSpec spec;
      spec.regime = regime;
      spec.dcfg = cfg.disc;
      spec.dcfg.num_domains = regime.num_domains();
      spec.tcfg = cfg.train;
      spec.tcfg.lambda = cell.adversarial ? cfg.train.lambda : 0.0;
      spec.tcfg.seed = cfg.master_seed;
      spec.init_seed = mix_seed(cfg.master_seed, "init:" + cell.target);
      spec.disc_seed = mix_seed(cfg.master_seed, "disc:" + cell.target);
      spec.sample_seed = mix_seed(cfg.master_seed, "sample:" + cell.target);
      spec.dev_pool_k = cfg.pool_k;
      std::vector<Example> feed;
      if (regime.feed_target_to_disc) feed = target_side;

      FitOutcome outcome = fit(splits, feed, mctx, spec, vocab);
      MetricsReport rep =
          evaluate_model(target_side, cfg.pool_k, mctx, outcome.best.rel_params, vocab);

      std::string stem = cfg.output_dir + "/" + cfgdetail::sanitize_name(cell.target) +
                         (cell.adversarial ? "_adv" : "_base");
      Checkpoint cp;
      cp.kind = cfg.model.kind;
      cp.cossim = mctx.cossim;
      cp.duet = mctx.duet;
      cp.dcfg = spec.dcfg;
      cp.tcfg = spec.tcfg;
      cp.regime = regime;
      cp.init_seed = spec.init_seed;
      cp.disc_seed = spec.disc_seed;
      cp.sample_seed = spec.sample_seed;
      cp.vocab_tokens = vocab.tokens();
      cp.state = outcome.best;
      cp.epoch = outcome.epochs_run;
      cp.best_epoch = outcome.best_epoch;
      cp.best_dev_mrr = outcome.best_dev_mrr;
      save_checkpoint(stem + ".ckpt", cp);

      std::ofstream log(stem + ".log.jsonl", std::ios::trunc);
      if (!log) throw DataError("cannot open '" + stem + ".log.jsonl' for writing");
      log << detail::run_header_json(regime, cfg.model.kind, spec.tcfg, cfg.master_seed).dump()
          << "\n";
      for (const EpochRecord& r : outcome.log) log << detail::epoch_record_json(r).dump() << "\n";

      detail::write_text_file(stem + ".metrics.json", metrics_report_to_json(rep).dump(2) + "\n");
      cell_reports[idx] = std::move(rep);
    });
  };

  std::size_t n_threads = std::min(detail::experiment_threads(), cells.size());
  if (n_threads <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::vector<std::thread> workers;
    std::atomic<std::size_t> next{0};
    for (std::size_t w = 0; w < n_threads; ++w) {
      workers.emplace_back([&] {
        while (true) {
          std::size_t i = next.fetch_add(1);
          if (i >= cells.size()) break;
          try {
            run_cell(i);
          } catch (...) {
            cell_errors[i] = std::current_exception();
          }
        }
      });
    }
    for (std::thread& t : workers) t.join();
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cell_errors[i]) std::rethrow_exception(cell_errors[i]);
    }
  }

  ExperimentOutputs out;
  for (std::size_t c = 0; c + 1 < cells.size(); c += 2) {
    const std::string& target = cells[c].target;
    ReportLabels labels;
    {
      std::string source;
      for (const std::string& d : domains) {
        if (d == target) continue;
        if (!source.empty()) source += "+";
        source += d;
      }
      labels.source = source;
    }
    labels.target = target;
    labels.model = model_kind_name(cfg.model.kind);
    labels.variant = "base";
    out.rows.push_back(report_row(labels, cell_reports[c]));
    labels.variant = "adv";
    out.rows.push_back(emit_report(labels, cell_reports[c], cell_reports[c + 1]));
  }

  out.report_json_path = cfg.output_dir + "/report.json";
  out.report_text_path = cfg.output_dir + "/report.txt";
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : out.rows) arr.push_back(r);
  detail::write_text_file(out.report_json_path, arr.dump(2) + "\n");
  detail::write_text_file(out.report_text_path, render_report_table(out.rows));
  return out;
}

}  // namespace advrank
