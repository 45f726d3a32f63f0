#pragma once
//------------------------------------------------------------------------------
//
//   Copyright 2026 The ocarlab Authors
//
//   Licensed under the Apache License, Version 2.0 (the "License");
//   you may not use this file except in compliance with the License.
//   You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
//   Unless required by applicable law or agreed to in writing, software
//   distributed under the License is distributed on an "AS IS" BASIS,
//   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
//   See the License for the specific language governing permissions and
//   limitations under the License.
//
//------------------------------------------------------------------------------

// Experiment runner: builds a stream from a config, trains every configured
// strategy for every seed and writes the per-run artifacts
//
//   <out>/<strategy>/seed_<n>/
//       config.ini         verbatim copy of the config
//       inputs.sha1        git blob hashes of the config and dataset files
//       accuracy.csv       full accuracy matrix (classification streams)
//       losses.csv         cumulative L_p / L_s (regression streams)
//       diagnostics.jsonl  one line per inner step
//       metrics.json       scalar metrics of the run
//       snapshots/         parameter snapshots when trajectories are enabled
//       FAILED             present only when the run aborted numerically
//   <out>/summary.json     mean and std over seeds per strategy

#include "ocarlab/config.hpp"
#include "ocarlab/metrics.hpp"
#include "ocarlab/replay.hpp"
#include "ocarlab/snapshot.hpp"
#include "ocarlab/strategies.hpp"
#include "ocarlab/streams.hpp"
#include "ocarlab/trajectory.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace ocar::experiment {

using strategies::HyperParams;
using strategies::StrategyKind;

inline constexpr const char* kDataRootEnv = "OCAR_DATA_ROOT";

enum class StreamKind { Linear, ClassIncremental, Rotation };
enum class DatasetKind { Mnist, Blobs };

struct StreamConfig {
  StreamKind kind = StreamKind::ClassIncremental;
  DatasetKind dataset = DatasetKind::Blobs;
  std::string data_dir;  // relative paths resolve against $OCAR_DATA_ROOT
  int tasks = 5;
  int classes_per_task = 2;
  double max_angle = 90.0;
  int pool = 1;
  double eval_fraction = 0.1;
  int per_class_limit = 0;  // 0 keeps every example
  int through_task = 0;     // train on the first K tasks only; 0 keeps all
  int blobs_classes = 10;
  int blobs_per_class = 200;
  int blobs_dim = 20;
  double blobs_separation = 4.0;
  std::uint64_t dataset_seed = 0;
  /// Pins the task stream (split, class order, generated tasks) across run
  /// seeds; negative derives it from each run seed.
  std::int64_t stream_seed = -1;
  streams::LinearStreamConfig linear;
};

struct ModelConfig {
  std::vector<Eigen::Index> hidden{100, 100};
  bool grow_classifier = true;
  bool zero_init = false;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::vector<StrategyKind> strategies{StrategyKind::OCAR};
  HyperParams hp;
  std::map<StrategyKind, HyperParams> overrides;
  StreamConfig stream;
  ModelConfig model;
  std::vector<std::uint64_t> seeds{0};
  int buffer_capacity = 100;
  int eval_every = 10;
  int snapshot_every = 10;
  bool trajectory = false;
  bool probe = false;
  std::vector<double> grid_alphas;
  std::vector<double> grid_ratios;
  std::string source_text;
  std::string source_name = "<config>";

  [[nodiscard]] HyperParams params_for(StrategyKind k) const {
    const auto it = overrides.find(k);
    return it == overrides.end() ? hp : it->second;
  }
  [[nodiscard]] bool regression() const { return stream.kind == StreamKind::Linear; }
};

// ---------------------------------------------------------------- parsing

inline StrategyKind parse_strategy(const std::string& s) {
  if (s == "er") return StrategyKind::ER;
  if (s == "ocar") return StrategyKind::OCAR;
  if (s == "ewc") return StrategyKind::EWC;
  if (s == "ngd") return StrategyKind::NGD;
  throw Error(ErrorKind::ConfigError, "unknown strategy '" + s + "'");
}

namespace detail {

inline HyperParams read_hyper(const config::Document& doc, const std::string& sec, HyperParams hp) {
  const auto key = [&](const char* k) { return sec + "." + k; };
  hp.alpha = doc.get_double(key("alpha"), hp.alpha);
  hp.delta_tau = doc.get_double(key("delta_tau"), hp.delta_tau);
  hp.delta_lambda = doc.get_double(key("delta_lambda"), hp.delta_lambda);
  hp.ema_coeff = doc.get_double(key("ema"), hp.ema_coeff);
  hp.inner_steps = static_cast<int>(doc.get_int(key("inner_steps"), hp.inner_steps));
  hp.new_batch_size = static_cast<int>(doc.get_int(key("new_batch"), hp.new_batch_size));
  hp.buffer_batch_size = static_cast<int>(doc.get_int(key("buffer_batch"), hp.buffer_batch_size));
  if (doc.has(key("lambda_mode"))) {
    const auto m = doc.get_string(key("lambda_mode"), "");
    if (m == "class_ratio") hp.lambda_mode = strategies::LambdaMode::ClassRatio;
    else if (m == "time_growth") hp.lambda_mode = strategies::LambdaMode::TimeGrowth;
    else if (m == "fixed") hp.lambda_mode = strategies::LambdaMode::Fixed;
    else doc.field_error(key("lambda_mode"), "expected class_ratio, time_growth or fixed");
  }
  hp.lambda_fixed = doc.get_double(key("lambda"), hp.lambda_fixed);
  hp.classes_per_task = static_cast<int>(doc.get_int(key("classes_per_task"), hp.classes_per_task));
  hp.tau_init = doc.get_double(key("tau_init"), hp.tau_init);
  hp.fisher_samples = static_cast<int>(doc.get_int(key("fisher_samples"), hp.fisher_samples));
  hp.identity_factors = doc.get_bool(key("identity_factors"), hp.identity_factors);
  hp.ewc_penalty = doc.get_double(key("ewc_penalty"), hp.ewc_penalty);
  hp.ewc_ema = doc.get_double(key("ewc_ema"), hp.ewc_ema);
  hp.ngd_damping = doc.get_double(key("ngd_damping"), hp.ngd_damping);
  hp.ngd_ema = doc.get_double(key("ngd_ema"), hp.ngd_ema);
  hp.ngd_dense = doc.get_bool(key("ngd_dense"), hp.ngd_dense);
  try {
    hp.validate();
  } catch (const Error& e) {
    doc.field_error(sec, e.what());
  }
  return hp;
}

inline void positive(const config::Document& doc, const std::string& key, double v) {
  if (!(v > 0.0)) doc.field_error(key, "must be > 0");
}

}  // namespace detail

inline ExperimentConfig from_document(const config::Document& doc) {
  ExperimentConfig cfg;
  cfg.name = doc.get_string("experiment.name", cfg.name);
  if (doc.has("experiment.strategies")) {
    cfg.strategies.clear();
    for (const auto& s : doc.get_list("experiment.strategies")) {
      try {
        cfg.strategies.push_back(parse_strategy(s));
      } catch (const Error& e) {
        doc.field_error("experiment.strategies", e.what());
      }
    }
    if (cfg.strategies.empty()) doc.field_error("experiment.strategies", "no strategies listed");
  }
  if (doc.has("experiment.seeds")) {
    cfg.seeds.clear();
    for (auto s : doc.get_ints("experiment.seeds")) {
      if (s < 0) doc.field_error("experiment.seeds", "seeds must be >= 0");
      cfg.seeds.push_back(static_cast<std::uint64_t>(s));
    }
    if (cfg.seeds.empty()) doc.field_error("experiment.seeds", "seed list is empty");
  }
  cfg.buffer_capacity = static_cast<int>(doc.get_int("experiment.buffer_capacity", cfg.buffer_capacity));
  if (cfg.buffer_capacity < 0) doc.field_error("experiment.buffer_capacity", "must be >= 0");
  cfg.eval_every = static_cast<int>(doc.get_int("experiment.eval_every", cfg.eval_every));
  if (cfg.eval_every < 1) doc.field_error("experiment.eval_every", "must be >= 1");
  cfg.snapshot_every = static_cast<int>(doc.get_int("experiment.snapshot_every", cfg.snapshot_every));
  if (cfg.snapshot_every < 1) doc.field_error("experiment.snapshot_every", "must be >= 1");
  cfg.trajectory = doc.get_bool("experiment.trajectory", cfg.trajectory);
  cfg.probe = doc.get_bool("experiment.probe", cfg.probe);

  auto& st = cfg.stream;
  const auto kind = doc.get_string("stream.kind", "class_incremental");
  if (kind == "linear") st.kind = StreamKind::Linear;
  else if (kind == "class_incremental") st.kind = StreamKind::ClassIncremental;
  else if (kind == "rotation") st.kind = StreamKind::Rotation;
  else doc.field_error("stream.kind", "expected linear, class_incremental or rotation");
  const auto ds = doc.get_string("stream.dataset", "blobs");
  if (ds == "mnist") st.dataset = DatasetKind::Mnist;
  else if (ds == "blobs") st.dataset = DatasetKind::Blobs;
  else doc.field_error("stream.dataset", "expected mnist or blobs");
  st.data_dir = doc.get_string("stream.data_dir", st.data_dir);
  st.tasks = static_cast<int>(doc.get_int("stream.tasks", st.tasks));
  st.classes_per_task = static_cast<int>(doc.get_int("stream.classes_per_task", st.classes_per_task));
  st.max_angle = doc.get_double("stream.max_angle", st.max_angle);
  st.pool = static_cast<int>(doc.get_int("stream.pool", st.pool));
  st.eval_fraction = doc.get_double("stream.eval_fraction", st.eval_fraction);
  st.per_class_limit = static_cast<int>(doc.get_int("stream.per_class_limit", st.per_class_limit));
  st.through_task = static_cast<int>(doc.get_int("stream.through_task", st.through_task));
  st.blobs_classes = static_cast<int>(doc.get_int("stream.blobs_classes", st.blobs_classes));
  st.blobs_per_class = static_cast<int>(doc.get_int("stream.blobs_per_class", st.blobs_per_class));
  st.blobs_dim = static_cast<int>(doc.get_int("stream.blobs_dim", st.blobs_dim));
  st.blobs_separation = doc.get_double("stream.blobs_separation", st.blobs_separation);
  st.dataset_seed = static_cast<std::uint64_t>(doc.get_int("stream.dataset_seed", 0));
  st.stream_seed = doc.get_int("stream.stream_seed", st.stream_seed);
  st.linear.tasks = static_cast<int>(doc.get_int("stream.linear_tasks", st.linear.tasks));
  st.linear.train_per_task = static_cast<int>(doc.get_int("stream.train_per_task", st.linear.train_per_task));
  st.linear.eval_per_task = static_cast<int>(doc.get_int("stream.eval_per_task", st.linear.eval_per_task));
  st.linear.dim = static_cast<int>(doc.get_int("stream.dim", st.linear.dim));
  st.linear.noise_variance = doc.get_double("stream.noise_variance", st.linear.noise_variance);
  st.linear.min_eigenvalue = doc.get_double("stream.min_eigenvalue", st.linear.min_eigenvalue);
  st.linear.max_eigenvalue = doc.get_double("stream.max_eigenvalue", st.linear.max_eigenvalue);
  if (st.tasks < 1) doc.field_error("stream.tasks", "must be >= 1");
  if (st.classes_per_task < 1) doc.field_error("stream.classes_per_task", "must be >= 1");
  if (st.pool < 1) doc.field_error("stream.pool", "must be >= 1");
  if (!(st.eval_fraction > 0.0 && st.eval_fraction < 1.0)) doc.field_error("stream.eval_fraction", "must be in (0, 1)");
  if (st.through_task < 0) doc.field_error("stream.through_task", "must be >= 0");
  detail::positive(doc, "stream.min_eigenvalue", st.linear.min_eigenvalue);
  if (st.linear.max_eigenvalue < st.linear.min_eigenvalue) doc.field_error("stream.max_eigenvalue", "below min_eigenvalue");

  if (doc.has("model.hidden")) {
    cfg.model.hidden.clear();
    for (auto h : doc.get_ints("model.hidden")) {
      if (h < 1) doc.field_error("model.hidden", "layer widths must be >= 1");
      cfg.model.hidden.push_back(static_cast<Eigen::Index>(h));
    }
  }
  cfg.model.grow_classifier = doc.get_bool("model.grow_classifier", cfg.model.grow_classifier);
  const auto init = doc.get_string("model.init", "random");
  if (init == "zero") cfg.model.zero_init = true;
  else if (init != "random") doc.field_error("model.init", "expected random or zero");
  if (cfg.model.zero_init && !cfg.model.hidden.empty()) doc.field_error("model.init", "zero init needs a linear model");

  cfg.hp = detail::read_hyper(doc, "hyper", cfg.hp);
  const auto pending = doc.unused_keys();
  for (auto k : {StrategyKind::ER, StrategyKind::OCAR, StrategyKind::EWC, StrategyKind::NGD}) {
    const std::string prefix = strategies::to_string(k) + ".";
    if (std::any_of(pending.begin(), pending.end(), [&](const auto& u) { return u.rfind(prefix, 0) == 0; }))
      cfg.overrides[k] = detail::read_hyper(doc, strategies::to_string(k), cfg.hp);
  }
  cfg.grid_alphas = doc.get_doubles("grid.alphas");
  cfg.grid_ratios = doc.get_doubles("grid.ratios");
  doc.reject_unused();
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
  auto cfg = from_document(config::Document::parse(text, origin));
  cfg.source_text = text;
  cfg.source_name = origin;
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::ConfigError, "cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.string());
}

// ---------------------------------------------------------------- hashing

/// SHA-1 over "blob <size>\0<content>", i.e. what `git hash-object` prints.
inline std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) fail(ErrorKind::IoError, "cannot open " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- data

inline std::filesystem::path resolve_data_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv(kDataRootEnv); root && *root) return std::filesystem::path(root) / p;
  return p;
}

/// Labeled dataset plus the files it came from (for the inputs hash).
struct LoadedData {
  streams::LabeledDataset dataset;
  std::vector<std::filesystem::path> files;
};

inline streams::LabeledDataset limit_per_class(const streams::LabeledDataset& ds, int limit) {
  if (limit <= 0) return ds;
  std::vector<int> taken(static_cast<std::size_t>(ds.num_classes()), 0);
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    auto& t = taken[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])];
    if (t < limit) {
      ++t;
      rows.push_back(i);
    }
  }
  streams::LabeledDataset out;
  out.image_side = ds.image_side;
  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), ds.inputs.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.inputs.row(static_cast<Eigen::Index>(r)) = ds.inputs.row(rows[r]);
    out.labels.push_back(ds.labels[static_cast<std::size_t>(rows[r])]);
  }
  return out;
}

inline LoadedData load_data(const StreamConfig& st) {
  LoadedData out;
  if (st.kind == StreamKind::Linear) return out;
  if (st.dataset == DatasetKind::Mnist) {
    const auto dir = resolve_data_dir(st.data_dir);
    require(std::filesystem::is_directory(dir), ErrorKind::IoError,
            "dataset directory " + dir.string() + " not found (relative paths resolve against $" + kDataRootEnv + ")");
    out.dataset = streams::load_mnist(dir);
    for (const char* f : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                          "t10k-labels-idx1-ubyte"})
      if (std::filesystem::exists(dir / f)) out.files.push_back(dir / f);
    out.dataset = streams::pool_images(out.dataset, st.pool);
  } else {
    out.dataset = streams::make_gaussian_blobs(st.blobs_classes, st.blobs_per_class, st.blobs_dim, st.blobs_separation,
                                               st.dataset_seed);
  }
  out.dataset = limit_per_class(out.dataset, st.per_class_limit);
  return out;
}

/// Independent per-purpose seeds derived from the run seed (splitmix64).
enum class SeedPurpose : std::uint64_t { Stream = 1, Order = 2, Buffer = 3, Fisher = 4, Init = 5 };

inline std::uint64_t derive_seed(std::uint64_t seed, SeedPurpose purpose) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(purpose) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::vector<streams::TaskSpec> build_tasks(const StreamConfig& st, const LoadedData& data, std::uint64_t seed) {
  std::vector<streams::TaskSpec> tasks;
  const auto s = derive_seed(st.stream_seed >= 0 ? static_cast<std::uint64_t>(st.stream_seed) : seed, SeedPurpose::Stream);
  switch (st.kind) {
    case StreamKind::Linear: tasks = streams::gen_linear_stream(s, st.linear); break;
    case StreamKind::ClassIncremental:
      tasks = streams::gen_class_incremental(data.dataset, st.tasks, st.classes_per_task, s, st.eval_fraction);
      break;
    case StreamKind::Rotation:
      tasks = streams::gen_rotation_stream(data.dataset, st.tasks, st.max_angle, s, st.eval_fraction);
      break;
  }
  if (st.through_task > 0 && static_cast<std::size_t>(st.through_task) < tasks.size()) tasks.resize(st.through_task);
  return tasks;
}

inline int count_classes(const std::vector<streams::TaskSpec>& tasks) {
  int m = -1;
  for (const auto& t : tasks)
    for (const auto& e : t.train) m = std::max(m, e.label);
  return m + 1;
}

inline nn::Network build_model(const ExperimentConfig& cfg, const std::vector<streams::TaskSpec>& tasks, Rng& rng) {
  require(!tasks.empty() && !tasks.front().train.empty(), ErrorKind::InvalidArgument, "stream has no data");
  const auto in = tasks.front().train.front().input.size();
  const auto head = cfg.regression() ? nn::HeadKind::GaussianMSE : nn::HeadKind::SoftmaxCE;
  const Eigen::Index out = cfg.regression() ? tasks.front().train.front().target.size()
                           : cfg.model.grow_classifier ? 1
                                                       : count_classes(tasks);
  if (cfg.model.zero_init) return nn::make_linear(in, out, head);
  std::vector<Eigen::Index> dims{in};
  dims.insert(dims.end(), cfg.model.hidden.begin(), cfg.model.hidden.end());
  dims.push_back(out);
  return nn::make_mlp(dims, head, rng);
}

/// Inner steps spent on the first task: the reference step count at which the
/// grid's alpha / tau ratio is defined.
inline int reference_steps(const std::vector<streams::TaskSpec>& tasks, const HyperParams& hp) {
  const auto n = static_cast<int>(tasks.front().train.size());
  return ((n + hp.new_batch_size - 1) / hp.new_batch_size) * hp.inner_steps;
}

// ---------------------------------------------------------------- runs

struct RunResult {
  StrategyKind strategy = StrategyKind::ER;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string failure;
  metrics::AccuracyMatrix accuracy;
  metrics::CumulativeLossTrack losses;
  std::map<std::string, double> scalars;
  std::vector<std::int64_t> task_end_steps;
  int reference_steps = 0;
  nn::Network final_net;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  const std::vector<std::filesystem::path>* data_files = nullptr;
};

namespace detail {

inline bool all_finite(const nn::Network& net) {
  for (const auto& l : net.layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

inline double mean_loss(const nn::Network& net, const std::vector<Example>& set) {
  return trajectory::eval_loss(net, set);
}

inline std::string fmt(double v) { return metrics::AccuracyMatrix::format_value(v); }

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) fail(ErrorKind::IoError, "cannot write " + p.string());
  os << s;
}

inline nlohmann::json diag_line(std::int64_t step, int s, int task, bool grew, const strategies::StepInfo& info) {
  nlohmann::json j;
  j["step"] = step;
  j["inner"] = s;
  j["task"] = task;
  j["loss"] = info.loss;
  j["tau"] = info.tau;
  j["lambda"] = info.lambda;
  j["grad_norm_ratio"] = info.grad_norm_ratio;
  j["zero_raw_gradient"] = info.zero_raw_gradient;
  j["escalations"] = info.escalations;
  j["classifier_grew"] = grew;
  if (!info.trace_a.empty()) {
    j["trace_a"] = info.trace_a;
    j["trace_g"] = info.trace_g;
  }
  return j;
}

}  // namespace detail

/// One (strategy, seed) training pass over the stream.
inline RunResult run_single(const ExperimentConfig& cfg, StrategyKind kind, const HyperParams& hp, std::uint64_t seed,
                            const LoadedData& data, const RunOptions& opts = {}) {
  namespace fs = std::filesystem;
  RunResult res;
  res.strategy = kind;
  res.seed = seed;
  const auto tasks = build_tasks(cfg.stream, data, seed);
  res.reference_steps = reference_steps(tasks, hp);

  Rng init_rng(derive_seed(seed, SeedPurpose::Init));
  Rng buf_rng(derive_seed(seed, SeedPurpose::Buffer));
  nn::Network net = build_model(cfg, tasks, init_rng);
  strategies::Strategy strat(kind, hp, derive_seed(seed, SeedPurpose::Fisher));
  ReplayBuffer buffer(static_cast<std::size_t>(cfg.buffer_capacity));
  streams::StreamIterator it(tasks, hp.new_batch_size, derive_seed(seed, SeedPurpose::Order));

  const bool files = !opts.out_dir.empty();
  std::ofstream diag;
  fs::path snap_dir;
  std::ostringstream snap_index;
  snap_index << "step,task,boundary,file\n";
  if (files) {
    fs::create_directories(opts.out_dir);
    fs::remove(opts.out_dir / "FAILED");
    diag.open(opts.out_dir / "diagnostics.jsonl", std::ios::binary);
    if (cfg.trajectory) {
      snap_dir = opts.out_dir / "snapshots";
      fs::create_directories(snap_dir);
    }
  }
  const auto save_snapshot = [&](std::int64_t step, int task, bool boundary) {
    if (snap_dir.empty()) return;
    std::ostringstream name;
    name << "step_" << std::setw(6) << std::setfill('0') << step;
    snapshot::save(snap_dir / name.str(), net, {step, task});
    snap_index << step << ',' << task << ',' << (boundary ? 1 : 0) << ',' << name.str() << '\n';
  };

  std::vector<std::size_t> task_end;  // cumulative example counts at task ends
  {
    std::size_t acc = 0;
    for (const auto& t : tasks) task_end.push_back(acc += t.train.size());
  }
  std::vector<const std::vector<Example>*> eval_sets;
  for (const auto& t : tasks) eval_sets.push_back(&t.eval);
  const auto evaluate_row = [&](std::int64_t step, int tasks_seen) {
    if (cfg.regression()) return;
    std::vector<const std::vector<Example>*> seen(eval_sets.begin(), eval_sets.begin() + tasks_seen);
    res.accuracy.append(step, metrics::evaluate(net, seen));
  };

  std::vector<Example> history;  // regression streams only
  const nn::HeadKind head = net.head;
  std::size_t consumed = 0;
  std::size_t next_task_end = 0;
  int tasks_seen = 0;
  std::int64_t steps = 0;
  bool last_row_done = false;
  save_snapshot(0, 0, true);

  try {
    while (auto sb = it.next()) {
      tasks_seen = std::max(tasks_seen, sb->last_task + 1);
      const Batch nb = to_batch(sb->examples, head);
      bool grew = false;
      if (!cfg.regression() && cfg.model.grow_classifier) {
        const int max_label = *std::max_element(nb.targets.labels.begin(), nb.targets.labels.end());
        grew = nn::grow_classifier(net, max_label + 1, init_rng);
      }
      strat.observe_new_batch(nb);
      const double batch_loss = cfg.regression() ? detail::mean_loss(net, sb->examples) : 0.0;
      Batch bb;
      if (!buffer.empty() && hp.buffer_batch_size > 0)
        bb = to_batch(buffer.sample(static_cast<std::size_t>(hp.buffer_batch_size), buf_rng), head);

      for (int s = 0; s < hp.inner_steps; ++s) {
        strategies::StepContext ctx;
        ctx.inner_index = s;
        ctx.classifier_grew = grew && s == 0;
        ctx.buffer = &buffer;
        const auto info = strat.step(net, nb, bb, ctx);
        if (files) diag << detail::diag_line(sb->global_step, s, sb->last_task, ctx.classifier_grew, info).dump() << '\n';
        if (!detail::all_finite(net))
          fail(ErrorKind::NonFinite, "non-finite parameters at step " + std::to_string(sb->global_step));
      }
      buffer.reservoir_update(sb->examples, buf_rng);
      ++steps;

      if (cfg.regression()) {
        history.insert(history.end(), sb->examples.begin(), sb->examples.end());
        metrics::track_cumulative(res.losses, batch_loss, detail::mean_loss(net, history));
      }

      consumed += sb->examples.size();
      bool boundary = false;
      while (next_task_end < task_end.size() && consumed >= task_end[next_task_end]) {
        boundary = true;
        res.task_end_steps.push_back(steps);
        ++next_task_end;
      }
      const bool last = consumed == task_end.back();
      last_row_done = false;
      if (steps % cfg.eval_every == 0 || boundary || last) {
        evaluate_row(steps, tasks_seen);
        last_row_done = true;
      }
      if (boundary || steps % cfg.snapshot_every == 0) save_snapshot(steps, sb->last_task, boundary);
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NotPositiveDefinite && e.kind() != ErrorKind::NoConvergence &&
        e.kind() != ErrorKind::NonFinite)
      throw;
    res.failed = true;
    res.failure = e.what();
  }
  if (!res.failed && !last_row_done && tasks_seen > 0) evaluate_row(steps, tasks_seen);

  // Scalars.
  auto& sc = res.scalars;
  if (cfg.regression()) {
    sc["L_p_final"] = res.losses.lp;
    sc["L_s_final"] = res.losses.ls;
  } else if (!res.accuracy.empty()) {
    sc["acc"] = metrics::final_acc(res.accuracy);
    sc["aaa"] = metrics::aaa(res.accuracy);
    sc["wc_acc"] = metrics::wc_acc(res.accuracy);
    sc["final_task_acc"] = metrics::final_task_acc(res.accuracy);
    std::size_t t1_rows = 0;
    for (const auto& r : res.accuracy.rows) t1_rows += r.empty() ? 0 : 1;
    if (t1_rows >= 2) sc["forgetting_task1"] = metrics::forgetting_task1(res.accuracy);
    if (tasks.size() >= 2) {
      const double m = metrics::min_acc_while(res.accuracy, 0, 2);
      if (std::isfinite(m)) sc["min_task1_acc_during_task2"] = m;
    }
    if (cfg.probe && !res.failed && net.layers.size() >= 2) {
      std::vector<Example> train, eval;
      for (const auto& t : tasks) {
        train.insert(train.end(), t.train.begin(), t.train.end());
        eval.insert(eval.end(), t.eval.begin(), t.eval.end());
      }
      sc["probed_acc"] = metrics::linear_probe(net, train, eval, static_cast<int>(net.out_dim()));
    }
  }
  res.final_net = net;

  if (files) {
    detail::write_text(opts.out_dir / "config.ini", cfg.source_text);
    std::ostringstream hashes;
    hashes << git_blob_sha1(cfg.source_text) << "  config.ini\n";
    if (opts.data_files)
      for (const auto& f : *opts.data_files) hashes << git_blob_sha1(read_file(f)) << "  " << f.filename().string() << '\n';
    hashes << git_blob_sha1(hashes.str() + "seed=" + std::to_string(seed) + "\n") << "  inputs\n";
    detail::write_text(opts.out_dir / "inputs.sha1", hashes.str());
    if (!cfg.regression()) {
      std::ofstream acc(opts.out_dir / "accuracy.csv", std::ios::binary);
      res.accuracy.write_csv(acc);
    } else {
      std::ofstream los(opts.out_dir / "losses.csv", std::ios::binary);
      res.losses.write_csv(los);
    }
    if (!snap_dir.empty()) detail::write_text(snap_dir / "index.csv", snap_index.str());
    nlohmann::json m;
    m["strategy"] = strategies::to_string(kind);
    m["seed"] = seed;
    m["steps"] = steps;
    m["reference_steps"] = res.reference_steps;
    m["task_end_steps"] = res.task_end_steps;
    m["wc_acc_formula"] = metrics::kWcAccFormula;
    m["failed"] = res.failed;
    for (const auto& [k, v] : sc) m["metrics"][k] = v;
    detail::write_text(opts.out_dir / "metrics.json", m.dump(2) + "\n");
    if (res.failed) detail::write_text(opts.out_dir / "FAILED", res.failure + "\n");
  }
  return res;
}

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;
  int n = 0;
};

inline Aggregate aggregate(const std::vector<double>& v) {
  Aggregate a;
  a.n = static_cast<int>(v.size());
  if (v.empty()) return a;
  a.mean = std::accumulate(v.begin(), v.end(), 0.0) / a.n;
  if (a.n > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - a.mean) * (x - a.mean);
    a.std = std::sqrt(ss / (a.n - 1));
  }
  return a;
}

/// Mean/std of every scalar across the non-failed runs.
inline std::map<std::string, Aggregate> summarize(const std::vector<RunResult>& runs) {
  std::map<std::string, std::vector<double>> by_key;
  for (const auto& r : runs)
    if (!r.failed)
      for (const auto& [k, v] : r.scalars) by_key[k].push_back(v);
  std::map<std::string, Aggregate> out;
  for (const auto& [k, v] : by_key) out[k] = aggregate(v);
  return out;
}

struct ExperimentResult {
  std::map<StrategyKind, std::vector<RunResult>> runs;
  [[nodiscard]] bool any_failed() const {
    for (const auto& [k, rs] : runs)
      for (const auto& r : rs)
        if (r.failed) return true;
    return false;
  }
};

inline nlohmann::json summary_json(const ExperimentConfig& cfg, const ExperimentResult& result) {
  nlohmann::json j;
  j["name"] = cfg.name;
  j["wc_acc_formula"] = metrics::kWcAccFormula;
  j["seeds"] = cfg.seeds;
  for (const auto& [kind, rs] : result.runs) {
    auto& node = j["strategies"][strategies::to_string(kind)];
    for (const auto& [k, a] : summarize(rs)) node[k] = {{"mean", a.mean}, {"std", a.std}, {"n", a.n}};
    for (const auto& r : rs)
      if (r.failed) node["failed_seeds"].push_back(r.seed);
  }
  return j;
}

/// Every configured strategy for every seed; files go under `out_dir` when set.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir = {}) {
  const auto data = load_data(cfg.stream);
  ExperimentResult result;
  for (auto kind : cfg.strategies) {
    for (auto seed : cfg.seeds) {
      RunOptions opts;
      opts.data_files = &data.files;
      if (!out_dir.empty())
        opts.out_dir = out_dir / strategies::to_string(kind) / ("seed_" + std::to_string(seed));
      result.runs[kind].push_back(run_single(cfg, kind, cfg.params_for(kind), seed, data, opts));
    }
  }
  if (!out_dir.empty()) detail::write_text(out_dir / "summary.json", summary_json(cfg, result).dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------- grid

struct GridCell {
  double alpha = 0.0;
  double ratio = 0.0;
  double delta_tau = 0.0;
  std::map<std::string, Aggregate> metrics;
  int failed = 0;
};

struct GridTable {
  int reference_steps = 0;
  std::vector<GridCell> cells;  // alpha-major

  void write_csv(std::ostream& os) const {
    os << "alpha,alpha_over_tau,delta_tau,reference_steps,acc_mean,acc_std,forgetting_task1_mean,"
          "forgetting_task1_std,final_task_acc_mean,final_task_acc_std,failed\n";
    for (const auto& c : cells) {
      const auto get = [&](const char* k) {
        const auto it = c.metrics.find(k);
        return it == c.metrics.end() ? Aggregate{} : it->second;
      };
      const auto acc = get("acc"), fgt = get("forgetting_task1"), fin = get("final_task_acc");
      os << detail::fmt(c.alpha) << ',' << detail::fmt(c.ratio) << ',' << detail::fmt(c.delta_tau) << ','
         << reference_steps << ',' << detail::fmt(acc.mean) << ',' << detail::fmt(acc.std) << ','
         << detail::fmt(fgt.mean) << ',' << detail::fmt(fgt.std) << ',' << detail::fmt(fin.mean) << ','
         << detail::fmt(fin.std) << ',' << c.failed << '\n';
    }
  }
};

/// Grid over alpha and the alpha / tau ratio reached after the first task's
/// inner steps K: delta_tau = (alpha / ratio - tau_0) / K. Uses the first
/// configured strategy.
inline GridTable grid_search(const ExperimentConfig& cfg, const std::vector<double>& alphas,
                             const std::vector<double>& ratios, const std::filesystem::path& out_dir = {}) {
  require(!alphas.empty() && !ratios.empty(), ErrorKind::ConfigError, "grid needs at least one alpha and one ratio");
  for (double a : alphas) require(a > 0.0, ErrorKind::ConfigError, "grid alphas must be > 0");
  for (double r : ratios) require(r > 0.0, ErrorKind::ConfigError, "grid ratios must be > 0");
  const auto data = load_data(cfg.stream);
  const auto kind = cfg.strategies.front();
  GridTable table;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    for (std::size_t j = 0; j < ratios.size(); ++j) {
      HyperParams hp = cfg.params_for(kind);
      hp.alpha = alphas[i];
      const auto probe_tasks = build_tasks(cfg.stream, data, cfg.seeds.front());
      const int k = reference_steps(probe_tasks, hp);
      table.reference_steps = k;
      const double tau0 = hp.initial_tau();
      const double dt = (alphas[i] / ratios[j] - tau0) / k;
      require(dt >= 0.0, ErrorKind::ConfigError,
              "ratio " + detail::fmt(ratios[j]) + " needs tau to shrink below its initial value");
      hp.delta_tau = dt;
      GridCell cell{alphas[i], ratios[j], dt, {}, 0};
      std::vector<RunResult> runs;
      for (auto seed : cfg.seeds) {
        RunOptions opts;
        opts.data_files = &data.files;
        if (!out_dir.empty()) {
          std::ostringstream name;
          name << "cell_a" << i << "_r" << j;
          opts.out_dir = out_dir / name.str() / ("seed_" + std::to_string(seed));
        }
        runs.push_back(run_single(cfg, kind, hp, seed, data, opts));
        cell.failed += runs.back().failed ? 1 : 0;
      }
      cell.metrics = summarize(runs);
      table.cells.push_back(std::move(cell));
    }
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream os(out_dir / "grid.csv", std::ios::binary);
    table.write_csv(os);
    nlohmann::json meta;
    meta["strategy"] = strategies::to_string(kind);
    meta["reference_steps"] = table.reference_steps;
    meta["ratio_definition"] = "alpha / tau after reference_steps inner steps";
    meta["alphas"] = alphas;
    meta["ratios"] = ratios;
    detail::write_text(out_dir / "grid.json", meta.dump(2) + "\n");
  }
  return table;
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::InvalidArgument, "spearman needs two equal series");
  const auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / rx.size();
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / ry.size();
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------- surfaces

struct SnapshotRef {
  std::int64_t step = 0;
  int task = 0;
  bool boundary = false;
  std::string file;
};

inline std::vector<SnapshotRef> read_snapshot_index(const std::filesystem::path& snap_dir) {
  std::istringstream is(read_file(snap_dir / "index.csv"));
  std::string line;
  std::getline(is, line);
  std::vector<SnapshotRef> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f[4];
    for (auto& x : f) std::getline(ls, x, ',');
    out.push_back({std::stoll(f[0]), std::stoi(f[1]), f[2] == "1", f[3]});
  }
  return out;
}

/// Rebuilds a run's plane (initial weights, end of the first task, final
/// weights), writes trajectory.csv and surface.csv into the run directory and
/// returns the grid.
inline trajectory::SurfaceGrid surface_for_run(const std::filesystem::path& run_dir, int resolution) {
  const auto cfg = parse_config(read_file(run_dir / "config.ini"), (run_dir / "config.ini").string());
  const auto meta = nlohmann::json::parse(read_file(run_dir / "metrics.json"));
  const auto seed = meta.at("seed").get<std::uint64_t>();
  const auto snap_dir = run_dir / "snapshots";
  const auto refs = read_snapshot_index(snap_dir);
  require(refs.size() >= 3, ErrorKind::InvalidArgument, "run has fewer than three snapshots");
  const auto& task_ends = meta.at("task_end_steps");
  require(!task_ends.empty(), ErrorKind::InvalidArgument, "run has no completed task");
  const auto first_end = task_ends.front().get<std::int64_t>();

  std::vector<Vector> weights;
  nn::Network tmpl;
  const Vector* w1 = nullptr;
  for (const auto& r : refs) {
    auto loaded = snapshot::load(snap_dir / r.file);
    weights.push_back(nn::flatten(loaded.net));
    tmpl = loaded.net;
  }
  // The classifier grows over time: earlier snapshots are zero-padded to the
  // final shape so that all of them live in one parameter space.
  const auto final_size = weights.back().size();
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (weights[i].size() != final_size) {
      auto loaded = snapshot::load(snap_dir / refs[i].file);
      nn::Network padded = tmpl;
      for (std::size_t l = 0; l < padded.layers.size(); ++l) {
        auto& dst = padded.layers[l];
        const auto& src = loaded.net.layers[l];
        dst.weight.setZero();
        dst.bias.setZero();
        dst.weight.topRows(src.out_dim()) = src.weight;
        dst.bias.head(src.out_dim()) = src.bias;
      }
      weights[i] = nn::flatten(padded);
    }
    if (refs[i].step == first_end) w1 = &weights[i];
  }
  require(w1 != nullptr, ErrorKind::InvalidArgument, "no snapshot at the end of the first task");
  const auto basis = trajectory::build_basis(weights.front(), *w1, weights.back());

  std::vector<trajectory::Coords> pts;
  std::ostringstream traj;
  traj << "step,x,y,boundary\n" << std::setprecision(17);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    pts.push_back(trajectory::coords(weights[i], basis));
    traj << refs[i].step << ',' << pts.back().x << ',' << pts.back().y << ',' << (refs[i].boundary ? 1 : 0) << '\n';
  }
  detail::write_text(run_dir / "trajectory.csv", traj.str());

  const auto data = load_data(cfg.stream);
  // Only the tasks the run actually trained on (it may have been cut short
  // with --eval-through-task, which the config copy does not record).
  auto tasks = build_tasks(cfg.stream, data, seed);
  if (task_ends.size() < tasks.size()) tasks.resize(task_ends.size());
  std::vector<std::vector<Example>> evals;
  for (const auto& t : tasks) evals.push_back(t.eval);
  const auto grid = trajectory::surface(basis, trajectory::grid_around(pts, resolution), evals, tmpl);
  std::ofstream os(run_dir / "surface.csv", std::ios::binary);
  grid.write_csv(os);
  return grid;
}

}  // namespace ocar::experiment
