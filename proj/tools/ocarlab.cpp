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


// Command-line front end.
//
//   ocarlab run     --config <path> [--seed N] [--out DIR] [--eval-through-task K]
//   ocarlab grid    --config <path> --alphas a,b,... --ratios r,s,... [--out DIR]
//   ocarlab probe   --snapshot <path> --data <dir> [--pool N] [--seed N]
//   ocarlab surface --run <dir> [--grid 41]
//
// Relative dataset directories resolve against $OCAR_DATA_ROOT.
// Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.

#include "ocarlab/experiment.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

using namespace ocar;
namespace ex = ocar::experiment;
namespace fs = std::filesystem;

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

bool numerical(ErrorKind k) {
  return k == ErrorKind::NotPositiveDefinite || k == ErrorKind::NoConvergence || k == ErrorKind::NonFinite;
}

fs::path default_out(const ex::ExperimentConfig& cfg, const char* kind) {
  return fs::path("runs") / (cfg.name + (kind[0] ? std::string("_") + kind : std::string()));
}

int cmd_run(const std::string& config, std::optional<std::uint64_t> seed, std::string out, int through) {
  auto cfg = ex::load_config(config);
  if (seed) cfg.seeds = {*seed};
  if (through > 0) cfg.stream.through_task = through;
  const fs::path dir = out.empty() ? default_out(cfg, "") : fs::path(out);
  const auto result = ex::run_experiment(cfg, dir);
  std::cout << ex::summary_json(cfg, result).dump(2) << '\n';
  std::cerr << "artifacts in " << dir.string() << '\n';
  return result.any_failed() ? kExitNumerical : 0;
}

int cmd_grid(const std::string& config, std::vector<double> alphas, std::vector<double> ratios, std::string out,
             int through) {
  auto cfg = ex::load_config(config);
  if (through > 0) cfg.stream.through_task = through;
  if (alphas.empty()) alphas = cfg.grid_alphas;
  if (ratios.empty()) ratios = cfg.grid_ratios;
  const fs::path dir = out.empty() ? default_out(cfg, "grid") : fs::path(out);
  const auto table = ex::grid_search(cfg, alphas, ratios, dir);
  table.write_csv(std::cout);
  int failed = 0;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    std::vector<double> r, f;
    for (std::size_t j = 0; j < ratios.size(); ++j) {
      const auto& c = table.cells[i * ratios.size() + j];
      failed += c.failed;
      const auto it = c.metrics.find("forgetting_task1");
      if (it == c.metrics.end()) continue;
      r.push_back(c.ratio);
      f.push_back(it->second.mean);
    }
    if (r.size() >= 2)
      std::cerr << "alpha " << alphas[i] << ": spearman(alpha/tau, forgetting) = " << ex::spearman(r, f) << '\n';
  }
  return failed > 0 ? kExitNumerical : 0;
}

int cmd_probe(const std::string& snapshot_path, const std::string& data, int pool, std::uint64_t seed) {
  const auto snap = snapshot::load(snapshot_path);
  auto ds = streams::load_mnist(ex::resolve_data_dir(data));
  ds = streams::pool_images(ds, pool);
  Rng rng(seed);
  const auto split = streams::detail::split_by_class(ds, 0.1, rng);
  std::vector<Example> train, eval;
  for (const auto& [tr, ev] : split) {
    for (auto r : tr) train.push_back(streams::detail::make_example(ds, r, true));
    for (auto r : ev) eval.push_back(streams::detail::make_example(ds, r, true));
  }
  const int classes = std::max(static_cast<int>(snap.net.out_dim()), ds.num_classes());
  const double acc = metrics::linear_probe(snap.net, train, eval, classes);
  nlohmann::json j;
  j["snapshot"] = snapshot_path;
  j["step"] = snap.meta.step;
  j["probed_acc"] = acc;
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_surface(const std::string& run_dir, int resolution) {
  const auto grid = ex::surface_for_run(run_dir, resolution);
  std::cerr << "wrote " << (fs::path(run_dir) / "surface.csv").string() << " (" << grid.spec.nx << "x" << grid.spec.ny
            << ", " << grid.tasks << " tasks)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online continual learning with curvature-aware replay"};
  app.require_subcommand(1);

  std::string config, out, snapshot_path, data, run_dir;
  std::int64_t seed = -1;
  int through = 0, pool = 1, resolution = 41;
  std::vector<double> alphas, ratios;

  auto* run = app.add_subcommand("run", "train every configured strategy and seed");
  run->add_option("--config", config, "experiment config (INI or JSON)")->required();
  run->add_option("--seed", seed, "run this seed only");
  run->add_option("--out", out, "output directory");
  run->add_option("--eval-through-task", through, "train and evaluate on the first K tasks only");

  auto* grid = app.add_subcommand("grid", "grid search over alpha and alpha/tau");
  grid->add_option("--config", config, "experiment config")->required();
  grid->add_option("--alphas", alphas, "comma-separated step sizes")->delimiter(',');
  grid->add_option("--ratios", ratios, "comma-separated alpha/tau ratios")->delimiter(',');
  grid->add_option("--out", out, "output directory");
  grid->add_option("--eval-through-task", through, "train and evaluate on the first K tasks only");

  auto* probe = app.add_subcommand("probe", "linear probe on frozen penultimate features");
  probe->add_option("--snapshot", snapshot_path, "snapshot stem, .bin or .json")->required();
  probe->add_option("--data", data, "IDX dataset directory")->required();
  probe->add_option("--pool", pool, "average-pool factor applied to the images");
  probe->add_option("--seed", seed, "train/eval split seed");

  auto* surface = app.add_subcommand("surface", "loss surface on the plane of a run's trajectory");
  surface->add_option("--run", run_dir, "run directory containing snapshots/")->required();
  surface->add_option("--grid", resolution, "grid resolution per axis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config, seed >= 0 ? std::optional<std::uint64_t>(seed) : std::nullopt, out, through);
    if (*grid) return cmd_grid(config, alphas, ratios, out, through);
    if (*probe) return cmd_probe(snapshot_path, data, pool, seed >= 0 ? static_cast<std::uint64_t>(seed) : 0);
    if (*surface) return cmd_surface(run_dir, resolution);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return numerical(e.kind()) ? kExitNumerical : kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return 0;
}
