/*
 * Copyright 2026 The TPFL Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// tpfl: run, compare and sweep experiments.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tpfl/errors.h"
#include "tpfl/experiment.h"

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

void PrintProblems(const tpfl::ValidationError& e) {
  std::cerr << "error: invalid configuration\n";
  for (const std::string& p : e.problems()) std::cerr << "  " << p << "\n";
}

// Maps an exception to an exit code and prints it.
int Report(const std::exception& e) {
  if (const auto* v = dynamic_cast<const tpfl::ValidationError*>(&e)) {
    PrintProblems(*v);
    return kValidation;
  }
  std::cerr << "error: " << e.what() << "\n";
  return dynamic_cast<const tpfl::ParseError*>(&e) ? kValidation : kRuntime;
}

std::vector<std::string> WithSeed(std::vector<std::string> overrides,
                                  const std::optional<uint64_t>& seed) {
  if (seed) overrides.push_back("seed=" + std::to_string(*seed));
  return overrides;
}

int Run(const std::string& config_path, const std::optional<uint64_t>& seed,
        const std::string& out, const std::vector<std::string>& overrides) {
  tpfl::ExperimentConfig cfg;
  try {
    cfg = tpfl::ParseConfigFile(config_path, WithSeed(overrides, seed));
  } catch (const std::exception& e) {
    if (!out.empty()) tpfl::WriteErrorReport(out, e);
    const int code = Report(e);
    // A missing or unreadable file is a validation failure of the input.
    return code == kRuntime ? kValidation : code;
  }
  const auto dir = tpfl::ResolveOutputDir(cfg, out, config_path);
  try {
    tpfl::RunOutcome r = tpfl::RunExperiment(cfg, dir);
    std::cout << "wrote " << r.output_dir.string() << "\n";
    for (const auto& [k, v] : r.metrics) std::cout << "  " << k << " = " << v << "\n";
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "see " << (dir / "error.json").string() << "\n";
    return Report(e);
  }
}

int Compare(const std::vector<std::string>& summaries, const std::string& out) {
  try {
    const std::string table = tpfl::CompareRuns(summaries);
    if (out.empty()) {
      std::cout << table;
    } else {
      std::ofstream f(out, std::ios::binary | std::ios::trunc);
      if (!f) throw tpfl::Error("cannot write '" + out + "'");
      f << table;
    }
    return kOk;
  } catch (const std::exception& e) {
    const int code = Report(e);
    return code == kRuntime ? kValidation : code;
  }
}

int Sweep(const std::string& config_path, const std::string& grid_spec,
          const std::optional<uint64_t>& seed, const std::string& out,
          const std::vector<std::string>& overrides, int jobs) {
  std::vector<tpfl::GridAxis> grid;
  tpfl::ExperimentConfig base;
  try {
    grid = tpfl::ParseGrid(grid_spec);
    base = tpfl::ParseConfigFile(config_path, WithSeed(overrides, seed));
  } catch (const std::exception& e) {
    const int code = Report(e);
    return code == kRuntime ? kValidation : code;
  }
  const auto dir = tpfl::ResolveOutputDir(base, out, config_path);
  try {
    tpfl::SweepResult r =
        tpfl::RunSweep(config_path, grid, WithSeed(overrides, seed), dir, jobs);
    size_t failed = 0;
    for (const tpfl::SweepCell& c : r.cells) {
      if (!c.ok) {
        ++failed;
        std::cerr << "cell " << c.output_dir.string() << " failed: " << c.error << "\n";
      }
    }
    std::cout << "wrote " << r.table.string() << " (" << r.cells.size() - failed << " of "
              << r.cells.size() << " cells)\n";
    return failed ? kRuntime : kOk;
  } catch (const std::exception& e) {
    return Report(e);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trustworthy personalized federated learning experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", tpfl::ArtifactVersion());

  std::string config, out, grid, compare_out;
  std::optional<uint64_t> seed;
  std::vector<std::string> overrides, summaries;
  int jobs = 1;

  CLI::App* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("config", config, "Config file")->required();
  run->add_option("--seed", seed, "Run seed");
  run->add_option("--out", out, "Output directory (default: $TPFL_OUTPUT_ROOT/<config>-s<seed>)");
  run->add_option("--override", overrides, "key=value, repeatable")->take_all();

  CLI::App* cmp = app.add_subcommand("compare", "Tabulate summary files as CSV");
  cmp->add_option("summaries", summaries, "summary.json files or run directories")->required();
  cmp->add_option("--out", compare_out, "Write the table here instead of stdout");

  CLI::App* sweep = app.add_subcommand("sweep", "Run a grid of experiments");
  sweep->add_option("config", config, "Config file")->required();
  sweep->add_option("--grid", grid, "key=v1,v2;key2=... or 'security'")->required();
  sweep->add_option("--seed", seed, "Run seed");
  sweep->add_option("--out", out, "Sweep root directory");
  sweep->add_option("--override", overrides, "key=value, repeatable")->take_all();
  sweep->add_option("--jobs", jobs, "Cells run in parallel")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }
  if (*run) return Run(config, seed, out, overrides);
  if (*cmp) return Compare(summaries, compare_out);
  return Sweep(config, grid, seed, out, overrides, jobs);
}
