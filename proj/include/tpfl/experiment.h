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

#ifndef TPFL_EXPERIMENT_H_
#define TPFL_EXPERIMENT_H_

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tpfl/federation.h"

namespace tpfl {

// Version of every CSV column set and of the summary layout.
inline constexpr int kSchemaVersion = 1;

// Library version string recorded in every summary.
std::string ArtifactVersion();

struct ExperimentConfig {
  ScenarioConfig scenario;
  // Empty: chosen by ResolveOutputDir.
  std::string output_dir;
  // Save the final evaluation models under checkpoints/.
  bool checkpoints = true;
};

// Strict JSON config (see docs/config.md). Overrides are "dotted.key=value"
// and are applied before validation; a value that is not valid JSON is taken
// as a string. Throws ParseError for malformed text and ValidationError
// listing every unknown key, type mismatch and invalid value.
ExperimentConfig ParseConfigText(const std::string& text,
                                 const std::vector<std::string>& overrides = {});
// As ParseConfigText; a relative dataset path is resolved against the
// config file's directory.
ExperimentConfig ParseConfigFile(const std::string& path,
                                 const std::vector<std::string>& overrides = {});

// Every field with its resolved value, in the config file layout.
std::string ConfigToJson(const ExperimentConfig& config);

// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "TPFL_OUTPUT_ROOT";

// explicit_dir if given, else config.output_dir, else <root>/<stem>-s<seed>,
// where root is $TPFL_OUTPUT_ROOT or "runs". A relative config.output_dir is
// taken under $TPFL_OUTPUT_ROOT when that is set.
std::filesystem::path ResolveOutputDir(const ExperimentConfig& config,
                                       const std::string& explicit_dir,
                                       const std::string& config_path);

// error.json in `dir`: category, message, and the problem list or parse
// location when there is one.
void WriteErrorReport(const std::filesystem::path& dir, const std::exception& e);

using MetricList = std::vector<std::pair<std::string, double>>;

struct RunOutcome {
  std::filesystem::path output_dir;
  std::vector<RoundReport> rounds;
  EvaluationReport evaluation;
  // Flat headline numbers, in summary order.
  MetricList metrics;
};

// Trains, evaluates and writes rounds.csv, audit.csv, eval.csv, summary.json
// and optional checkpoints into out_dir, and nothing outside it. Round rows
// are flushed as they are produced. On failure writes error.json next to
// whatever was already written and rethrows.
RunOutcome RunExperiment(const ExperimentConfig& config, const std::filesystem::path& out_dir);

// CSV table with one row per summary: run label, identifying config fields,
// every metric, and the difference of each metric to the first summary.
// A path naming a run directory means the summary.json inside it.
// Throws ValidationError when the summaries do not share a schema and
// metric set.
std::string CompareRuns(const std::vector<std::string>& paths);

struct GridAxis {
  std::string key;
  // Raw override values.
  std::vector<std::string> values;
};

// "key=v1,v2;key2=v3" or the name of a preset ("security": five attacks
// times malicious ratios 0.1 to 0.5). Commas inside brackets do not split.
std::vector<GridAxis> ParseGrid(const std::string& spec);

// Cartesian product in row-major order (last axis fastest); each cell is a
// list of "key=value" overrides.
std::vector<std::vector<std::string>> ExpandGrid(const std::vector<GridAxis>& axes);

struct SweepCell {
  std::vector<std::string> overrides;
  std::filesystem::path output_dir;
  bool ok = false;
  std::string error;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  // sweep.csv in the sweep root: the CompareRuns table of successful cells.
  std::filesystem::path table;
};

// Validates every cell before running any. Cells run on up to `jobs`
// threads, each in its own subdirectory of out_dir. Throws ValidationError
// if a cell config is invalid; runtime failures are recorded per cell.
SweepResult RunSweep(const std::string& config_path, const std::vector<GridAxis>& grid,
                     const std::vector<std::string>& base_overrides,
                     const std::filesystem::path& out_dir, int jobs = 1);

}  // namespace tpfl

#endif  // TPFL_EXPERIMENT_H_
