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

#include "tpfl/experiment.h"

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "tpfl/errors.h"

namespace tpfl {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string Join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Shortest text that reads back to the same double.
std::string Num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string PriorUpdateName(PriorUpdate p) {
  switch (p) {
    case PriorUpdate::kAllButInc: return "all_but_inc";
    case PriorUpdate::kNegOnly: return "neg_only";
    case PriorUpdate::kFrozen: return "frozen";
  }
  return "?";
}

std::string DelimiterName(char d) {
  if (d == ',') return "comma";
  if (d == '\t') return "tab";
  return "auto";
}

// Walks a parsed document, collecting every problem instead of stopping.
class Reader {
 public:
  explicit Reader(std::vector<std::string>& problems) : problems_(problems) {}

  // Reports unknown keys; false (with a problem) if `obj` is not an object.
  bool Keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) {
      problems_.push_back((path.empty() ? std::string("config") : path) + ": must be an object");
      return false;
    }
    for (const auto& [k, v] : obj.items()) {
      bool known = false;
      for (const char* a : allowed) known = known || k == a;
      if (!known) problems_.push_back(Join(path, k) + ": unknown key");
    }
    return true;
  }

  // Nullptr if absent or not an object.
  const json* Section(const json& obj, const std::string& path, const char* key,
                      std::initializer_list<const char*> allowed) {
    auto it = obj.find(key);
    if (it == obj.end()) return nullptr;
    return Keys(*it, Join(path, key), allowed) ? &*it : nullptr;
  }

  template <typename T>
  void Read(const json& obj, const std::string& path, const char* key, T& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    const std::string where = Join(path, key);
    if (!Convert(*it, where, out)) return;
  }

  template <typename E>
  void ReadEnum(const json& obj, const std::string& path, const char* key, E& out,
                E (*parse)(const std::string&)) {
    std::string name;
    auto it = obj.find(key);
    if (it == obj.end()) return;
    if (!Convert(*it, Join(path, key), name)) return;
    try {
      out = parse(name);
    } catch (const Error&) {
      problems_.push_back(Join(path, key) + ": unknown value '" + name + "'");
    }
  }

  void Problem(const std::string& p) { problems_.push_back(p); }

 private:
  bool Convert(const json& v, const std::string& where, bool& out) {
    if (!v.is_boolean()) return Bad(where, "a boolean");
    out = v.get<bool>();
    return true;
  }
  bool Convert(const json& v, const std::string& where, std::string& out) {
    if (!v.is_string()) return Bad(where, "a string");
    out = v.get<std::string>();
    return true;
  }
  bool Convert(const json& v, const std::string& where, double& out) {
    if (!v.is_number()) return Bad(where, "a number");
    out = v.get<double>();
    return true;
  }
  bool Convert(const json& v, const std::string& where, int& out) {
    if (!v.is_number_integer()) return Bad(where, "an integer");
    const int64_t x = v.get<int64_t>();
    if (v.is_number_unsigned() && v.get<uint64_t>() > static_cast<uint64_t>(INT32_MAX)) {
      return Bad(where, "an integer in 32-bit range");
    }
    if (x < INT32_MIN || x > INT32_MAX) return Bad(where, "an integer in 32-bit range");
    out = static_cast<int>(x);
    return true;
  }
  static_assert(std::is_same_v<size_t, uint64_t>);
  bool Convert(const json& v, const std::string& where, size_t& out) {
    if (!v.is_number_unsigned()) return Bad(where, "a nonnegative integer");
    out = v.get<uint64_t>();
    return true;
  }
  template <typename T>
  bool Convert(const json& v, const std::string& where, std::vector<T>& out) {
    if (!v.is_array()) return Bad(where, "an array");
    std::vector<T> tmp(v.size());
    bool ok = true;
    for (size_t i = 0; i < v.size(); ++i) {
      ok = Convert(v[i], where + "[" + std::to_string(i) + "]", tmp[i]) && ok;
    }
    if (ok) out = std::move(tmp);
    return ok;
  }
  template <typename T>
  bool Convert(const json& v, const std::string& where, std::optional<T>& out) {
    if (v.is_null()) {
      out.reset();
      return true;
    }
    T x{};
    if (!Convert(v, where, x)) return false;
    out = x;
    return true;
  }
  bool Bad(const std::string& where, const char* what) {
    problems_.push_back(where + ": must be " + what);
    return false;
  }

  std::vector<std::string>& problems_;
};

PriorUpdate ParsePriorUpdate(const std::string& name) {
  for (PriorUpdate p : {PriorUpdate::kAllButInc, PriorUpdate::kNegOnly, PriorUpdate::kFrozen}) {
    if (PriorUpdateName(p) == name) return p;
  }
  throw DomainError("unknown prior update '" + name + "'");
}

char ParseDelimiterName(const std::string& name) {
  if (name == "auto") return 0;
  if (name == "comma" || name == ",") return ',';
  if (name == "tab" || name == "\t") return '\t';
  throw DomainError("unknown delimiter '" + name + "'");
}

ExperimentConfig FromJson(const json& doc) {
  std::vector<std::string> problems;
  Reader r(problems);
  ExperimentConfig out;
  ScenarioConfig& s = out.scenario;
  if (!r.Keys(doc, "", {"seed", "rounds", "participation", "output", "dataset", "partition",
                        "model", "training", "finetune", "defense", "attack", "evaluation"})) {
    throw ValidationError(problems);
  }
  r.Read(doc, "", "seed", s.seed);
  r.Read(doc, "", "rounds", s.rounds);
  r.Read(doc, "", "participation", s.participation);
  if (const json* o = r.Section(doc, "", "output", {"dir", "checkpoints"})) {
    r.Read(*o, "output", "dir", out.output_dir);
    r.Read(*o, "output", "checkpoints", out.checkpoints);
  }
  if (const json* d = r.Section(doc, "", "dataset",
                                {"source", "num_classes", "per_class", "dim", "spread", "radius",
                                 "path", "file", "test_fraction"})) {
    DatasetConfig& c = s.dataset;
    r.Read(*d, "dataset", "source", c.source);
    r.Read(*d, "dataset", "num_classes", c.num_classes);
    r.Read(*d, "dataset", "per_class", c.per_class);
    r.Read(*d, "dataset", "dim", c.dim);
    r.Read(*d, "dataset", "spread", c.spread);
    r.Read(*d, "dataset", "radius", c.radius);
    r.Read(*d, "dataset", "path", c.path);
    r.Read(*d, "dataset", "test_fraction", c.test_fraction);
    if (const json* f = r.Section(*d, "dataset", "file",
                                  {"label_column", "delimiter", "header", "num_classes"})) {
      r.Read(*f, "dataset.file", "label_column", c.schema.label_column);
      r.ReadEnum(*f, "dataset.file", "delimiter", c.schema.delimiter, &ParseDelimiterName);
      r.Read(*f, "dataset.file", "header", c.schema.header);
      r.Read(*f, "dataset.file", "num_classes", c.schema.num_classes);
    }
  }
  if (const json* p = r.Section(doc, "", "partition", {"num_clients", "beta", "seed"})) {
    r.Read(*p, "partition", "num_clients", s.partition.num_clients);
    r.Read(*p, "partition", "beta", s.partition.beta);
    r.Read(*p, "partition", "seed", s.partition_seed);
  }
  if (const json* m = r.Section(doc, "", "model",
                                {"hidden", "activation", "feature_activation", "prior_weight",
                                 "score_clamp", "head_bias_init", "uniform_prior_init"})) {
    r.Read(*m, "model", "hidden", s.model.hidden);
    r.ReadEnum(*m, "model", "activation", s.model.activation, &ParseActivation);
    r.ReadEnum(*m, "model", "feature_activation", s.model.feature_activation, &ParseActivation);
    r.Read(*m, "model", "prior_weight", s.model.prior_weight);
    r.Read(*m, "model", "score_clamp", s.model.score_clamp);
    r.Read(*m, "model", "head_bias_init", s.model.head_bias_init);
    r.Read(*m, "model", "uniform_prior_init", s.uniform_prior_init);
  }
  if (const json* t = r.Section(doc, "", "training",
                                {"learning_rate", "lambda1", "lambda2", "lambda3", "epsilon",
                                 "local_epochs", "batch_size", "grad_clip", "prior_update",
                                 "terms"})) {
    TrainConfig& c = s.train;
    r.Read(*t, "training", "learning_rate", c.learning_rate);
    r.Read(*t, "training", "lambda1", c.lambda1);
    r.Read(*t, "training", "lambda2", c.lambda2);
    r.Read(*t, "training", "lambda3", c.lambda3);
    r.Read(*t, "training", "epsilon", c.epsilon);
    r.Read(*t, "training", "local_epochs", c.local_epochs);
    r.Read(*t, "training", "batch_size", c.batch_size);
    r.Read(*t, "training", "grad_clip", c.grad_clip);
    r.ReadEnum(*t, "training", "prior_update", c.prior_update, &ParsePriorUpdate);
    if (const json* l = r.Section(*t, "training", "terms", {"ce", "cor", "inc", "evi", "neg"})) {
      r.Read(*l, "training.terms", "ce", c.terms.ce);
      r.Read(*l, "training.terms", "cor", c.terms.cor);
      r.Read(*l, "training.terms", "inc", c.terms.inc);
      r.Read(*l, "training.terms", "evi", c.terms.evi);
      r.Read(*l, "training.terms", "neg", c.terms.neg);
    }
  }
  if (const json* f = r.Section(doc, "", "finetune",
                                {"enabled", "epochs", "learning_rate", "filter_no",
                                 "uniform_generic_prior"})) {
    r.Read(*f, "finetune", "enabled", s.finetune_enabled);
    r.Read(*f, "finetune", "epochs", s.finetune.epochs);
    r.Read(*f, "finetune", "learning_rate", s.finetune.learning_rate);
    r.Read(*f, "finetune", "filter_no", s.finetune.filter_no);
    r.Read(*f, "finetune", "uniform_generic_prior", s.finetune.uniform_generic_prior);
  }
  if (const json* d = r.Section(doc, "", "defense",
                                {"rule", "evidence_cap", "similarity_tau", "min_cluster",
                                 "overflow_filter", "similarity_filter", "trim",
                                 "assumed_attackers", "multi_krum_m", "clip_norm"})) {
    DefenseConfig& c = s.defense;
    r.ReadEnum(*d, "defense", "rule", c.rule, &ParseAggregationRule);
    r.Read(*d, "defense", "evidence_cap", c.filter.evidence_cap);
    r.Read(*d, "defense", "similarity_tau", c.filter.similarity_tau);
    r.Read(*d, "defense", "min_cluster", c.filter.min_cluster);
    r.Read(*d, "defense", "overflow_filter", c.filter.overflow_enabled);
    r.Read(*d, "defense", "similarity_filter", c.filter.similarity_enabled);
    r.Read(*d, "defense", "trim", c.robust.trim);
    r.Read(*d, "defense", "assumed_attackers", c.robust.assumed_attackers);
    r.Read(*d, "defense", "multi_krum_m", c.robust.multi_krum_m);
    r.Read(*d, "defense", "clip_norm", c.robust.clip_norm);
  }
  if (const json* a = r.Section(doc, "", "attack",
                                {"kind", "malicious_ratio", "z", "lambda_scale", "noise_sigma",
                                 "encoder_only"})) {
    AttackConfig& c = s.attack;
    r.ReadEnum(*a, "attack", "kind", c.kind, &ParseAttackKind);
    r.Read(*a, "attack", "malicious_ratio", c.malicious_ratio);
    r.Read(*a, "attack", "z", c.z);
    r.Read(*a, "attack", "lambda_scale", c.lambda_scale);
    r.Read(*a, "attack", "noise_sigma", c.noise_sigma);
    r.Read(*a, "attack", "encoder_only", c.encoder_only);
  }
  if (const json* e = r.Section(doc, "", "evaluation",
                                {"thresholds", "ood_size", "holdout_size"})) {
    r.Read(*e, "evaluation", "thresholds", s.eval.thresholds);
    r.Read(*e, "evaluation", "ood_size", s.eval.ood_size);
    r.Read(*e, "evaluation", "holdout_size", s.eval.holdout_size);
  }
  // Range checks run even when some fields were mistyped, so one pass
  // reports everything.
  try {
    s.Validate();
  } catch (const ValidationError& e) {
    problems.insert(problems.end(), e.problems().begin(), e.problems().end());
  }
  if (!problems.empty()) throw ValidationError(problems);
  return out;
}

ordered_json ToJson(const ExperimentConfig& cfg) {
  const ScenarioConfig& s = cfg.scenario;
  ordered_json j;
  j["seed"] = s.seed;
  j["rounds"] = s.rounds;
  j["participation"] = s.participation;
  j["output"] = {{"dir", cfg.output_dir}, {"checkpoints", cfg.checkpoints}};
  const DatasetConfig& d = s.dataset;
  j["dataset"] = {{"source", d.source},
                  {"num_classes", d.num_classes},
                  {"per_class", d.per_class},
                  {"dim", d.dim},
                  {"spread", d.spread},
                  {"radius", d.radius},
                  {"path", d.path},
                  {"file",
                   {{"label_column", d.schema.label_column},
                    {"delimiter", DelimiterName(d.schema.delimiter)},
                    {"header", d.schema.header},
                    {"num_classes", d.schema.num_classes}}},
                  {"test_fraction", d.test_fraction}};
  j["partition"] = {{"num_clients", s.partition.num_clients}, {"beta", s.partition.beta}};
  j["partition"]["seed"] = s.partition_seed ? ordered_json(*s.partition_seed) : ordered_json();
  j["model"] = {{"hidden", s.model.hidden},
                {"activation", ActivationName(s.model.activation)},
                {"feature_activation", ActivationName(s.model.feature_activation)},
                {"prior_weight", s.model.prior_weight},
                {"score_clamp", s.model.score_clamp},
                {"head_bias_init", s.model.head_bias_init},
                {"uniform_prior_init", s.uniform_prior_init}};
  const TrainConfig& t = s.train;
  j["training"] = {{"learning_rate", t.learning_rate},
                   {"lambda1", t.lambda1},
                   {"lambda2", t.lambda2},
                   {"lambda3", t.lambda3},
                   {"epsilon", t.epsilon},
                   {"local_epochs", t.local_epochs},
                   {"batch_size", t.batch_size},
                   {"grad_clip", t.grad_clip},
                   {"prior_update", PriorUpdateName(t.prior_update)},
                   {"terms",
                    {{"ce", t.terms.ce},
                     {"cor", t.terms.cor},
                     {"inc", t.terms.inc},
                     {"evi", t.terms.evi},
                     {"neg", t.terms.neg}}}};
  j["finetune"] = {{"enabled", s.finetune_enabled},
                   {"epochs", s.finetune.epochs},
                   {"learning_rate", s.finetune.learning_rate},
                   {"filter_no", s.finetune.filter_no},
                   {"uniform_generic_prior", s.finetune.uniform_generic_prior}};
  const DefenseConfig& f = s.defense;
  j["defense"] = {{"rule", AggregationRuleName(f.rule)},
                  {"evidence_cap", f.filter.evidence_cap},
                  {"similarity_tau", f.filter.similarity_tau},
                  {"min_cluster", f.filter.min_cluster},
                  {"overflow_filter", f.filter.overflow_enabled},
                  {"similarity_filter", f.filter.similarity_enabled},
                  {"trim", f.robust.trim},
                  {"assumed_attackers", f.robust.assumed_attackers},
                  {"multi_krum_m", f.robust.multi_krum_m},
                  {"clip_norm", f.robust.clip_norm}};
  const AttackConfig& a = s.attack;
  j["attack"] = {{"kind", AttackKindName(a.kind)},
                 {"malicious_ratio", a.malicious_ratio},
                 {"z", a.z},
                 {"lambda_scale", a.lambda_scale},
                 {"noise_sigma", a.noise_sigma},
                 {"encoder_only", a.encoder_only}};
  j["evaluation"] = {{"thresholds", s.eval.thresholds},
                     {"ood_size", s.eval.ood_size},
                     {"holdout_size", s.eval.holdout_size}};
  return j;
}

// 1-based line and column of byte offset `pos`.
std::pair<int, int> LineColumn(const std::string& text, size_t pos) {
  int line = 1, col = 1;
  for (size_t i = 0; i < pos && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

// Parses with comments allowed and duplicate keys reported.
json ParseDocument(const std::string& text) {
  struct Frame {
    bool object;
    std::string path;
    std::set<std::string> keys;
    std::string last_key;
  };
  std::vector<Frame> stack;
  std::vector<std::string> duplicates;
  auto child_path = [&]() -> std::string {
    if (stack.empty()) return "";
    const Frame& f = stack.back();
    return f.object ? Join(f.path, f.last_key) : f.path + "[]";
  };
  json::parser_callback_t cb = [&](int, json::parse_event_t ev, json& value) {
    switch (ev) {
      case json::parse_event_t::object_start:
        stack.push_back({true, child_path(), {}, {}});
        break;
      case json::parse_event_t::array_start:
        stack.push_back({false, child_path(), {}, {}});
        break;
      case json::parse_event_t::object_end:
      case json::parse_event_t::array_end:
        stack.pop_back();
        break;
      case json::parse_event_t::key: {
        Frame& f = stack.back();
        f.last_key = value.get<std::string>();
        if (!f.keys.insert(f.last_key).second) {
          duplicates.push_back(Join(f.path, f.last_key) + ": duplicate key");
        }
        break;
      }
      default:
        break;
    }
    return true;
  };
  json doc;
  try {
    doc = json::parse(text, cb, /*allow_exceptions=*/true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    const size_t pos = e.byte > 0 ? e.byte - 1 : 0;
    auto [line, col] = LineColumn(text, pos);
    std::string msg = e.what();
    // Drop the library's own prefix up to the first ": ".
    const size_t cut = msg.find(": ");
    if (cut != std::string::npos) msg = msg.substr(cut + 2);
    throw ParseError(msg, line, col);
  }
  if (!duplicates.empty()) throw ValidationError(duplicates);
  return doc;
}

void ApplyOverrides(json& doc, const std::vector<std::string>& overrides) {
  std::vector<std::string> problems;
  for (const std::string& o : overrides) {
    const size_t eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      problems.push_back("override '" + o + "': expected key=value");
      continue;
    }
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded()) value = raw;
    json* node = &doc;
    std::string path;
    size_t start = 0;
    bool ok = true;
    while (true) {
      const size_t dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
      if (part.empty()) {
        problems.push_back("override '" + o + "': empty key segment");
        ok = false;
        break;
      }
      if (!node->is_object()) {
        problems.push_back(path + ": override target is not a section");
        ok = false;
        break;
      }
      path = Join(path, part);
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      if (node->is_null()) *node = json::object();
      start = dot + 1;
    }
    if (ok) *node = std::move(value);
  }
  if (!problems.empty()) throw ValidationError(problems);
}

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream OpenOut(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

void CsvHeader(std::ostream& out, const char* name, const char* columns) {
  out << "# schema: tpfl-" << name << "/" << kSchemaVersion << "\n" << columns << "\n";
}

std::string Field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

void WriteRoundRows(std::ostream& rounds, std::ostream& audit, const RoundReport& r) {
  size_t participants = 0;
  for (const ClientRoundStats& c : r.clients) participants += c.participated;
  rounds << r.round << ',' << participants << ',' << Num(r.mean_accuracy) << ','
         << Num(r.mean_uncertainty) << ',' << r.rejected_benign << ',' << r.rejected_malicious
         << ',' << (r.audit.degenerate_fallback ? 1 : 0) << ',' << Num(r.attack_gamma) << '\n';
  for (const ClientRoundStats& c : r.clients) {
    if (!c.participated) continue;
    const Rejection* why = nullptr;
    for (const Rejection& rej : r.audit.rejections) {
      if (rej.client_id == c.client_id) why = &rej;
    }
    audit << r.round << ',' << c.client_id << ',' << (c.malicious ? 1 : 0) << ','
          << (c.rejected ? "rejected" : "kept") << ','
          << (why ? FilterStageName(why->stage) : std::string()) << ','
          << Num(c.model_uncertainty) << ',' << Field(why ? why->reason : std::string()) << '\n';
  }
  rounds.flush();
  audit.flush();
}

void WriteEval(std::ostream& out, const EvaluationReport& ev) {
  CsvHeader(out, "eval", "section,client_id,threshold,metric,value");
  auto row = [&](const char* section, const std::string& client, const std::string& t,
                 const char* metric, double v) {
    out << section << ',' << client << ',' << t << ',' << metric << ',' << Num(v) << '\n';
  };
  for (size_t i = 0; i < ev.thresholds.size(); ++i) {
    const ThresholdMetrics& p = ev.pooled[i];
    const std::string t = Num(ev.thresholds[i]);
    row("pooled", "", t, "total", static_cast<double>(p.total));
    row("pooled", "", t, "accepted", static_cast<double>(p.accepted));
    row("pooled", "", t, "correct", static_cast<double>(p.correct));
    row("pooled", "", t, "accuracy", p.accuracy);
    row("pooled", "", t, "coverage", p.coverage);
    row("mean", "", t, "accuracy", ev.mean_accuracy[i]);
    row("mean", "", t, "coverage", ev.mean_coverage[i]);
  }
  for (const ClientEvaluation& c : ev.clients) {
    const std::string id = std::to_string(c.client_id);
    for (const ThresholdMetrics& m : c.per_threshold) {
      const std::string t = Num(m.threshold);
      row("client", id, t, "total", static_cast<double>(m.total));
      row("client", id, t, "accepted", static_cast<double>(m.accepted));
      row("client", id, t, "accuracy", m.accuracy);
      row("client", id, t, "coverage", m.coverage);
    }
    row("client", id, "", "mean_uncertainty", c.mean_uncertainty);
  }
  row("ood", "", "", "auroc", ev.ood_auroc);
  row("ood", "", "", "id_mean_uncertainty", ev.id_mean_uncertainty);
  row("ood", "", "", "ood_mean_uncertainty", ev.ood_mean_uncertainty);
  const size_t bins = ev.id_histogram.size();
  for (size_t b = 0; b < bins; ++b) {
    const std::string upper = Num(static_cast<double>(b + 1) / static_cast<double>(bins));
    row("histogram", "", upper, "id_count", static_cast<double>(ev.id_histogram[b]));
    row("histogram", "", upper, "ood_count", static_cast<double>(ev.ood_histogram[b]));
  }
}

MetricList Metrics(const std::vector<RoundReport>& rounds, const EvaluationReport& ev) {
  MetricList m;
  m.emplace_back("rounds_completed", static_cast<double>(rounds.size()));
  m.emplace_back("final_round_accuracy", rounds.empty() ? NAN : rounds.back().mean_accuracy);
  for (size_t i = 0; i < ev.thresholds.size(); ++i) {
    const std::string t = Num(ev.thresholds[i]);
    m.emplace_back("accuracy@" + t, ev.pooled[i].accuracy);
    m.emplace_back("coverage@" + t, ev.pooled[i].coverage);
    m.emplace_back("mean_client_accuracy@" + t, ev.mean_accuracy[i]);
  }
  m.emplace_back("ood_auroc", ev.ood_auroc);
  m.emplace_back("id_mean_uncertainty", ev.id_mean_uncertainty);
  m.emplace_back("ood_mean_uncertainty", ev.ood_mean_uncertainty);
  size_t up_b = 0, up_m = 0, rej_b = 0, rej_m = 0;
  for (const RoundReport& r : rounds) {
    for (const ClientRoundStats& c : r.clients) {
      if (!c.participated) continue;
      ++(c.malicious ? up_m : up_b);
    }
    rej_b += r.rejected_benign;
    rej_m += r.rejected_malicious;
  }
  m.emplace_back("benign_uploads", static_cast<double>(up_b));
  m.emplace_back("malicious_uploads", static_cast<double>(up_m));
  m.emplace_back("benign_rejected", static_cast<double>(rej_b));
  m.emplace_back("malicious_rejected", static_cast<double>(rej_m));
  m.emplace_back("benign_rejection_rate",
                 up_b ? static_cast<double>(rej_b) / static_cast<double>(up_b) : NAN);
  m.emplace_back("malicious_rejection_rate",
                 up_m ? static_cast<double>(rej_m) / static_cast<double>(up_m) : NAN);
  return m;
}

// JSON has no NaN or infinity; those become null.
ordered_json MetricValue(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(); }

std::string ErrorKind(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e)) return "validation";
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const NonFiniteLossError*>(&e)) return "non_finite_loss";
  if (dynamic_cast<const DomainError*>(&e)) return "domain";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const DegenerateError*>(&e)) return "degenerate";
  if (dynamic_cast<const EmptyInputError*>(&e)) return "empty_input";
  if (dynamic_cast<const Error*>(&e)) return "error";
  return "internal";
}

void WriteError(const fs::path& dir, const std::string& category, const std::exception& e,
                size_t rounds_done) {
  ordered_json j;
  j["schema"] = "tpfl-error";
  j["schema_version"] = kSchemaVersion;
  j["artifact_version"] = ArtifactVersion();
  j["status"] = "error";
  j["category"] = category;
  j["error"] = ErrorKind(e);
  j["message"] = e.what();
  j["rounds_completed"] = rounds_done;
  if (const auto* v = dynamic_cast<const ValidationError*>(&e)) j["problems"] = v->problems();
  if (const auto* p = dynamic_cast<const ParseError*>(&e)) {
    j["line"] = p->line();
    j["column"] = p->column();
  }
  if (const auto* n = dynamic_cast<const NonFiniteLossError*>(&e)) {
    j["epoch"] = n->epoch();
    j["batch"] = n->batch();
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream out(dir / "error.json", std::ios::binary | std::ios::trunc);
  if (out) out << j.dump(2) << "\n";
}

std::string Sanitize(const std::string& s) {
  std::string out;
  for (char c : s) {
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
  }
  return out;
}

// Splits on `sep` outside brackets and quotes.
std::vector<std::string> SplitTop(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  int depth = 0;
  bool quoted = false;
  for (char c : s) {
    if (c == '"') quoted = !quoted;
    if (!quoted && (c == '[' || c == '{')) ++depth;
    if (!quoted && (c == ']' || c == '}')) --depth;
    if (c == sep && depth == 0 && !quoted) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  return parts;
}

std::string Trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::string ArtifactVersion() { return TPFL_VERSION; }

ExperimentConfig ParseConfigText(const std::string& text,
                                 const std::vector<std::string>& overrides) {
  json doc = ParseDocument(text);
  ApplyOverrides(doc, overrides);
  return FromJson(doc);
}

ExperimentConfig ParseConfigFile(const std::string& path,
                                 const std::vector<std::string>& overrides) {
  if (!fs::exists(path)) throw Error("config file '" + path + "' does not exist");
  ExperimentConfig cfg = ParseConfigText(ReadFile(path), overrides);
  std::string& data = cfg.scenario.dataset.path;
  if (!data.empty() && fs::path(data).is_relative()) {
    data = (fs::absolute(path).parent_path() / data).lexically_normal().string();
  }
  return cfg;
}

void WriteErrorReport(const fs::path& dir, const std::exception& e) {
  const bool input = dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ParseError*>(&e);
  WriteError(dir, input ? "validation" : "runtime", e, 0);
}

std::string ConfigToJson(const ExperimentConfig& config) { return ToJson(config).dump(2); }

fs::path ResolveOutputDir(const ExperimentConfig& config, const std::string& explicit_dir,
                          const std::string& config_path) {
  if (!explicit_dir.empty()) return explicit_dir;
  const char* env = std::getenv(kOutputRootEnv);
  const fs::path root = env && *env ? fs::path(env) : fs::path("runs");
  if (!config.output_dir.empty()) {
    const fs::path dir(config.output_dir);
    return dir.is_absolute() || !(env && *env) ? dir : root / dir;
  }
  const std::string stem = config_path.empty() ? "run" : fs::path(config_path).stem().string();
  return root / (stem + "-s" + std::to_string(config.scenario.seed));
}

RunOutcome RunExperiment(const ExperimentConfig& config, const fs::path& out_dir) {
  RunOutcome outcome;
  outcome.output_dir = out_dir;
  try {
    config.scenario.Validate();
    fs::create_directories(out_dir);
    std::ofstream rounds = OpenOut(out_dir / "rounds.csv");
    std::ofstream audit = OpenOut(out_dir / "audit.csv");
    CsvHeader(rounds, "rounds",
              "round,participants,mean_accuracy,mean_uncertainty,rejected_benign,"
              "rejected_malicious,degenerate_fallback,attack_gamma");
    CsvHeader(audit, "audit", "round,client_id,malicious,decision,stage,model_uncertainty,reason");
    rounds.flush();
    audit.flush();
    TrainingResult result = RunTraining(config.scenario, [&](const RoundReport& r) {
      outcome.rounds.push_back(r);
      WriteRoundRows(rounds, audit, r);
    });
    outcome.evaluation = EvaluateTraining(result);
    {
      std::ofstream ev = OpenOut(out_dir / "eval.csv");
      WriteEval(ev, outcome.evaluation);
    }
    if (config.checkpoints) {
      const fs::path ck = out_dir / "checkpoints";
      fs::create_directories(ck);
      for (size_t i = 0; i < result.ensembles.size(); ++i) {
        const std::string base = "client_" + std::to_string(result.ensemble_clients[i]);
        const InferenceEnsemble& e = result.ensembles[i];
        e.personalized.SaveFile((ck / (base + "_personalized.tpm")).string());
        e.generic_up.SaveFile((ck / (base + "_generic_up.tpm")).string());
        e.generic_down.SaveFile((ck / (base + "_generic_down.tpm")).string());
      }
    }
    outcome.metrics = Metrics(outcome.rounds, outcome.evaluation);
    ordered_json summary;
    summary["schema"] = "tpfl-summary";
    summary["schema_version"] = kSchemaVersion;
    summary["artifact_version"] = ArtifactVersion();
    summary["status"] = "ok";
    ordered_json metrics = ordered_json::object();
    for (const auto& [k, v] : outcome.metrics) metrics[k] = MetricValue(v);
    summary["metrics"] = metrics;
    summary["config"] = ToJson(config);
    std::ofstream s = OpenOut(out_dir / "summary.json");
    s << summary.dump(2) << "\n";
  } catch (const ValidationError& e) {
    WriteError(out_dir, "validation", e, outcome.rounds.size());
    throw;
  } catch (const std::exception& e) {
    WriteError(out_dir, "runtime", e, outcome.rounds.size());
    throw;
  }
  return outcome;
}

std::string CompareRuns(const std::vector<std::string>& paths) {
  if (paths.empty()) throw EmptyInputError("compare needs at least one summary");
  // A run directory stands for its summary.json.
  std::vector<std::string> summary_paths;
  for (const std::string& p : paths) {
    summary_paths.push_back(fs::is_directory(p) ? (fs::path(p) / "summary.json").string() : p);
  }
  std::vector<ordered_json> docs;
  std::vector<std::string> problems;
  for (const std::string& p : summary_paths) {
    ordered_json j = ordered_json::parse(ReadFile(p), nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) {
      problems.push_back(p + ": not a JSON summary");
    } else if (j.value("schema", "") != "tpfl-summary") {
      problems.push_back(p + ": schema is not tpfl-summary");
    } else if (j.value("schema_version", -1) != kSchemaVersion) {
      problems.push_back(p + ": schema_version " + j["schema_version"].dump() + ", expected " +
                         std::to_string(kSchemaVersion));
    } else if (!j.contains("metrics") || !j["metrics"].is_object() || !j.contains("config")) {
      problems.push_back(p + ": missing metrics or config");
    }
    docs.push_back(std::move(j));
  }
  if (!problems.empty()) throw ValidationError(problems);
  std::vector<std::string> names;
  for (const auto& [k, v] : docs[0]["metrics"].items()) names.push_back(k);
  for (size_t i = 1; i < docs.size(); ++i) {
    std::vector<std::string> other;
    for (const auto& [k, v] : docs[i]["metrics"].items()) other.push_back(k);
    if (other != names) {
      problems.push_back(summary_paths[i] + ": metric columns differ from " + summary_paths[0]);
    }
  }
  if (!problems.empty()) throw ValidationError(problems);

  auto value = [](const ordered_json& v) {
    return v.is_number() ? v.get<double>() : std::numeric_limits<double>::quiet_NaN();
  };
  std::ostringstream out;
  out << "# schema: tpfl-compare/" << kSchemaVersion << "\n";
  out << "run,rule,attack,malicious_ratio,seed";
  for (const std::string& n : names) out << ',' << Field(n);
  for (const std::string& n : names) out << ',' << Field("delta_" + n);
  out << '\n';
  for (size_t i = 0; i < docs.size(); ++i) {
    const ordered_json& c = docs[i]["config"];
    const fs::path p(summary_paths[i]);
    std::string label = p.has_parent_path() ? p.parent_path().filename().string() : p.string();
    if (label.empty()) label = p.string();
    out << Field(label) << ',' << Field(c["defense"].value("rule", "")) << ','
        << Field(c["attack"].value("kind", "")) << ','
        << Num(c["attack"].value("malicious_ratio", std::numeric_limits<double>::quiet_NaN())) << ',' << c.value("seed", uint64_t{0});
    for (const std::string& n : names) out << ',' << Num(value(docs[i]["metrics"][n]));
    for (const std::string& n : names) {
      const double a = value(docs[i]["metrics"][n]), b = value(docs[0]["metrics"][n]);
      // Missing in both runs compares equal.
      out << ',' << Num(std::isnan(a) && std::isnan(b) ? 0.0 : a - b);
    }
    out << '\n';
  }
  return out.str();
}

std::vector<GridAxis> ParseGrid(const std::string& spec) {
  const std::string s = Trim(spec);
  if (s == "security") {
    return {{"attack.kind", {"random", "lie", "mpaf", "label_flip", "stat_opt"}},
            {"attack.malicious_ratio", {"0.1", "0.2", "0.3", "0.4", "0.5"}}};
  }
  std::vector<GridAxis> axes;
  std::vector<std::string> problems;
  std::set<std::string> seen;
  for (const std::string& part : SplitTop(s, ';')) {
    const std::string item = Trim(part);
    if (item.empty()) continue;
    const size_t eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      problems.push_back("grid axis '" + item + "': expected key=v1,v2,...");
      continue;
    }
    GridAxis axis{Trim(item.substr(0, eq)), {}};
    for (const std::string& v : SplitTop(item.substr(eq + 1), ',')) {
      const std::string t = Trim(v);
      if (t.empty()) {
        problems.push_back("grid axis '" + axis.key + "': empty value");
      } else {
        axis.values.push_back(t);
      }
    }
    if (!seen.insert(axis.key).second) problems.push_back("grid axis '" + axis.key + "': repeated");
    axes.push_back(std::move(axis));
  }
  if (axes.empty() && problems.empty()) problems.push_back("grid: no axes");
  if (!problems.empty()) throw ValidationError(problems);
  return axes;
}

std::vector<std::vector<std::string>> ExpandGrid(const std::vector<GridAxis>& axes) {
  std::vector<std::vector<std::string>> cells{{}};
  for (const GridAxis& a : axes) {
    std::vector<std::vector<std::string>> next;
    for (const auto& c : cells) {
      for (const std::string& v : a.values) {
        next.push_back(c);
        next.back().push_back(a.key + "=" + v);
      }
    }
    cells = std::move(next);
  }
  return cells;
}

SweepResult RunSweep(const std::string& config_path, const std::vector<GridAxis>& grid,
                     const std::vector<std::string>& base_overrides, const fs::path& out_dir,
                     int jobs) {
  const auto cells = ExpandGrid(grid);
  std::vector<ExperimentConfig> configs;
  std::vector<std::string> problems;
  SweepResult result;
  for (size_t i = 0; i < cells.size(); ++i) {
    std::vector<std::string> ov = base_overrides;
    ov.insert(ov.end(), cells[i].begin(), cells[i].end());
    std::string name = "cell" + std::to_string(i);
    for (const std::string& o : cells[i]) {
      const size_t eq = o.find('=');
      const std::string key = o.substr(0, eq);
      name += "_" + Sanitize(key.substr(key.rfind('.') + 1)) + "-" + Sanitize(o.substr(eq + 1));
    }
    try {
      configs.push_back(ParseConfigFile(config_path, ov));
    } catch (const ValidationError& e) {
      for (const std::string& p : e.problems()) problems.push_back(name + ": " + p);
      configs.emplace_back();
    }
    result.cells.push_back({cells[i], out_dir / name, false, {}});
  }
  if (!problems.empty()) throw ValidationError(problems);

  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t i = next++; i < cells.size(); i = next++) {
      SweepCell& cell = result.cells[i];
      try {
        RunExperiment(configs[i], cell.output_dir);
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
    }
  };
  const size_t n = static_cast<size_t>(std::max(1, jobs));
  std::vector<std::thread> pool;
  for (size_t t = 1; t < std::min(n, cells.size()); ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  std::vector<std::string> summaries;
  for (const SweepCell& c : result.cells) {
    if (c.ok) summaries.push_back((c.output_dir / "summary.json").string());
  }
  fs::create_directories(out_dir);
  result.table = out_dir / "sweep.csv";
  std::ofstream table = OpenOut(result.table);
  if (summaries.empty()) {
    table << "# schema: tpfl-compare/" << kSchemaVersion << "\n";
  } else {
    table << CompareRuns(summaries);
  }
  return result;
}

}  // namespace tpfl
