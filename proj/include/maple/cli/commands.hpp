// SPDX-License-Identifier: Apache-2.0
//
// maple gen-prompts | gen-synthetic | train | eval | sweep
// Exit codes: 0 ok, 1 runtime error, 2 usage error.

#pragma once

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "maple/cli/config.hpp"
#include "maple/data/synthetic.hpp"
#include "maple/model/entity_head.hpp"
#include "maple/prompt/backend.hpp"
#include "maple/prompt/builder.hpp"
#include "maple/prompt/http_backend.hpp"
#include "maple/train/experiment.hpp"

namespace maple::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

struct GenPromptsArgs {
  std::string classes;
  std::size_t entities = kDefaultEntitiesPerScale;
  std::string backend = "fixture";
  std::string fixture;
  std::string templates;
  std::size_t retry_budget = kDefaultRetryBudget;
  std::string out = "pack.json";
};

inline int cmd_gen_prompts(const GenPromptsArgs& a, std::ostream& out) {
  const auto subtypes = split_list(a.classes);
  if (subtypes.size() < 2) throw UsageError("--classes needs at least two comma-separated subtypes");
  PromptBuilderOptions options;
  options.retry_budget = a.retry_budget;
  if (!a.templates.empty()) options.templates = QueryTemplates::load(a.templates);
  std::unique_ptr<LlmBackend> backend;
  if (a.backend == "fixture") {
    backend = std::make_unique<FixtureBackend>(a.fixture.empty() ? FixtureBackend() : FixtureBackend::from_file(a.fixture));
  } else if (a.backend == "http") {
    backend = std::make_unique<HttpChatBackend>(HttpBackendConfig::from_env());
  } else {
    throw UsageError("--backend must be fixture or http");
  }
  PromptBuilder builder(*backend, subtypes, options);
  const PromptPack pack = builder.build(a.entities);
  pack.save(a.out);
  out << "wrote " << a.out << " (" << subtypes.size() << " subtypes, " << a.entities << " entities per scale, "
      << builder.queries_issued() << " queries)\n";
  return kExitOk;
}

struct GenSyntheticArgs {
  std::string out;
  SyntheticSpec spec;
};

inline int cmd_gen_synthetic(const GenSyntheticArgs& a, std::ostream& out) {
  const std::filesystem::path dir(a.out);
  const auto ds = generate_synthetic(a.spec, dir);
  std::ofstream cfg(dir / "experiment.cfg", std::ios::trunc);
  cfg << "# synthetic dataset: " << a.spec.classes << " classes, separation " << format_number(a.spec.separation)
      << ", seed " << a.spec.seed << "\n"
      << "manifest = manifest.json\n"
      << "prompt_pack = pack.json\n"
      << "output_dir = runs\n"
      << "shots = 16\n"
      << "n_entities = " << a.spec.entities_per_scale << "\n"
      << "seed = " << a.spec.seed << "\n";
  out << "wrote " << ds.manifest.slides.size() << " slides to " << dir.string() << "\n";
  return kExitOk;
}

inline ExperimentConfig config_with_overrides(const std::string& path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = load_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)), std::filesystem::current_path());
  }
  cfg.run.validate();
  return cfg;
}

inline void print_summary(std::ostream& out, const ExperimentConfig& cfg, const MetricReport& r) {
  out << cfg.setting << " shots=" << cfg.run.shots << " auc=" << (r.auc ? format_mean_std(*r.auc) : "n/a")
      << " f1=" << format_mean_std(r.f1) << " acc=" << format_mean_std(r.acc) << "\n";
}

inline int cmd_train(const ExperimentConfig& cfg, std::ostream& out) {
  if (cfg.output_dir.empty()) throw ConfigError("output_dir is required for train");
  const ExperimentData data = ExperimentData::load(cfg);
  std::filesystem::create_directories(cfg.output_dir);
  {
    std::ofstream resolved(cfg.output_dir / "config.cfg", std::ios::trunc);
    resolved << config_to_text(cfg);
  }
  const auto result = run_experiment(cfg, data);
  print_summary(out, cfg, result.report);
  return kExitOk;
}

inline FewShotSplit read_split_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
  nlohmann::json j;
  in >> j;
  FewShotSplit s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.shots = j.at("shots").get<std::size_t>();
  s.train = j.at("train").get<std::vector<std::string>>();
  s.val = j.at("val").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  return s;
}

// Audit files for the test slides of one repeat: selection.csv,
// attention.csv and graphs/<slide>.json.
inline void write_audit(const std::filesystem::path& dir, const ExperimentData& data, const PromptSource& source,
                        const ModelParams<float>& params, const std::vector<std::string>& ids, const RunConfig& run) {
  std::filesystem::create_directories(dir / "graphs");
  std::ofstream sel_csv(dir / "selection.csv", std::ios::trunc);
  std::ofstream att_csv(dir / "attention.csv", std::ios::trunc);
  const PromptEmbeddings<float> emb = source.values(params);
  bool first = true;
  for (const auto& id : ids) {
    std::array<SelectionResult, 2> sel;
    const auto slide = select_slide<float>(id, data.manifest.slide(id).label, data.bags.at(id), source.fixed(), run, &sel);
    Tape<float> tape;
    auto pv = bind_params(tape, params, false);
    const auto tr = forward_slide(tape, pv, as_constants(tape, emb), slide, run);
    std::vector<std::pair<std::string, std::string>> nodes;
    for (Scale s : run.scales()) {
      const auto names = data.entity_names(s, run.n_entities);
      write_selection_csv(sel_csv, id, s, sel[scale_index(s)], first);
      write_attention_csv(att_csv, id, std::string(scale_name(s)), names,
                          tr.entity[scale_index(s)]->weights.value(), sel[scale_index(s)].kept, first);
      for (const auto& n : names) nodes.emplace_back(scale_name(s), n);
      first = false;
    }
    if (tr.gat) {
      std::ofstream g(dir / "graphs" / (id + ".json"), std::ios::trunc);
      g << graph_dump(nodes, tr.graph, tr.gat->coefficients.value()).dump(2) << "\n";
    }
  }
}

// Re-scores every saved repeat of a trained experiment on its test split.
inline int cmd_eval(const ExperimentConfig& cfg, const std::string& audit_dir, std::ostream& out) {
  if (cfg.output_dir.empty()) throw ConfigError("output_dir is required for eval");
  const ExperimentData data = ExperimentData::load(cfg);
  const PromptSource source = data.source(cfg.run);
  std::vector<MetricEntry> entries;
  for (std::size_t i = 0; i < cfg.n_repeats; ++i) {
    const auto dir = cfg.output_dir / ("repeat_" + std::to_string(i));
    const FewShotSplit split = read_split_json(dir / "split.json");
    const ModelParams<float> params = load_checkpoint(dir / "checkpoint", cfg.run);
    RunConfig run = cfg.run;
    run.seed = cfg.run.seed + i;
    const auto test_set = select_slides(data, split.test, source, run);
    const Evaluation ev = evaluate(params, source, test_set, run);
    entries.push_back(compute_metrics(ev.probabilities, ev.labels));
    write_predictions_csv(dir / "predictions.csv", split.test, data.manifest.classes, ev);
    if (!audit_dir.empty() && i == 0) write_audit(audit_dir, data, source, params, split.test, run);
  }
  const MetricReport report = aggregate_repeats(entries, cfg.std_mode);
  write_report(cfg.output_dir, cfg, report);
  print_summary(out, cfg, report);
  return kExitOk;
}

inline std::vector<std::string> default_sweep_values(const std::string& key) {
  if (key == "lambda") return {"0", "0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1"};
  if (key == "n_neighbors") return {"1", "3", "5", "7", "9", "11", "13"};
  if (key == "n_entities") return {"4", "8", "12", "16", "20"};
  if (key == "r") return {"0.1", "0.3", "0.5", "0.7", "0.9"};
  if (key == "shots") return {"1", "2", "4", "8", "16"};
  throw UsageError("sweep key must be one of lambda, n_neighbors, n_entities, r, shots");
}

struct SweepRow {
  std::string value;
  MetricReport report;
};

// One full experiment per value, each in <output_dir>/sweep_<key>/<key>_<value>/,
// plus summary.csv with one row per value.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::string& key,
                                       std::vector<std::string> values, std::size_t parallel) {
  const auto defaults = default_sweep_values(key);
  if (values.empty()) values = defaults;
  if (base.output_dir.empty()) throw ConfigError("output_dir is required for sweep");
  std::vector<ExperimentConfig> configs;
  for (const auto& v : values) {
    ExperimentConfig cfg = base;
    set_config_value(cfg, key, v);
    cfg.run.validate();
    cfg.output_dir = base.output_dir / ("sweep_" + key) / (key + "_" + v);
    configs.push_back(std::move(cfg));
  }
  const ExperimentData data = ExperimentData::load(base);

  std::vector<SweepRow> rows(values.size());
  std::vector<std::exception_ptr> errors(values.size());
  auto run_one = [&](std::size_t i) {
    try {
      std::filesystem::create_directories(configs[i].output_dir);
      {
        std::ofstream resolved(configs[i].output_dir / "config.cfg", std::ios::trunc);
        resolved << config_to_text(configs[i]);
      }
      rows[i] = {values[i], run_experiment(configs[i], data).report};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (parallel <= 1) {
    for (std::size_t i = 0; i < configs.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < std::min(parallel, configs.size()); ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < configs.size(); i = next++) run_one(i);
      });
    }
    for (auto& t : workers) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::ofstream summary(base.output_dir / ("sweep_" + key) / "summary.csv", std::ios::trunc);
  summary << "key,value,auc_mean,auc_std,f1_mean,f1_std,acc_mean,acc_std\n";
  char buf[192];
  for (const auto& row : rows) {
    const MeanStd auc = row.report.auc.value_or(MeanStd{std::nan(""), std::nan("")});
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", auc.mean, auc.std, row.report.f1.mean,
                  row.report.f1.std, row.report.acc.mean, row.report.acc.std);
    summary << key << ',' << row.value << ',' << buf << '\n';
  }
  return rows;
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot whole-slide classification with multi-scale prompt alignment", "maple"};
  app.require_subcommand(1);

  GenPromptsArgs gp;
  auto* gen_prompts = app.add_subcommand("gen-prompts", "Build a prompt pack through an LLM backend");
  gen_prompts->add_option("--classes", gp.classes, "Comma-separated subtype names")->required();
  gen_prompts->add_option("--entities", gp.entities, "Entities per scale")->capture_default_str();
  gen_prompts->add_option("--backend", gp.backend, "fixture or http (credentials in $MAPLE_LLM_API_KEY)")
      ->capture_default_str();
  gen_prompts->add_option("--fixture", gp.fixture, "Fixture JSON replacing the built-in one");
  gen_prompts->add_option("--templates", gp.templates, "Query template JSON");
  gen_prompts->add_option("--retry-budget", gp.retry_budget, "Extra attempts per discovery slot")->capture_default_str();
  gen_prompts->add_option("--out", gp.out, "Output pack path")->capture_default_str();

  GenSyntheticArgs gs;
  auto* gen_synth = app.add_subcommand("gen-synthetic", "Write a synthetic two-scale dataset");
  gen_synth->add_option("--out", gs.out, "Output directory")->required();
  gen_synth->add_option("--classes", gs.spec.classes)->capture_default_str();
  gen_synth->add_option("--entities", gs.spec.entities_per_scale)->capture_default_str();
  gen_synth->add_option("--instances", gs.spec.instances_per_bag, "Instances per bag and scale")->capture_default_str();
  gen_synth->add_option("--separation", gs.spec.separation, "Class centre distance in noise std units")
      ->capture_default_str();
  gen_synth->add_option("--bags-per-class", gs.spec.bags_per_class)->capture_default_str();
  gen_synth->add_option("--dim", gs.spec.dim)->capture_default_str();
  gen_synth->add_option("--tumor-fraction", gs.spec.tumor_fraction)->capture_default_str();
  gen_synth->add_option("--seed", gs.spec.seed)->capture_default_str();

  std::string config_path;
  std::vector<std::string> overrides;
  auto* train_cmd = app.add_subcommand("train", "Train and test over seeded few-shot repeats");
  train_cmd->add_option("--config", config_path, "Experiment config file")->required();
  train_cmd->add_option("--set", overrides, "Override a config key (key=value), repeatable");

  std::string audit_dir;
  auto* eval_cmd = app.add_subcommand("eval", "Re-score saved checkpoints on their test splits");
  eval_cmd->add_option("--config", config_path, "Experiment config file")->required();
  eval_cmd->add_option("--set", overrides, "Override a config key (key=value), repeatable");
  eval_cmd->add_option("--audit", audit_dir, "Write selection, attention and graph dumps for repeat 0");

  std::string sweep_key;
  std::string sweep_values;
  std::size_t parallel = 1;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run one experiment per value of a hyperparameter");
  sweep_cmd->add_option("--config", config_path, "Experiment config file")->required();
  sweep_cmd->add_option("--key", sweep_key, "lambda, n_neighbors, n_entities, r or shots")->required();
  sweep_cmd->add_option("--values", sweep_values, "Comma-separated values (default: the standard grid)");
  sweep_cmd->add_option("--parallel", parallel, "Concurrent runs")->capture_default_str();
  sweep_cmd->add_option("--set", overrides, "Override a config key (key=value), repeatable");

  std::vector<const char*> argv{"maple"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen_prompts->parsed()) return cmd_gen_prompts(gp, out);
    if (gen_synth->parsed()) return cmd_gen_synthetic(gs, out);
    if (train_cmd->parsed()) return cmd_train(config_with_overrides(config_path, overrides), out);
    if (eval_cmd->parsed()) return cmd_eval(config_with_overrides(config_path, overrides), audit_dir, out);
    if (sweep_cmd->parsed()) {
      const auto cfg = config_with_overrides(config_path, overrides);
      const auto rows = run_sweep(cfg, sweep_key, split_list(sweep_values), parallel);
      for (const auto& row : rows) {
        out << sweep_key << '=' << row.value << ' ';
        print_summary(out, cfg, row.report);
      }
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace maple::cli
