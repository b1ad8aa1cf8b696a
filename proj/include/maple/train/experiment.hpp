// SPDX-License-Identifier: Apache-2.0
//
// Few-shot experiment: seeded repeats of split -> select -> train -> test.

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "maple/data/dataset.hpp"
#include "maple/eval/metrics.hpp"
#include "maple/model/forward.hpp"
#include "maple/model/params.hpp"
#include "maple/prompt/pack.hpp"
#include "maple/text/embeddings.hpp"
#include "maple/train/trainer.hpp"

namespace maple {

struct ExperimentConfig {
  std::filesystem::path manifest;
  std::filesystem::path prompt_pack;  // text prompts, trainable context
  std::filesystem::path embeddings;   // or a precomputed bundle
  std::filesystem::path output_dir;
  RunConfig run;
  std::size_t n_repeats = 5;
  bool allow_short_class = false;
  StdMode std_mode = StdMode::population;
  std::string setting = "maple";
};

// Everything read from disk once and shared by every run over the same data.
struct ExperimentData {
  DatasetManifest manifest;
  std::optional<PromptPack> pack;
  std::optional<EmbeddingBundle> bundle;
  std::map<std::string, std::array<Matrix<float>, 2>> bags;

  static ExperimentData load(const ExperimentConfig& cfg) {
    ExperimentData d;
    d.manifest = DatasetManifest::load(cfg.manifest);
    if (!cfg.embeddings.empty()) {
      d.bundle = load_embedding_bundle(cfg.embeddings);
      if (d.bundle->subtypes != d.manifest.classes) throw ConfigError("embedding bundle subtypes differ from manifest classes");
    } else if (!cfg.prompt_pack.empty()) {
      d.pack = PromptPack::load(cfg.prompt_pack);
      if (d.pack->subtypes != d.manifest.classes) throw ConfigError("prompt pack subtypes differ from manifest classes");
    } else {
      throw ConfigError("either prompt_pack or embeddings must be given");
    }
    for (const auto& s : d.manifest.slides) {
      auto& slot = d.bags[s.id];
      for (Scale sc : cfg.run.scales()) slot[scale_index(sc)] = d.manifest.load_bag(s, sc).features;
    }
    return d;
  }

  PromptSource source(const RunConfig& run) const {
    if (bundle) return PromptSource::from_embeddings(bundle->embeddings, run.n_entities);
    return PromptSource::from_pack(*pack, manifest.dim, run.n_entities);
  }

  std::vector<std::string> entity_names(Scale s, std::size_t n) const {
    std::vector<std::string> out;
    if (bundle) {
      out = bundle->entity_names[scale_index(s)];
    } else {
      for (const auto& e : pack->at(s).entities) out.push_back(e.name);
    }
    out.resize(std::min(out.size(), n));
    return out;
  }
};

struct RepeatOutcome {
  FewShotSplit split;
  RunConfig run;  // with the repeat's seed
  TrainResult training;
  Evaluation test;
  MetricEntry metrics;
};

struct ExperimentResult {
  std::vector<RepeatOutcome> repeats;
  MetricReport report;
};

inline std::vector<SlideInstances<float>> select_slides(const ExperimentData& data, const std::vector<std::string>& ids,
                                                        const PromptSource& source, const RunConfig& run) {
  std::vector<SlideInstances<float>> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const SlideEntry& entry = data.manifest.slide(id);
    out.push_back(select_slide<float>(id, entry.label, data.bags.at(id), source.fixed(), run));
  }
  return out;
}

inline void write_split_json(const std::filesystem::path& path, const FewShotSplit& split) {
  nlohmann::json j{{"seed", split.seed}, {"shots", split.shots}, {"train", split.train}, {"val", split.val},
                   {"test", split.test}};
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << "\n";
}

// Columns: slide_id,label,prob_<class>...
inline void write_predictions_csv(const std::filesystem::path& path, const std::vector<std::string>& ids,
                                  const std::vector<std::string>& classes, const Evaluation& ev) {
  std::ofstream out(path, std::ios::trunc);
  out << "slide_id,label";
  for (const auto& c : classes) out << ",prob_" << c;
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i] << ',' << ev.labels[i];
    for (std::size_t c = 0; c < classes.size(); ++c) {
      std::snprintf(buf, sizeof buf, ",%.9g", ev.probabilities(i, c));
      out << buf;
    }
    out << '\n';
  }
}

inline void write_report(const std::filesystem::path& dir, const ExperimentConfig& cfg, const MetricReport& report) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json", std::ios::trunc);
    out << report_json(cfg.setting, cfg.run.shots, report).dump(2) << "\n";
  }
  std::ofstream out(dir / "report.csv", std::ios::trunc);
  write_report_csv(out, cfg.setting, cfg.run.shots, report);
}

// Repeat i uses seed + i for its split and its initialization. With an
// output directory, each repeat writes checkpoint/, history.csv, split.json
// and predictions.csv under repeat_<i>/, plus report.json and report.csv.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentData& data,
                                       const EpochCallback& on_epoch = {}) {
  cfg.run.validate();
  if (cfg.n_repeats < 1) throw ConfigError("n_repeats must be at least 1");
  const PromptSource source = data.source(cfg.run);
  if (source.num_classes() != data.manifest.num_classes()) throw ConfigError("prompt classes differ from manifest");
  if (source.dim() != data.manifest.dim) throw ConfigError("prompt embedding dimension differs from feature dimension");

  const auto splits =
      build_cv_repeats(data.manifest, cfg.run.shots, cfg.n_repeats, cfg.run.seed, cfg.allow_short_class);
  ExperimentResult result;
  std::vector<MetricEntry> entries;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    RepeatOutcome r;
    r.split = splits[i];
    r.run = cfg.run;
    r.run.seed = cfg.run.seed + i;
    const auto train_set = select_slides(data, r.split.train, source, r.run);
    const auto val_set = select_slides(data, r.split.val, source, r.run);
    const auto test_set = select_slides(data, r.split.test, source, r.run);
    r.training = train(source, train_set, val_set, r.run, on_epoch);
    r.test = evaluate(r.training.params, source, test_set, r.run);
    if (test_set.size() >= 2) r.metrics = compute_metrics(r.test.probabilities, r.test.labels);
    entries.push_back(r.metrics);

    if (!cfg.output_dir.empty()) {
      const auto dir = cfg.output_dir / ("repeat_" + std::to_string(i));
      std::filesystem::create_directories(dir);
      save_checkpoint(dir / "checkpoint", r.training.params);
      std::ofstream hist(dir / "history.csv", std::ios::trunc);
      write_history_csv(hist, r.training.history);
      write_split_json(dir / "split.json", r.split);
      write_predictions_csv(dir / "predictions.csv", r.split.test, data.manifest.classes, r.test);
    }
    result.repeats.push_back(std::move(r));
  }
  result.report = aggregate_repeats(entries, cfg.std_mode);
  if (!cfg.output_dir.empty()) write_report(cfg.output_dir, cfg, result.report);
  return result;
}

}  // namespace maple
