// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "maple/data/synthetic.hpp"
#include "maple/train/experiment.hpp"
#include "maple/train/trainer.hpp"
#include "support.hpp"

using namespace maple;
namespace fs = std::filesystem;

namespace {

struct Small {
  SyntheticDataset ds;
  ExperimentConfig cfg;
  ExperimentData data;
};

Small small_dataset(const std::string& name, std::size_t classes, double separation, std::uint64_t seed,
                    std::size_t bags_per_class = 12) {
  SyntheticSpec spec;
  spec.classes = classes;
  spec.separation = separation;
  spec.dim = 16;
  spec.entities_per_scale = 3;
  spec.instances_per_bag = 8;
  spec.bags_per_class = bags_per_class;
  spec.seed = seed;
  Small s;
  s.ds = generate_synthetic(spec, test_support::temp_dir(name));
  s.cfg.manifest = s.ds.manifest_path;
  s.cfg.prompt_pack = s.ds.pack_path;
  s.cfg.run.n_entities = 3;
  s.cfg.run.context_vectors = 4;
  s.cfg.run.shots = 4;
  s.cfg.run.max_epochs = 6;
  s.cfg.run.optimizer.lr = 1e-2;
  s.cfg.run.seed = seed;
  s.data = ExperimentData::load(s.cfg);
  return s;
}

std::vector<SlideInstances<float>> all_slides(const Small& s, const PromptSource& src) {
  std::vector<std::string> ids;
  for (const auto& e : s.data.manifest.slides) ids.push_back(e.id);
  return select_slides(s.data, ids, src, s.cfg.run);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST(AdamW, FirstStepByHand) {
  RunConfig cfg;
  cfg.context_vectors = 1;
  auto p = init_params<float>(2, cfg);
  const auto before = p;
  std::vector<Matrix<float>> grads;
  p.for_each([&](const std::string&, const Matrix<float>& m) { grads.emplace_back(m.rows(), m.cols(), 0.5f); });
  grads.back()(0, 0) = -2.0f;  // tau
  OptimizerConfig oc;
  oc.lr = 0.1;
  oc.weight_decay = 0.5;
  AdamW opt(oc);
  opt.step(p, grads);
  EXPECT_EQ(opt.steps(), 1u);
  // Bias-corrected first step moves by lr * g / (|g| + eps) after decoupled decay.
  const double want = before.gat.weight(1, 0) * (1 - 0.1 * 0.5) - 0.1 * 0.5 / (0.5 + 1e-8);
  EXPECT_NEAR(p.gat.weight(1, 0), want, 1e-6);
  // No decay on the temperature; 0.07 + 0.1 = 0.17.
  EXPECT_NEAR(p.tau(0, 0), 0.17, 1e-6);
}

TEST(AdamW, TemperatureClamped) {
  RunConfig cfg;
  cfg.context_vectors = 1;
  cfg.per_branch_temperature = true;
  auto p = init_params<float>(2, cfg);
  std::vector<Matrix<float>> grads;
  p.for_each([&](const std::string& name, const Matrix<float>& m) {
    grads.emplace_back(m.rows(), m.cols(), name == "tau" ? 1.0f : (name == "tau_entity" ? -1.0f : 0.0f));
  });
  OptimizerConfig oc;
  oc.lr = 5.0;
  AdamW opt(oc);
  opt.step(p, grads);
  EXPECT_FLOAT_EQ(p.tau(0, 0), static_cast<float>(kMinTemperature));
  EXPECT_FLOAT_EQ((*p.tau_entity)(0, 0), static_cast<float>(kMaxTemperature));
}

TEST(Train, LossFallsOnSeparableData) {
  const auto s = small_dataset("train_sep", 2, 6.0, 1);
  const auto src = s.data.source(s.cfg.run);
  const auto slides = all_slides(s, src);
  const std::vector<SlideInstances<float>> train_set(slides.begin(), slides.begin() + 16);
  auto run = s.cfg.run;
  run.max_epochs = 6;
  run.patience = 100;
  const auto r = train(src, train_set, {}, run);
  ASSERT_EQ(r.history.size(), 6u);
  int rises = 0;
  for (std::size_t i = 1; i < 6; ++i) rises += r.history[i].train_loss >= r.history[i - 1].train_loss;
  EXPECT_LE(rises, 1);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
  EXPECT_TRUE(std::isnan(r.history[0].val_loss));
}

TEST(Train, BitIdenticalReplay) {
  const auto s = small_dataset("train_replay", 3, 2.0, 2);
  const auto src = s.data.source(s.cfg.run);
  const auto slides = all_slides(s, src);
  const std::vector<SlideInstances<float>> tr(slides.begin(), slides.begin() + 12), va(slides.begin() + 12, slides.end());
  const auto a = train(src, tr, va, s.cfg.run), b = train(src, tr, va, s.cfg.run);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    EXPECT_EQ(a.history[i].val_loss, b.history[i].val_loss);
  }
  std::vector<const Matrix<float>*> pa, pb;
  a.params.for_each([&](const std::string&, const Matrix<float>& m) { pa.push_back(&m); });
  b.params.for_each([&](const std::string&, const Matrix<float>& m) { pb.push_back(&m); });
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k)
    for (std::size_t i = 0; i < pa[k]->size(); ++i)
      ASSERT_EQ(std::bit_cast<std::uint32_t>((*pa[k])[i]), std::bit_cast<std::uint32_t>((*pb[k])[i]));
}

TEST(Train, EarlyStopKeepsBestEpoch) {
  const auto s = small_dataset("train_stop", 2, 1.0, 3);
  const auto src = s.data.source(s.cfg.run);
  const auto slides = all_slides(s, src);
  const std::vector<SlideInstances<float>> tr(slides.begin(), slides.begin() + 8), va(slides.begin() + 8, slides.end());
  auto run = s.cfg.run;
  run.optimizer.lr = 1e-12;  // too small to move float parameters
  run.max_epochs = 20;
  run.patience = 3;
  const auto r = train(src, tr, va, run);
  EXPECT_TRUE(r.stopped_early);
  EXPECT_EQ(r.best_epoch, 1u);
  EXPECT_EQ(r.history.size(), 4u);
}

TEST(Train, ContextVectorsLearnAndBundleStaysFixed) {
  const auto s = small_dataset("train_ctx", 2, 6.0, 4);
  const auto text_src = s.data.source(s.cfg.run);
  EXPECT_TRUE(text_src.trainable());
  const auto slides = all_slides(s, text_src);
  const std::vector<SlideInstances<float>> tr(slides.begin(), slides.begin() + 8);
  auto run = s.cfg.run;
  run.max_epochs = 2;
  const auto r = train(text_src, tr, {}, run);
  const auto init = init_params<float>(16, run);
  double moved = 0;
  for (std::size_t i = 0; i < init.context.size(); ++i) moved = std::max(moved, std::abs(double(init.context[i] - r.params.context[i])));
  EXPECT_GT(moved, 1e-4);

  const auto bundle_src = PromptSource::from_embeddings(s.ds.embeddings, 3);
  EXPECT_FALSE(bundle_src.trainable());
  const auto before = bundle_src.values(init);
  const auto r2 = train(bundle_src, tr, {}, run);
  const auto after = bundle_src.values(r2.params);
  for (Scale sc : kAllScales)
    for (std::size_t i = 0; i < before.at(sc).generic.size(); ++i)
      EXPECT_EQ(before.at(sc).generic[i], after.at(sc).generic[i]);
}

TEST(Train, InputErrors) {
  const auto s = small_dataset("train_err", 2, 6.0, 5);
  const auto src = s.data.source(s.cfg.run);
  EXPECT_THROW(train(src, {}, {}, s.cfg.run), ArgumentError);
  auto bad = s.cfg.run;
  bad.lambda = 1.5;
  EXPECT_THROW(train(src, all_slides(s, src), {}, bad), ConfigError);
  bad = s.cfg.run;
  bad.ablation.entity_only = bad.ablation.slide_only = true;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = s.cfg.run;
  bad.use_low = bad.use_high = false;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Train, NonFiniteLossIsDivergence) {
  const auto s = small_dataset("train_nan", 2, 6.0, 6);
  const auto src = s.data.source(s.cfg.run);
  auto slides = all_slides(s, src);
  slides.resize(2);
  slides[1].kept[0](0, 0) = std::numeric_limits<float>::quiet_NaN();
  try {
    train(src, slides, {}, s.cfg.run);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Train, HistoryCsv) {
  std::ostringstream out;
  write_history_csv(out, {{1, 0.5, 0.25, 0.75}, {2, 0.125, std::numeric_limits<double>::quiet_NaN(), std::nullopt}});
  EXPECT_EQ(out.str(), "epoch,train_loss,val_loss,val_auc\n1,0.5,0.25,0.75\n2,0.125,nan,nan\n");
}

TEST(Experiment, WritesPerRepeatOutputs) {
  auto s = small_dataset("exp_out", 2, 6.0, 7);
  s.cfg.n_repeats = 2;
  s.cfg.run.max_epochs = 2;
  s.cfg.output_dir = test_support::temp_dir("exp_out_run");
  const auto r = run_experiment(s.cfg, s.data);
  ASSERT_EQ(r.repeats.size(), 2u);
  EXPECT_EQ(r.repeats[1].run.seed, 8u);
  for (const char* f : {"repeat_0/history.csv", "repeat_0/split.json", "repeat_0/predictions.csv",
                        "repeat_1/checkpoint/index.json", "report.json", "report.csv"})
    EXPECT_TRUE(fs::exists(s.cfg.output_dir / f)) << f;
  EXPECT_EQ(slurp(s.cfg.output_dir / "report.csv").substr(0, 2), "# ");
  const auto pred = slurp(s.cfg.output_dir / "repeat_0/predictions.csv");
  EXPECT_EQ(pred.substr(0, pred.find('\n')), "slide_id,label,prob_subtype_0,prob_subtype_1");
  EXPECT_TRUE(r.report.auc.has_value());
}

TEST(Experiment, BundleAndPackAgreeOnFixedPrompts) {
  auto s = small_dataset("exp_bundle", 2, 6.0, 9);
  ExperimentConfig cfg = s.cfg;
  cfg.prompt_pack.clear();
  cfg.embeddings = s.ds.embeddings_dir;
  const auto data = ExperimentData::load(cfg);
  const auto from_bundle = data.source(cfg.run).fixed();
  const auto from_pack = s.data.source(s.cfg.run).fixed();
  for (Scale sc : kAllScales)
    for (std::size_t i = 0; i < from_pack.at(sc).region.size(); ++i)
      EXPECT_EQ(from_pack.at(sc).region[i], from_bundle.at(sc).region[i]);
  cfg.embeddings.clear();
  EXPECT_THROW(ExperimentData::load(cfg), ConfigError);
}

// Without class signal the macro AUC stays near chance.
TEST(Experiment, NullControlAucNearChance) {
  auto s = small_dataset("exp_null", 3, 0.0, 11, 24);
  s.cfg.run.shots = 8;
  s.cfg.run.max_epochs = 10;
  s.cfg.n_repeats = 5;
  const auto r = run_experiment(s.cfg, s.data);
  ASSERT_TRUE(r.report.auc.has_value());
  EXPECT_NEAR(r.report.auc->mean, 0.5, 0.1);
}
