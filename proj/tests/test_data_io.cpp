// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <set>

#include "maple/data/dataset.hpp"
#include "maple/data/mapf.hpp"
#include "maple/data/synthetic.hpp"
#include "support.hpp"

using namespace maple;
namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> header(std::uint32_t rows, std::uint32_t cols, std::uint32_t version = 1) {
  std::vector<unsigned char> b{'M', 'A', 'P', 'F'};
  for (std::uint32_t v : {version, rows, cols})
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
  return b;
}

void put_float(std::vector<unsigned char>& b, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(u >> (8 * i)));
}

FormatError::Kind kind_of(const std::vector<unsigned char>& bytes) {
  try {
    decode_mapf(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error";
  return FormatError::Kind::io;
}

DatasetManifest manifest(const std::vector<std::size_t>& per_class) {
  DatasetManifest m;
  m.dim = 4;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    m.classes.push_back("c" + std::to_string(c));
    for (std::size_t i = 0; i < per_class[c]; ++i) {
      const std::string id = "s" + std::to_string(c) + "_" + std::to_string(i);
      m.slides.push_back({id, c, id + "_low.mapf", id + "_high.mapf"});
    }
  }
  return m;
}

std::map<std::size_t, std::size_t> counts(const DatasetManifest& m, const std::vector<std::string>& ids) {
  std::map<std::size_t, std::size_t> out;
  for (const auto& id : ids) ++out[m.slide(id).label];
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST(Mapf, TwoByThree) {
  auto bytes = header(2, 3);
  for (int i = 0; i < 6; ++i) put_float(bytes, static_cast<float>(i) * 0.5f);
  const auto m = decode_mapf(bytes);
  ASSERT_EQ(m.rows(), 2u);
  ASSERT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 2), 2.5f);
}

TEST(Mapf, Errors) {
  EXPECT_EQ(kind_of({'M', 'A', 'P'}), FormatError::Kind::truncated);
  auto bad_magic = header(1, 1);
  bad_magic[0] = 'X';
  put_float(bad_magic, 1.0f);
  EXPECT_EQ(kind_of(bad_magic), FormatError::Kind::magic);
  auto version = header(1, 1, 2);
  put_float(version, 1.0f);
  EXPECT_EQ(kind_of(version), FormatError::Kind::version);
  auto short_payload = header(2, 2);
  put_float(short_payload, 1.0f);
  EXPECT_EQ(kind_of(short_payload), FormatError::Kind::truncated);
  auto trailing = header(1, 1);
  put_float(trailing, 1.0f);
  trailing.push_back(0);
  EXPECT_EQ(kind_of(trailing), FormatError::Kind::truncated);
  auto nan = header(1, 2);
  put_float(nan, 1.0f);
  put_float(nan, std::numeric_limits<float>::quiet_NaN());
  EXPECT_EQ(kind_of(nan), FormatError::Kind::non_finite);
}

TEST(Mapf, BagValidation) {
  const fs::path dir = test_support::temp_dir("mapf");
  write_mapf(dir / "empty.mapf", Matrix<float>(0, 3));
  try {
    load_feature_bag(dir / "empty.mapf", 3);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::empty);
  }
  write_mapf(dir / "wide.mapf", Matrix<float>(2, 5, 1.0f));
  try {
    load_feature_bag(dir / "wide.mapf", 3);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::dimension);
  }
  EXPECT_THROW(read_mapf(dir / "missing.mapf"), FormatError);
}

TEST(Mapf, RoundTripIsBitExact) {
  const fs::path dir = test_support::temp_dir("roundtrip");
  Rng rng(1);
  for (int it = 0; it < 50; ++it) {
    Matrix<float> m = rng.normal_matrix<float>(1 + rng.index(20), 1 + rng.index(20), std::pow(10.0, rng.uniform(-30, 30)));
    m[0] = -0.0f;
    write_mapf(dir / "m.mapf", m);
    const auto back = load_feature_bag(dir / "m.mapf", m.cols());
    ASSERT_EQ(back.features.size(), m.size());
    for (std::size_t i = 0; i < m.size(); ++i)
      EXPECT_EQ(std::bit_cast<std::uint32_t>(back.features[i]), std::bit_cast<std::uint32_t>(m[i]));
  }
}

TEST(Manifest, ValidationAndRoundTrip) {
  auto m = manifest({2, 2});
  EXPECT_NO_THROW(m.validate());
  auto back = DatasetManifest::from_json(m.to_json());
  EXPECT_EQ(back.slides.size(), 4u);
  EXPECT_EQ(back.slides[3].path_high, m.slides[3].path_high);
  auto bad = m;
  bad.slides[0].label = 7;
  EXPECT_THROW(bad.validate(), FormatError);
  bad = m;
  bad.slides[1].id = bad.slides[0].id;
  EXPECT_THROW(bad.validate(), FormatError);
  bad = m;
  bad.slides[0].path_high.clear();
  EXPECT_THROW(bad.validate(), FormatError);
  EXPECT_THROW(DatasetManifest::from_json(nlohmann::json{{"classes", {"a"}}}), FormatError);
}

TEST(FewShot, TwoClassesFortyEach) {
  const auto m = manifest({40, 40});
  const auto s = sample_few_shot(m, 16, 7);
  EXPECT_EQ(s.train.size(), 32u);
  EXPECT_EQ(s.val.size(), 32u);
  EXPECT_EQ(s.test.size(), 16u);
  const auto again = sample_few_shot(m, 16, 7);
  EXPECT_EQ(s.train, again.train);
  EXPECT_EQ(s.val, again.val);
  EXPECT_EQ(s.test, again.test);
  EXPECT_NE(s.train, sample_few_shot(m, 16, 8).train);
}

TEST(FewShot, ShortClass) {
  const auto m = manifest({10, 3});
  EXPECT_THROW(sample_few_shot(m, 4, 0), ConfigError);
  const auto s = sample_few_shot(m, 4, 0, true);
  const auto c = counts(m, s.train);
  EXPECT_EQ(c.at(0), 4u);
  EXPECT_EQ(c.at(1), 3u);
  EXPECT_EQ(counts(m, s.val).count(1), 0u);
  EXPECT_THROW(sample_few_shot(manifest({5, 0}), 1, 0, true), ConfigError);
  EXPECT_THROW(sample_few_shot(m, 0, 0), ConfigError);
}

TEST(FewShot, CountingOracle) {
  Rng rng(3);
  for (int it = 0; it < 100; ++it) {
    std::vector<std::size_t> sizes(2 + rng.index(3));
    for (auto& n : sizes) n = 8 + rng.index(30);
    const auto m = manifest(sizes);
    const auto s = sample_few_shot(m, 8, rng.next_u64());
    const auto tr = counts(m, s.train), va = counts(m, s.val), te = counts(m, s.test);
    for (std::size_t c = 0; c < sizes.size(); ++c) {
      EXPECT_EQ(tr.at(c), 8u);
      const std::size_t want_val = std::min<std::size_t>(8, sizes[c] - 8);
      EXPECT_EQ(va.count(c) ? va.at(c) : 0, want_val);
      EXPECT_EQ(te.count(c) ? te.at(c) : 0, sizes[c] - 8 - want_val);
    }
    std::set<std::string> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    all.insert(s.test.begin(), s.test.end());
    EXPECT_EQ(all.size(), m.slides.size());
  }
}

TEST(CvRepeats, DistinctTrainSetsAndIdentity) {
  const auto m = manifest({40, 40});
  const auto reps = build_cv_repeats(m, 16, 5, 100);
  ASSERT_EQ(reps.size(), 5u);
  std::set<std::vector<std::string>> trains;
  for (std::size_t i = 0; i < reps.size(); ++i) {
    EXPECT_EQ(reps[i].seed, 100 + i);
    EXPECT_EQ(counts(m, reps[i].train).at(0), 16u);
    EXPECT_EQ(counts(m, reps[i].train).at(1), 16u);
    trains.insert(reps[i].train);
  }
  EXPECT_EQ(trains.size(), 5u);
  const auto one = build_cv_repeats(m, 16, 1, 100);
  EXPECT_EQ(one[0].train, sample_few_shot(m, 16, 100).train);
  EXPECT_EQ(one[0].test, sample_few_shot(m, 16, 100).test);
  EXPECT_THROW(build_cv_repeats(m, 16, 0, 0), ConfigError);
}

// 16 test slides out of 80 per repeat; over five repeats most slides appear in some test set.
TEST(CvRepeats, TestCoverage) {
  const auto m = manifest({40, 40});
  std::set<std::string> covered;
  for (const auto& s : build_cv_repeats(m, 16, 5, 0)) covered.insert(s.test.begin(), s.test.end());
  // Each slide is in a given test set with probability 8/40; 1 - 0.8^5 = 0.672 expected coverage.
  const double frac = static_cast<double>(covered.size()) / 80.0;
  EXPECT_GT(frac, 0.45);
  EXPECT_LT(frac, 0.9);
}

TEST(Synthetic, DeterministicFiles) {
  SyntheticSpec spec;
  spec.dim = 16;
  spec.bags_per_class = 4;
  spec.instances_per_bag = 6;
  spec.entities_per_scale = 3;
  spec.seed = 9;
  const fs::path a = test_support::temp_dir("synth_a"), b = test_support::temp_dir("synth_b");
  const auto da = generate_synthetic(spec, a);
  generate_synthetic(spec, b);
  EXPECT_EQ(da.manifest.slides.size(), 12u);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    if (rel.filename() == "manifest.json") continue;  // holds no absolute paths, but compare separately
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  EXPECT_GT(files, 24u);
  const auto loaded = DatasetManifest::load(a / "manifest.json");
  const auto bag = loaded.load_bag(loaded.slides[0], Scale::high);
  EXPECT_EQ(bag.features.rows(), 6u);
  EXPECT_EQ(bag.features.cols(), 16u);
  spec.seed = 10;
  const fs::path c = test_support::temp_dir("synth_c");
  generate_synthetic(spec, c);
  EXPECT_NE(slurp(a / "features/slide_0000_low.mapf"), slurp(c / "features/slide_0000_low.mapf"));
}

TEST(Synthetic, InputChecks) {
  SyntheticSpec spec;
  spec.classes = 1;
  EXPECT_THROW(generate_synthetic(spec, test_support::temp_dir("synth_bad")), ConfigError);
  spec.classes = 2;
  spec.separation = -1;
  EXPECT_THROW(generate_synthetic(spec, test_support::temp_dir("synth_bad")), ConfigError);
}
