// SPDX-License-Identifier: Apache-2.0
//
// Synthetic two-scale dataset with class signal planted along prompt
// embedding directions. Tumor instances sit near the region prompt plus an
// entity cluster whose class-dependent offset follows that entity's
// attribute embeddings; background instances sit opposite the region prompt.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "maple/data/dataset.hpp"
#include "maple/data/mapf.hpp"
#include "maple/numerics/random.hpp"
#include "maple/prompt/backend.hpp"
#include "maple/prompt/builder.hpp"
#include "maple/text/embeddings.hpp"

namespace maple {

struct SyntheticSpec {
  std::size_t classes = 3;
  std::size_t entities_per_scale = kDefaultEntitiesPerScale;
  std::size_t instances_per_bag = 32;
  double separation = 6.0;  // distance between class cluster means, in noise standard deviations
  std::size_t bags_per_class = 48;
  std::size_t dim = 128;
  double tumor_fraction = 0.6;
  std::uint64_t seed = 0;
};

struct SyntheticDataset {
  DatasetManifest manifest;
  PromptPack pack;
  PromptEmbeddings<float> embeddings;  // encoded without context vectors
  std::filesystem::path manifest_path;
  std::filesystem::path pack_path;
  std::filesystem::path embeddings_dir;
};

inline std::vector<std::string> synthetic_class_names(std::size_t classes) {
  std::vector<std::string> out;
  for (std::size_t c = 0; c < classes; ++c) out.push_back("subtype_" + std::to_string(c));
  return out;
}

// Writes features/, manifest.json, pack.json and embeddings/ under `out_dir`.
inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.classes < 2) throw ConfigError("synthetic data needs at least two classes");
  if (!(spec.separation >= 0.0)) throw ConfigError("separation must be non-negative");
  if (spec.entities_per_scale < 1 || spec.instances_per_bag < 1 || spec.bags_per_class < 1 || spec.dim < 1) {
    throw ConfigError("synthetic sizes must be positive");
  }
  if (!(spec.tumor_fraction > 0.0 && spec.tumor_fraction <= 1.0)) throw ConfigError("tumor fraction must lie in (0, 1]");

  SyntheticDataset ds;
  FixtureBackend backend;
  ds.pack = build_prompt_pack(synthetic_class_names(spec.classes), spec.entities_per_scale, backend);
  const FrozenTextEncoder enc(spec.dim, kDefaultTextEncoderSeed);
  ds.embeddings = encode_pack(Matrix<float>(), Matrix<float>(), TokenizedPack::from_pack(ds.pack, enc), enc);

  const std::size_t d = spec.dim;
  const std::size_t e_count = spec.entities_per_scale;
  const double sigma = 1.0 / std::sqrt(static_cast<double>(d));

  // offsets[s][e][c]: class-dependent shift of entity e's cluster, scaled so
  // the mean pairwise distance between class centres is separation * sigma.
  std::array<std::vector<std::vector<std::vector<double>>>, 2> offsets;
  for (Scale s : kAllScales) {
    const auto& emb = ds.embeddings.at(s);
    auto& off = offsets[scale_index(s)];
    off.assign(e_count, std::vector<std::vector<double>>(spec.classes, std::vector<double>(d, 0.0)));
    for (std::size_t e = 0; e < e_count; ++e) {
      std::vector<double> centre(d, 0.0);
      for (std::size_t c = 0; c < spec.classes; ++c)
        for (std::size_t k = 0; k < d; ++k) centre[k] += emb.attributes[c](e, k) / static_cast<double>(spec.classes);
      for (std::size_t c = 0; c < spec.classes; ++c)
        for (std::size_t k = 0; k < d; ++k) off[e][c][k] = emb.attributes[c](e, k) - centre[k];
      double dist = 0;
      std::size_t pairs = 0;
      for (std::size_t a = 0; a < spec.classes; ++a)
        for (std::size_t b = a + 1; b < spec.classes; ++b, ++pairs) {
          double ss = 0;
          for (std::size_t k = 0; k < d; ++k) ss += (off[e][a][k] - off[e][b][k]) * (off[e][a][k] - off[e][b][k]);
          dist += std::sqrt(ss);
        }
      dist /= static_cast<double>(pairs);
      const double gain = dist > 0 ? spec.separation * sigma / dist : 0.0;
      for (auto& v : off[e])
        for (double& x : v) x *= gain;
    }
  }

  Rng rng(derive_seed(spec.seed, "synthetic"));
  ds.manifest.classes = ds.pack.subtypes;
  ds.manifest.dim = d;
  ds.manifest.base_dir = out_dir;
  const std::size_t tumor = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(spec.tumor_fraction * static_cast<double>(spec.instances_per_bag))));
  char id[32];
  for (std::size_t b = 0; b < spec.bags_per_class; ++b) {
    for (std::size_t c = 0; c < spec.classes; ++c) {
      std::snprintf(id, sizeof id, "slide_%04zu", b * spec.classes + c);
      SlideEntry entry{id, c, "features/" + std::string(id) + "_low.mapf", "features/" + std::string(id) + "_high.mapf"};
      for (Scale s : kAllScales) {
        const auto& emb = ds.embeddings.at(s);
        Matrix<float> bag(spec.instances_per_bag, d);
        for (std::size_t j = 0; j < spec.instances_per_bag; ++j) {
          const bool is_tumor = j < tumor;
          const std::size_t e = rng.index(e_count);
          for (std::size_t k = 0; k < d; ++k) {
            double x = emb.generic(e, k) + sigma * rng.normal();
            x += is_tumor ? emb.region(0, k) + offsets[scale_index(s)][e][c][k] : -emb.region(0, k);
            bag(j, k) = static_cast<float>(x);
          }
        }
        write_mapf(out_dir / (s == Scale::low ? entry.path_low : entry.path_high), bag);
      }
      ds.manifest.slides.push_back(std::move(entry));
    }
  }

  ds.manifest_path = out_dir / "manifest.json";
  ds.pack_path = out_dir / "pack.json";
  ds.embeddings_dir = out_dir / "embeddings";
  ds.manifest.save(ds.manifest_path);
  ds.pack.save(ds.pack_path);
  save_embedding_bundle(ds.embeddings_dir, ds.pack, ds.embeddings);
  return ds;
}

}  // namespace maple
