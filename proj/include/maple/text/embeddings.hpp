// SPDX-License-Identifier: Apache-2.0
//
// Prompt embeddings for a whole PromptPack, either encoded through the
// frozen stub (differentiable in the context vectors) or ingested from a
// precomputed bundle.

#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "maple/data/mapf.hpp"
#include "maple/numerics/ops.hpp"
#include "maple/prompt/pack.hpp"
#include "maple/text/encoder.hpp"

namespace maple {

// Per scale: generic (E x d), attributes[c] (E x d, row e = entity e's
// description for class c), slide (C x d), region (1 x d). Generic over the
// storage so the same layout holds values (Matrix) or tape handles (Var).
template <class M>
struct ScaleEmbeddingsT {
  M generic;
  std::vector<M> attributes;
  M slide;
  M region;
};

template <class M>
struct PromptEmbeddingsT {
  std::array<ScaleEmbeddingsT<M>, 2> scales;

  ScaleEmbeddingsT<M>& at(Scale s) { return scales[scale_index(s)]; }
  const ScaleEmbeddingsT<M>& at(Scale s) const { return scales[scale_index(s)]; }
};

template <class T>
using PromptEmbeddings = PromptEmbeddingsT<Matrix<T>>;

template <class T>
using EmbeddingVars = PromptEmbeddingsT<Var<T>>;

// Token statistics for every text in a pack, grouped like PromptEmbeddings.
struct TokenizedPack {
  struct ScaleBatches {
    TokenBatch generic;
    std::vector<TokenBatch> attributes;
    TokenBatch slide;
    TokenBatch region;
  };
  std::array<ScaleBatches, 2> scales;
  std::size_t num_classes = 0;
  std::size_t dim = 0;

  static TokenizedPack from_pack(const PromptPack& pack, const FrozenTextEncoder& enc) {
    TokenizedPack tp;
    tp.num_classes = pack.subtypes.size();
    tp.dim = enc.dim();
    for (Scale s : kAllScales) {
      const auto& sp = pack.at(s);
      auto& out = tp.scales[scale_index(s)];
      std::vector<std::string> generic;
      for (const auto& e : sp.entities) generic.push_back(e.generic);
      out.generic = TokenBatch::from_texts(enc, generic);
      for (const auto& c : pack.subtypes) {
        std::vector<std::string> attrs;
        for (const auto& e : sp.entities) attrs.push_back(e.attributes.at(c));
        out.attributes.push_back(TokenBatch::from_texts(enc, attrs));
      }
      std::vector<std::string> slides;
      for (const auto& c : pack.subtypes) slides.push_back(sp.slide_prompts.at(c));
      out.slide = TokenBatch::from_texts(enc, slides);
      out.region = TokenBatch::from_texts(enc, {sp.region_prompt});
    }
    return tp;
  }
};

// Encodes the pack on `tape`. `entity_context` feeds generic and attribute
// prompts, `slide_context` the slide prompts (the same Var when shared).
// Region prompts are encoded without context.
template <class T>
EmbeddingVars<T> encode_pack(Tape<T>& tape, Var<T> entity_context, Var<T> slide_context, const TokenizedPack& tp,
                             const FrozenTextEncoder& enc) {
  EmbeddingVars<T> out;
  for (Scale s : kAllScales) {
    const auto& src = tp.scales[scale_index(s)];
    auto& dst = out.at(s);
    dst.generic = encode_batch(tape, entity_context, src.generic, enc);
    for (const auto& b : src.attributes) dst.attributes.push_back(encode_batch(tape, entity_context, b, enc));
    dst.slide = encode_batch(tape, slide_context, src.slide, enc);
    dst.region = encode_batch(tape, Var<T>{}, src.region, enc);
  }
  return out;
}

template <class T>
PromptEmbeddings<T> values_of(const EmbeddingVars<T>& vars) {
  PromptEmbeddings<T> out;
  for (Scale s : kAllScales) {
    const auto& v = vars.at(s);
    auto& o = out.at(s);
    o.generic = v.generic.value();
    for (const auto& a : v.attributes) o.attributes.push_back(a.value());
    o.slide = v.slide.value();
    o.region = v.region.value();
  }
  return out;
}

// Value-only encoding of a whole pack.
template <class T>
PromptEmbeddings<T> encode_pack(const Matrix<T>& entity_context, const Matrix<T>& slide_context,
                                const TokenizedPack& tp, const FrozenTextEncoder& enc) {
  Tape<T> tape;
  Var<T> ve = entity_context.rows() ? tape.constant(entity_context) : Var<T>{};
  Var<T> vs = slide_context.rows() ? tape.constant(slide_context) : Var<T>{};
  return values_of(encode_pack(tape, ve, vs, tp, enc));
}

template <class T>
EmbeddingVars<T> as_constants(Tape<T>& tape, const PromptEmbeddings<T>& e) {
  EmbeddingVars<T> out;
  for (Scale s : kAllScales) {
    const auto& v = e.at(s);
    auto& o = out.at(s);
    o.generic = tape.constant(v.generic);
    for (const auto& a : v.attributes) o.attributes.push_back(tape.constant(a));
    o.slide = tape.constant(v.slide);
    o.region = tape.constant(v.region);
  }
  return out;
}

template <class T, class U>
PromptEmbeddings<U> cast_embeddings(const PromptEmbeddings<T>& e) {
  PromptEmbeddings<U> out;
  for (Scale s : kAllScales) {
    const auto& v = e.at(s);
    auto& o = out.at(s);
    o.generic = v.generic.template cast<U>();
    for (const auto& a : v.attributes) o.attributes.push_back(a.template cast<U>());
    o.slide = v.slide.template cast<U>();
    o.region = v.region.template cast<U>();
  }
  return out;
}

// Keeps the first `n` entities of each scale.
template <class T>
PromptEmbeddings<T> truncate_entities(const PromptEmbeddings<T>& e, std::size_t n) {
  PromptEmbeddings<T> out = e;
  for (auto& sc : out.scales) {
    if (n > sc.generic.rows()) throw ConfigError("embedding bundle has fewer entities than requested");
    sc.generic = sc.generic.slice_rows(0, n);
    for (auto& a : sc.attributes) a = a.slice_rows(0, n);
  }
  return out;
}

// Precomputed embedding bundle: `index.json` mirrors the PromptPack layout
// with row numbers into one MAPF matrix per scale.
//   {"format": "maple-embeddings", "version": 1, "dim": d, "subtypes": [...],
//    "scales": {"low": {"file": "low.mapf",
//                       "entities": [{"name", "generic": row, "attributes": {subtype: row}}],
//                       "slide_prompts": {subtype: row}, "region_prompt": row}, "high": {...}}}
inline void save_embedding_bundle(const std::filesystem::path& dir, const PromptPack& pack,
                                  const PromptEmbeddings<float>& emb) {
  std::filesystem::create_directories(dir);
  nlohmann::json index{{"format", "maple-embeddings"}, {"version", 1}, {"subtypes", pack.subtypes}};
  for (Scale s : kAllScales) {
    const auto& sp = pack.at(s);
    const auto& se = emb.at(s);
    const std::size_t d = se.generic.cols();
    index["dim"] = d;
    std::vector<Matrix<float>> rows;
    nlohmann::json js{{"file", std::string(scale_name(s)) + ".mapf"}, {"entities", nlohmann::json::array()}};
    std::size_t next = 0;
    auto push_row = [&](const Matrix<float>& m, std::size_t r) {
      rows.push_back(m.slice_rows(r, 1));
      return next++;
    };
    for (std::size_t e = 0; e < sp.entities.size(); ++e) {
      nlohmann::json je{{"name", sp.entities[e].name}, {"generic", push_row(se.generic, e)}};
      for (std::size_t c = 0; c < pack.subtypes.size(); ++c)
        je["attributes"][pack.subtypes[c]] = push_row(se.attributes[c], e);
      js["entities"].push_back(je);
    }
    for (std::size_t c = 0; c < pack.subtypes.size(); ++c) js["slide_prompts"][pack.subtypes[c]] = push_row(se.slide, c);
    js["region_prompt"] = push_row(se.region, 0);
    write_mapf(dir / js["file"].get<std::string>(), vstack<float>(rows));
    index["scales"][std::string(scale_name(s))] = js;
  }
  std::ofstream out(dir / "index.json", std::ios::trunc);
  out << index.dump(2) << "\n";
}

struct EmbeddingBundle {
  std::vector<std::string> subtypes;
  std::array<std::vector<std::string>, 2> entity_names;
  PromptEmbeddings<float> embeddings;
};

inline EmbeddingBundle load_embedding_bundle(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + (dir / "index.json").string());
  nlohmann::json index;
  in >> index;
  EmbeddingBundle b;
  try {
    if (index.at("format") != "maple-embeddings" || index.at("version") != 1) {
      throw FormatError(FormatError::Kind::version, "unsupported embedding bundle format");
    }
    b.subtypes = index.at("subtypes").get<std::vector<std::string>>();
    const std::size_t dim = index.at("dim").get<std::size_t>();
    for (Scale s : kAllScales) {
      const auto& js = index.at("scales").at(std::string(scale_name(s)));
      const Matrix<float> all = read_mapf(dir / js.at("file").get<std::string>());
      if (all.cols() != dim) throw FormatError(FormatError::Kind::dimension, "embedding bundle dimension mismatch");
      auto row = [&](const nlohmann::json& r) {
        const std::size_t i = r.get<std::size_t>();
        if (i >= all.rows()) throw FormatError(FormatError::Kind::schema, "embedding row index out of range");
        return all.slice_rows(i, 1);
      };
      auto& se = b.embeddings.at(s);
      std::vector<Matrix<float>> generic;
      std::vector<std::vector<Matrix<float>>> attrs(b.subtypes.size());
      for (const auto& je : js.at("entities")) {
        b.entity_names[scale_index(s)].push_back(je.at("name").get<std::string>());
        generic.push_back(row(je.at("generic")));
        for (std::size_t c = 0; c < b.subtypes.size(); ++c) attrs[c].push_back(row(je.at("attributes").at(b.subtypes[c])));
      }
      se.generic = vstack<float>(generic);
      for (auto& a : attrs) se.attributes.push_back(vstack<float>(a));
      std::vector<Matrix<float>> slides;
      for (const auto& c : b.subtypes) slides.push_back(row(js.at("slide_prompts").at(c)));
      se.slide = vstack<float>(slides);
      se.region = row(js.at("region_prompt"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::schema, std::string("embedding bundle: ") + e.what());
  }
  return b;
}

}  // namespace maple
