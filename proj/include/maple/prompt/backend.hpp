// SPDX-License-Identifier: Apache-2.0
//
// LLM request/response channel plus the offline fixture backend.

#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "maple/data/mapf.hpp"
#include "maple/errors.hpp"
#include "maple/numerics/random.hpp"

namespace maple {

enum class QueryKind { discover_entity, describe_generic, describe_attribute, summarize_slide, region };

inline const char* query_kind_name(QueryKind k) {
  switch (k) {
    case QueryKind::discover_entity: return "discover_entity";
    case QueryKind::describe_generic: return "describe_generic";
    case QueryKind::describe_attribute: return "describe_attribute";
    case QueryKind::summarize_slide: return "summarize_slide";
    case QueryKind::region: return "region";
  }
  return "unknown";
}

// A rendered query plus the structured fields it was rendered from. Live
// backends only see `system`/`user`; the fixture backend keys off the fields.
struct LlmRequest {
  QueryKind kind = QueryKind::discover_entity;
  Scale scale = Scale::low;
  std::string entity;
  std::string subtype;
  std::vector<std::string> subtypes;
  std::vector<std::string> excluded;         // entities already chosen at this scale
  std::vector<std::string> context_entities;  // entity names embedded in a slide summary
  std::size_t query_index = 0;               // discovery queries already issued at this scale
  std::string system;
  std::string user;
  double temperature = 0.0;
};

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual std::string complete(const LlmRequest& request) = 0;
};

// Query templates with {entity} {subtype} {subtypes} {scale} {excluded} {context} slots.
struct QueryTemplates {
  std::string system =
      "You are an expert pathologist describing histology in whole slide images. Answer concisely.";
  std::string discover_entity =
      "Suggest a discriminative histological entity not in {excluded} that helps distinguish subtypes in "
      "{subtypes} at scale {scale}";
  std::string describe_generic = "Describe generic visual characteristics of {entity} at scale {scale}";
  std::string describe_attribute = "Describe how {entity} appears in subtype {subtype} at scale {scale}";
  std::string summarize_slide = "Describe a WSI of {subtype} at scale {scale} based on: {context}";
  std::string region =
      "What are the visually descriptive characteristics of the tumor-related region in a WSI at {scale} "
      "resolution?";

  static QueryTemplates load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(FormatError::Kind::io, "cannot open templates " + path.string());
    nlohmann::json j;
    in >> j;
    QueryTemplates t;
    auto take = [&](const char* key, std::string& dst) {
      if (j.contains(key)) dst = j.at(key).get<std::string>();
    };
    take("system", t.system);
    take("discover_entity", t.discover_entity);
    take("describe_generic", t.describe_generic);
    take("describe_attribute", t.describe_attribute);
    take("summarize_slide", t.summarize_slide);
    take("region", t.region);
    return t;
  }
};

inline std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

inline std::string render_template(std::string text, const std::map<std::string, std::string>& slots) {
  for (const auto& [key, value] : slots) {
    const std::string token = "{" + key + "}";
    for (std::size_t pos = text.find(token); pos != std::string::npos; pos = text.find(token, pos + value.size())) {
      text.replace(pos, token.size(), value);
    }
  }
  return text;
}

// Wraps another backend and keeps every request it forwards.
class RecordingBackend : public LlmBackend {
 public:
  explicit RecordingBackend(LlmBackend& inner) : inner_(inner) {}

  std::string complete(const LlmRequest& request) override {
    requests_.push_back(request);
    return inner_.complete(request);
  }

  const std::vector<LlmRequest>& requests() const { return requests_; }

 private:
  LlmBackend& inner_;
  std::vector<LlmRequest> requests_;
};

// Offline backend: a pure function of the request. Discovery returns the
// `query_index`-th name of the scale's entity list (repeats in the list are
// returned as-is so the caller's dedup path can be exercised). Texts missing
// from the fixture are synthesized deterministically from the request fields.
class FixtureBackend : public LlmBackend {
 public:
  FixtureBackend() : FixtureBackend(default_fixture()) {}
  explicit FixtureBackend(nlohmann::json fixture) : fixture_(std::move(fixture)) {}

  static FixtureBackend from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(FormatError::Kind::io, "cannot open fixture " + path.string());
    nlohmann::json j;
    in >> j;
    return FixtureBackend(std::move(j));
  }

  std::string complete(const LlmRequest& r) override {
    const std::string scale(scale_name(r.scale));
    switch (r.kind) {
      case QueryKind::discover_entity: {
        const auto* list = find({"entities", scale});
        if (list && r.query_index < list->size()) return (*list)[r.query_index].get<std::string>();
        return "structure " + std::to_string(r.query_index + 1) + " " + scale;
      }
      case QueryKind::describe_generic: {
        if (const auto* t = find({"generic", scale, r.entity})) return t->get<std::string>();
        return "The " + r.entity + " at " + scale + " resolution appears as " + pick(r, kShapes) + " " +
               pick(r, kTextures) + " structures with " + pick(r, kStains) + " staining.";
      }
      case QueryKind::describe_attribute: {
        if (const auto* t = find({"attributes", scale, r.entity, r.subtype})) return t->get<std::string>();
        return "In " + r.subtype + ", the " + r.entity + " at " + scale + " resolution is " + pick(r, kShapes) +
               ", " + pick(r, kTextures) + " and " + pick(r, kStains) + ", with " + pick(r, kArrangements) +
               " arrangement.";
      }
      case QueryKind::summarize_slide: {
        if (const auto* t = find({"slides", scale, r.subtype})) return t->get<std::string>();
        return "A " + scale + " resolution whole slide image of " + r.subtype + " characterized by " +
               join(r.context_entities, ", ") + ".";
      }
      case QueryKind::region: {
        if (const auto* t = find({"region", scale})) return t->get<std::string>();
        return "Tumor-related regions at " + scale + " resolution are densely cellular and disorganized.";
      }
    }
    throw BackendError("fixture backend: unknown query kind");
  }

  static nlohmann::json default_fixture();

 private:
  static constexpr const char* kShapes[] = {"rounded", "elongated", "irregular", "angular", "oval",
                                            "spindled", "polygonal", "branching"};
  static constexpr const char* kTextures[] = {"coarse", "fine", "granular", "smooth", "vesicular",
                                              "dense", "loose", "fibrillar"};
  static constexpr const char* kStains[] = {"pale eosinophilic", "deep basophilic", "amphophilic",
                                            "hyperchromatic", "clear", "faint", "dark purple", "pink"};
  static constexpr const char* kArrangements[] = {"crowded", "scattered", "sheet-like", "nested",
                                                  "glandular", "cord-like", "solid", "papillary"};

  template <std::size_t N>
  static std::string pick(const LlmRequest& r, const char* const (&words)[N]) {
    const std::uint64_t h = fnv1a64(std::string(query_kind_name(r.kind)) + "|" + std::string(scale_name(r.scale)) +
                                    "|" + r.entity + "|" + r.subtype + "|" + words[0]);
    return words[h % N];
  }

  const nlohmann::json* find(std::initializer_list<std::string> path) const {
    const nlohmann::json* node = &fixture_;
    for (const auto& key : path) {
      if (!node->is_object() || !node->contains(key)) return nullptr;
      node = &(*node)[key];
    }
    return node;
  }

  nlohmann::json fixture_;
};

inline nlohmann::json FixtureBackend::default_fixture() {
  return nlohmann::json::parse(R"json(
{
  "entities": {
    "low": ["stroma", "gland", "tumor-stroma interface", "necrosis", "solid nest", "papillary structure",
            "lymphocytic infiltrate", "alveolar wall", "keratin pearl", "fibrosis", "vasculature", "mucin pool",
            "acinar pattern", "micropapillary cluster", "lepidic growth", "inflammatory aggregate",
            "tumor budding", "cribriform arrangement", "desmoplastic reaction", "hemorrhage"],
    "high": ["nucleolus", "nucleus", "cytoplasm", "intercellular bridge", "mitotic figure", "chromatin",
             "nuclear membrane", "keratinization", "cell border", "mucin vacuole", "cilia", "apoptotic body",
             "nuclear pleomorphism", "cytoplasmic eosinophilia", "signet ring cell", "clear cell change",
             "lymphocyte", "macrophage", "hobnail cell", "nuclear inclusion"]
  },
  "generic": {
    "low": {
      "stroma": "Connective tissue surrounding tumor nests, composed of fibroblasts, collagen fibers and vessels.",
      "gland": "Tubular or acinar epithelial structures arranged around a central lumen."
    },
    "high": {
      "nucleolus": "A small dense body inside the nucleus, visible as a dark or eosinophilic dot.",
      "nucleus": "The membrane-bound compartment holding chromatin, seen as a basophilic round or oval body."
    }
  },
  "attributes": {
    "low": {
      "stroma": {
        "LUAD": "Stroma appears lighter and less dense, loosely arranged around glandular tumor growth.",
        "LUSC": "Stroma appears denser and more collagenized, surrounding solid squamous nests."
      },
      "gland": {
        "LUAD": "Well-formed glands and acini with lumens are common, often lined by columnar cells.",
        "LUSC": "Gland formation is absent; tumor grows in solid sheets and nests."
      }
    },
    "high": {
      "nucleolus": {
        "LUAD": "Nucleoli are typically small and inconspicuous within vesicular nuclei.",
        "LUSC": "Nucleoli are large and prominent within hyperchromatic nuclei."
      },
      "nucleus": {
        "LUAD": "Nuclei are round to oval with fine chromatin, sometimes showing intranuclear inclusions.",
        "LUSC": "Nuclei are enlarged and pleomorphic with coarse, dark chromatin."
      }
    }
  },
  "region": {
    "low": "Tumor-related regions at low resolution show densely packed, disorganized tissue with irregular nests, glandular or solid growth and reactive stroma.",
    "high": "Tumor-related regions at high resolution show crowded atypical cells with enlarged hyperchromatic nuclei, prominent nucleoli and frequent mitoses."
  }
}
)json");
}

}  // namespace maple
