// SPDX-License-Identifier: Apache-2.0
//
// PromptPack: entity, slide and region prompt texts for both scales.
//
// JSON layout:
//   {"subtypes": [...],
//    "scales": {"low":  {"entities": [{"name", "generic", "attributes": {subtype: text}}],
//                        "slide_prompts": {subtype: text},
//                        "region_prompt": text},
//               "high": {...}}}

#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "maple/data/mapf.hpp"
#include "maple/errors.hpp"

namespace maple {

struct EntityPrompt {
  std::string name;
  Scale scale = Scale::low;
  std::string generic;
  std::map<std::string, std::string> attributes;  // subtype -> description
};

struct ScalePrompts {
  std::vector<EntityPrompt> entities;
  std::map<std::string, std::string> slide_prompts;  // subtype -> summary
  std::string region_prompt;
};

struct PromptPack {
  std::vector<std::string> subtypes;
  std::array<ScalePrompts, 2> scales;  // indexed by scale_index()

  ScalePrompts& at(Scale s) { return scales[scale_index(s)]; }
  const ScalePrompts& at(Scale s) const { return scales[scale_index(s)]; }

  // Throws FormatError(schema) on the first violated invariant. When
  // `entities_per_scale` is set, each scale must carry exactly that many.
  void validate(std::optional<std::size_t> entities_per_scale = std::nullopt) const {
    auto fail = [](const std::string& msg) { throw FormatError(FormatError::Kind::schema, "prompt pack: " + msg); };
    if (subtypes.empty()) fail("no subtypes");
    std::set<std::string> unique_subtypes(subtypes.begin(), subtypes.end());
    if (unique_subtypes.size() != subtypes.size()) fail("duplicate subtype names");
    for (Scale s : kAllScales) {
      const auto& sp = at(s);
      const std::string where = std::string(scale_name(s)) + " scale";
      if (sp.entities.empty()) fail(where + " has no entities");
      if (entities_per_scale && sp.entities.size() != *entities_per_scale) {
        fail(where + " has " + std::to_string(sp.entities.size()) + " entities, expected " +
             std::to_string(*entities_per_scale));
      }
      std::set<std::string> names;
      for (const auto& e : sp.entities) {
        if (e.name.empty()) fail(where + ": empty entity name");
        if (!names.insert(e.name).second) fail(where + ": duplicate entity '" + e.name + "'");
        if (e.generic.empty()) fail(where + ": entity '" + e.name + "' has no generic description");
        if (e.attributes.size() != subtypes.size()) {
          fail(where + ": entity '" + e.name + "' has " + std::to_string(e.attributes.size()) +
               " attributes for " + std::to_string(subtypes.size()) + " subtypes");
        }
        for (const auto& c : subtypes) {
          auto it = e.attributes.find(c);
          if (it == e.attributes.end() || it->second.empty()) {
            fail(where + ": entity '" + e.name + "' lacks an attribute for subtype '" + c + "'");
          }
        }
      }
      if (sp.slide_prompts.size() != subtypes.size()) fail(where + ": slide prompt count mismatch");
      for (const auto& c : subtypes) {
        auto it = sp.slide_prompts.find(c);
        if (it == sp.slide_prompts.end() || it->second.empty()) {
          fail(where + ": missing slide prompt for subtype '" + c + "'");
        }
      }
      if (sp.region_prompt.empty()) fail(where + ": missing region prompt");
    }
  }

  // Keeps only the first `n` entities of each scale.
  PromptPack truncated(std::size_t n) const {
    PromptPack out = *this;
    for (auto& sp : out.scales) {
      if (n > sp.entities.size()) {
        throw ConfigError("requested " + std::to_string(n) + " entities but the pack has " +
                          std::to_string(sp.entities.size()));
      }
      sp.entities.resize(n);
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["subtypes"] = subtypes;
    for (Scale s : kAllScales) {
      const auto& sp = at(s);
      nlohmann::json js;
      js["entities"] = nlohmann::json::array();
      for (const auto& e : sp.entities) {
        js["entities"].push_back({{"name", e.name}, {"generic", e.generic}, {"attributes", e.attributes}});
      }
      js["slide_prompts"] = sp.slide_prompts;
      js["region_prompt"] = sp.region_prompt;
      j["scales"][std::string(scale_name(s))] = js;
    }
    return j;
  }

  static PromptPack from_json(const nlohmann::json& j) {
    PromptPack p;
    try {
      p.subtypes = j.at("subtypes").get<std::vector<std::string>>();
      for (Scale s : kAllScales) {
        const auto& js = j.at("scales").at(std::string(scale_name(s)));
        auto& sp = p.at(s);
        for (const auto& je : js.at("entities")) {
          EntityPrompt e;
          e.name = je.at("name").get<std::string>();
          e.scale = s;
          e.generic = je.at("generic").get<std::string>();
          e.attributes = je.at("attributes").get<std::map<std::string, std::string>>();
          sp.entities.push_back(std::move(e));
        }
        sp.slide_prompts = js.at("slide_prompts").get<std::map<std::string, std::string>>();
        sp.region_prompt = js.at("region_prompt").get<std::string>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(FormatError::Kind::schema, std::string("prompt pack: ") + e.what());
    }
    p.validate();
    return p;
  }

  static PromptPack load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(FormatError::Kind::io, "cannot open prompt pack " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(FormatError::Kind::schema, path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  void save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    out << to_json().dump(2) << "\n";
  }
};

}  // namespace maple
