// SPDX-License-Identifier: Apache-2.0
//
// LLM-driven prompt construction: iterative entity discovery per scale,
// generic and per-subtype entity descriptions, entity-conditioned slide
// summaries and one tumor-region prompt per scale.

#pragma once

#include <algorithm>
#include <cctype>
#include <set>
#include <string>
#include <vector>

#include "maple/errors.hpp"
#include "maple/prompt/backend.hpp"
#include "maple/prompt/pack.hpp"

namespace maple {

inline constexpr std::size_t kDefaultRetryBudget = 3;
inline constexpr std::size_t kDefaultEntitiesPerScale = 8;

struct PromptBuilderOptions {
  std::size_t retry_budget = kDefaultRetryBudget;
  QueryTemplates templates;
};

// Reduces a free-text completion to an entity name: first non-empty line,
// list markers, quotes and trailing punctuation removed, lowercased.
inline std::string normalize_entity_name(const std::string& completion) {
  std::string line;
  std::size_t start = 0;
  while (start <= completion.size()) {
    const std::size_t end = std::min(completion.find('\n', start), completion.size());
    line = completion.substr(start, end - start);
    if (line.find_first_not_of(" \t\r") != std::string::npos) break;
    line.clear();
    start = end + 1;
  }
  auto is_trim = [](unsigned char c) {
    return std::isspace(c) || c == '"' || c == '\'' || c == '*' || c == '-' || c == '.' || c == ':' || c == '`';
  };
  std::size_t b = 0;
  while (b < line.size() && (is_trim(line[b]) || std::isdigit(static_cast<unsigned char>(line[b])))) ++b;
  std::size_t e = line.size();
  while (e > b && is_trim(line[e - 1])) --e;
  std::string out = line.substr(b, e - b);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

class PromptBuilder {
 public:
  PromptBuilder(LlmBackend& backend, std::vector<std::string> subtypes, PromptBuilderOptions options = {})
      : backend_(backend), subtypes_(std::move(subtypes)), options_(std::move(options)) {}

  std::size_t queries_issued() const { return queries_; }

  // Exactly `n_entities` unique names in discovery order. Each slot may be
  // retried `retry_budget` times (duplicates and backend failures both count).
  std::vector<std::string> discover_entities(Scale scale, std::size_t n_entities) {
    if (n_entities < 1) throw ConfigError("number of entities must be at least 1");
    std::vector<std::string> pool;
    std::set<std::string> seen;
    std::size_t query_index = 0;
    while (pool.size() < n_entities) {
      std::size_t retries = 0;
      std::string last_problem;
      while (true) {
        LlmRequest r = request(QueryKind::discover_entity, scale);
        r.excluded = pool;
        r.query_index = query_index++;
        r.user = render(options_.templates.discover_entity, r);
        try {
          std::string name = normalize_entity_name(ask(r));
          if (name.empty()) {
            last_problem = "empty entity name";
          } else if (!seen.insert(name).second) {
            last_problem = "duplicate entity '" + name + "'";
          } else {
            pool.push_back(std::move(name));
            break;
          }
        } catch (const BackendError& e) {
          last_problem = e.what();
        }
        if (++retries > options_.retry_budget) {
          throw BackendError("entity discovery at " + std::string(scale_name(scale)) + " scale gave up after " +
                                 std::to_string(retries) + " attempts: " + last_problem,
                             pool);
        }
      }
    }
    return pool;
  }

  EntityPrompt describe_entity(const std::string& entity, Scale scale) {
    if (entity.empty()) throw ArgumentError("entity name is empty");
    EntityPrompt out;
    out.name = entity;
    out.scale = scale;
    LlmRequest g = request(QueryKind::describe_generic, scale);
    g.entity = entity;
    g.user = render(options_.templates.describe_generic, g);
    out.generic = ask_text(g);
    for (const auto& c : subtypes_) {
      LlmRequest a = request(QueryKind::describe_attribute, scale);
      a.entity = entity;
      a.subtype = c;
      a.user = render(options_.templates.describe_attribute, a);
      out.attributes[c] = ask_text(a);
    }
    return out;
  }

  // The request embeds every entity name with its description for `subtype`.
  std::string summarize_slide(const std::string& subtype, Scale scale, const std::vector<EntityPrompt>& entities) {
    if (entities.empty()) throw ArgumentError("slide summary needs at least one entity prompt");
    LlmRequest r = request(QueryKind::summarize_slide, scale);
    r.subtype = subtype;
    std::vector<std::string> lines;
    for (const auto& e : entities) {
      r.context_entities.push_back(e.name);
      auto it = e.attributes.find(subtype);
      lines.push_back(e.name + ": " + (it != e.attributes.end() ? it->second : e.generic));
    }
    r.user = render(options_.templates.summarize_slide, r, join(lines, "; "));
    return ask_text(r);
  }

  std::string region_prompt(Scale scale) {
    LlmRequest r = request(QueryKind::region, scale);
    r.user = render(options_.templates.region, r);
    return ask_text(r);
  }

  PromptPack build(std::size_t n_entities) {
    if (subtypes_.size() < 2) throw ConfigError("a prompt pack needs at least two subtypes");
    PromptPack pack;
    pack.subtypes = subtypes_;
    for (Scale s : kAllScales) {
      auto& sp = pack.at(s);
      for (const auto& name : discover_entities(s, n_entities)) sp.entities.push_back(describe_entity(name, s));
      for (const auto& c : subtypes_) sp.slide_prompts[c] = summarize_slide(c, s, sp.entities);
      sp.region_prompt = region_prompt(s);
    }
    pack.validate(n_entities);
    return pack;
  }

 private:
  LlmRequest request(QueryKind kind, Scale scale) const {
    LlmRequest r;
    r.kind = kind;
    r.scale = scale;
    r.subtypes = subtypes_;
    r.system = options_.templates.system;
    r.temperature = 0.0;
    return r;
  }

  std::string render(const std::string& tmpl, const LlmRequest& r, const std::string& context = {}) const {
    return render_template(tmpl, {{"entity", r.entity},
                                  {"subtype", r.subtype},
                                  {"subtypes", "{" + join(r.subtypes, ", ") + "}"},
                                  {"scale", std::string(scale_name(r.scale))},
                                  {"excluded", "{" + join(r.excluded, ", ") + "}"},
                                  {"context", context}});
  }

  std::string ask(const LlmRequest& r) {
    ++queries_;
    return backend_.complete(r);
  }

  // Non-empty completion, retried on empty text or backend failure.
  std::string ask_text(const LlmRequest& r) {
    std::string problem;
    for (std::size_t attempt = 0; attempt <= options_.retry_budget; ++attempt) {
      try {
        std::string text = ask(r);
        const auto b = text.find_first_not_of(" \t\r\n");
        if (b != std::string::npos) {
          const auto e = text.find_last_not_of(" \t\r\n");
          return text.substr(b, e - b + 1);
        }
        problem = "empty completion";
      } catch (const BackendError& e) {
        problem = e.what();
      }
    }
    throw BackendError(std::string(query_kind_name(r.kind)) + " query failed after " +
                       std::to_string(options_.retry_budget + 1) + " attempts: " + problem);
  }

  LlmBackend& backend_;
  std::vector<std::string> subtypes_;
  PromptBuilderOptions options_;
  std::size_t queries_ = 0;
};

inline std::vector<std::string> discover_entities(const std::vector<std::string>& subtypes, Scale scale,
                                                  std::size_t n_entities, LlmBackend& backend,
                                                  PromptBuilderOptions options = {}) {
  return PromptBuilder(backend, subtypes, std::move(options)).discover_entities(scale, n_entities);
}

inline EntityPrompt describe_entity(const std::string& entity, Scale scale, const std::vector<std::string>& subtypes,
                                    LlmBackend& backend, PromptBuilderOptions options = {}) {
  return PromptBuilder(backend, subtypes, std::move(options)).describe_entity(entity, scale);
}

inline std::string summarize_slide(const std::string& subtype, Scale scale, const std::vector<EntityPrompt>& entities,
                                   const std::vector<std::string>& subtypes, LlmBackend& backend,
                                   PromptBuilderOptions options = {}) {
  return PromptBuilder(backend, subtypes, std::move(options)).summarize_slide(subtype, scale, entities);
}

inline PromptPack build_prompt_pack(const std::vector<std::string>& subtypes, std::size_t n_entities,
                                    LlmBackend& backend, PromptBuilderOptions options = {}) {
  return PromptBuilder(backend, subtypes, std::move(options)).build(n_entities);
}

}  // namespace maple
