#include "mactk/memorization.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "mactk/errors.hpp"
#include "mactk/knowledge_base.hpp"
#include "mactk/text.hpp"

namespace mactk {

using nlohmann::ordered_json;

FrequencyBand categorize_frequency(std::uint64_t count) {
  if (count < 10) return FrequencyBand::Rare;
  if (count < 1000) return FrequencyBand::LessFrequent;
  if (count < 10000) return FrequencyBand::Frequent;
  return FrequencyBand::HighlyFrequent;
}

const char* to_string(FrequencyBand band) {
  switch (band) {
    case FrequencyBand::Rare: return "rare";
    case FrequencyBand::LessFrequent: return "less_frequent";
    case FrequencyBand::Frequent: return "frequent";
    case FrequencyBand::HighlyFrequent: return "highly_frequent";
  }
  return "?";
}

const char* to_string(Condition condition) {
  return condition == Condition::WithAspects ? "with_aspects" : "without_aspects";
}

std::vector<EntityRecord> load_entities(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Load, "cannot open entities file '" + path + "'");
  std::vector<EntityRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string origin = path + ":" + std::to_string(line_no);
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      fail(ErrorKind::Load, origin + ": " + e.what());
    }
    EntityRecord record;
    try {
      record.name = j.at("name").get<std::string>();
      record.aliases = j.value("aliases", std::vector<std::string>{});
      record.frequency_count = j.at("frequency_count").get<std::uint64_t>();
      record.headlines = j.at("headlines").get<std::vector<std::string>>();
    } catch (const std::exception& e) {
      fail(ErrorKind::Load, origin + ": " + e.what());
    }
    if (record.name.empty()) fail(ErrorKind::Load, origin + ": entity name is empty");
    if (record.headlines.empty())
      fail(ErrorKind::Load, origin + ": entity '" + record.name + "' has no headlines");
    for (std::size_t h = 0; h < record.headlines.size(); ++h) {
      if (!detect_mention(record.headlines[h], record))
        fail(ErrorKind::Load, origin + ": headline " + std::to_string(h) +
                                  " does not mention '" + record.name + "' or an alias");
    }
    out.push_back(std::move(record));
  }
  return out;
}

bool detect_mention(const std::string& output_text, const EntityRecord& entity) {
  if (output_text.empty())
    fail(ErrorKind::InvalidInput, "mention detection needs non-empty text");
  if (contains_term(output_text, entity.name)) return true;
  return std::any_of(entity.aliases.begin(), entity.aliases.end(),
                     [&](const std::string& alias) {
                       return !alias.empty() && contains_term(output_text, alias);
                     });
}

namespace {

std::size_t band_index(FrequencyBand band) { return static_cast<std::size_t>(band); }

}  // namespace

MemorizationReport run_memorization(Backend& backend, const PromptTemplate& tpl,
                                    const std::vector<Demonstration>& demos,
                                    const std::vector<EntityRecord>& entities,
                                    const MemorizationConfig& config) {
  tpl.validate();
  config.params.validate();
  if (entities.empty()) fail(ErrorKind::InvalidInput, "no entities to evaluate");
  if (config.conditions.empty()) fail(ErrorKind::InvalidInput, "no conditions requested");
  if (!tpl.schema.index_of(config.entity_slot))
    fail(ErrorKind::SchemaMismatch, "template schema has no '" + config.entity_slot +
                                        "' slot to bind entities into");

  // The collection is its own lexicon: every entity name and alias maps to
  // the canonical name under the configured slot.
  KnowledgeBase kb;
  kb.add_slot(config.entity_slot);
  for (const auto& entity : entities) {
    kb.add_entry(config.entity_slot, entity.name, entity.name);
    for (const auto& alias : entity.aliases)
      kb.add_entry(config.entity_slot, alias, entity.name);
  }

  MemorizationReport report;
  report.conditions = config.conditions;
  report.backend_name = backend.name();
  report.k_shot = demos.size();
  report.seed = config.seed;

  std::vector<const EntityRecord*> evaluated;
  for (const auto& entity : entities) {
    const bool overlaps = std::any_of(demos.begin(), demos.end(), [&](const Demonstration& d) {
      return detect_mention(d.item_text, entity);
    });
    if (overlaps) {
      report.excluded_entities.push_back(entity.name);
      if (!config.include_demo_entities) continue;
    }
    evaluated.push_back(&entity);
  }
  if (evaluated.empty())
    fail(ErrorKind::InvalidInput,
         "every entity is mentioned by a demonstration; nothing left to evaluate");

  for (Condition condition : config.conditions) {
    auto& stats =
        condition == Condition::WithAspects ? report.with_aspects : report.without_aspects;
    for (const EntityRecord* entity : evaluated) {
      const FrequencyBand band = categorize_frequency(entity->frequency_count);
      for (std::size_t h = 0; h < entity->headlines.size(); ++h) {
        const std::string& headline = entity->headlines[h];
        MemorizationTrial trial;
        trial.entity = entity->name;
        trial.headline_index = h;
        trial.band = band;
        trial.condition = condition;

        AspectBindings bindings;
        PromptMode mode = PromptMode::Vanilla;
        if (condition == Condition::WithAspects) {
          bindings = extract_aspects(kb, headline);
          const std::vector<AspectMatch>* matches = bindings.find(config.entity_slot);
          const bool bound =
              matches && std::any_of(matches->begin(), matches->end(),
                                     [&](const AspectMatch& m) { return m.value == entity->name; });
          if (!bound)
            fail(ErrorKind::InvalidInput, "extraction does not bind '" + entity->name +
                                              "' in headline " + std::to_string(h));
          mode = PromptMode::Mac;
        }
        const RenderedPrompt prompt = render_prompt(tpl, demos, headline, bindings, mode);
        try {
          const Completion completion = backend.complete(prompt.full_text, config.params);
          trial.completion = completion.text;
          trial.memorized =
              !completion.text.empty() && detect_mention(completion.text, *entity);
          stats[band_index(band)].n_trials += 1;
          stats[band_index(band)].n_memorized += trial.memorized ? 1 : 0;
        } catch (const Error& e) {
          trial.errored = true;
          trial.error = e.what();
          stats[band_index(band)].n_errors += 1;
        }
        report.trials.push_back(std::move(trial));
      }
    }
  }
  return report;
}

ordered_json memorization_trial_json(const MemorizationTrial& trial) {
  ordered_json j;
  j["entity"] = trial.entity;
  j["headline_index"] = trial.headline_index;
  j["band"] = to_string(trial.band);
  j["condition"] = to_string(trial.condition);
  j["memorized"] = trial.memorized;
  j["errored"] = trial.errored;
  if (trial.errored) j["error"] = trial.error;
  j["completion"] = trial.completion;
  return j;
}

ordered_json memorization_report_json(const MemorizationReport& report) {
  ordered_json j;
  j["format"] = "mactk-memorization/1";
  j["backend"] = report.backend_name;
  j["k_shot"] = report.k_shot;
  j["seed"] = report.seed;
  j["conditions"] = ordered_json::array();
  for (Condition condition : report.conditions) j["conditions"].push_back(to_string(condition));
  j["excluded_entities"] = report.excluded_entities;
  bool partial = false;
  for (const auto& trial : report.trials) partial = partial || trial.errored;
  j["partial"] = partial;
  j["bands"] = ordered_json::array();
  for (std::size_t b = 0; b < kBandCount; ++b) {
    ordered_json row;
    row["band"] = to_string(static_cast<FrequencyBand>(b));
    for (Condition condition : report.conditions) {
      const BandStats& stats = report.stats(condition)[b];
      ordered_json cell;
      cell["n_trials"] = stats.n_trials;
      cell["n_memorized"] = stats.n_memorized;
      cell["n_errors"] = stats.n_errors;
      cell["rate"] = stats.rate();
      row[to_string(condition)] = std::move(cell);
    }
    j["bands"].push_back(std::move(row));
  }
  return j;
}

std::string memorization_table(const MemorizationReport& report) {
  char buffer[160];
  std::string out = "MEMORIZATION RATE BY FREQUENCY BAND\n";
  std::snprintf(buffer, sizeof buffer, "%-18s", "band");
  out += buffer;
  for (Condition condition : report.conditions) {
    std::snprintf(buffer, sizeof buffer, "  %18s", to_string(condition));
    out += buffer;
  }
  out += "\n";
  for (std::size_t b = 0; b < kBandCount; ++b) {
    std::snprintf(buffer, sizeof buffer, "%-18s", to_string(static_cast<FrequencyBand>(b)));
    out += buffer;
    for (Condition condition : report.conditions) {
      const BandStats& stats = report.stats(condition)[b];
      std::snprintf(buffer, sizeof buffer, "  %12.4f (%zu/%zu)", stats.rate(),
                    stats.n_memorized, stats.n_trials);
      out += buffer;
    }
    out += "\n";
  }
  return out;
}

}  // namespace mactk
