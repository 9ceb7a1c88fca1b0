#pragma once

#include <nlohmann/json_fwd.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mactk/backend.hpp"
#include "mactk/prompt.hpp"

namespace mactk {

/// News-appearance count bands; boundaries are lower-inclusive so 10, 1000
/// and 10000 each land in the higher band.
enum class FrequencyBand { Rare, LessFrequent, Frequent, HighlyFrequent };

inline constexpr std::size_t kBandCount = 4;

FrequencyBand categorize_frequency(std::uint64_t count);
const char* to_string(FrequencyBand band);

struct EntityRecord {
  std::string name;
  std::vector<std::string> aliases;
  std::uint64_t frequency_count = 0;
  std::vector<std::string> headlines;
};

/// JSONL, one record per line: {"name", "aliases"?, "frequency_count",
/// "headlines"}. Load errors name the offending line.
std::vector<EntityRecord> load_entities(const std::string& path);

/// True iff the entity name or any alias occurs in the text under the
/// extractor's matching rule (case-insensitive, word boundaries).
bool detect_mention(const std::string& output_text, const EntityRecord& entity);

enum class Condition { WithAspects, WithoutAspects };

const char* to_string(Condition condition);

struct MemorizationTrial {
  std::string entity;
  std::size_t headline_index = 0;
  FrequencyBand band = FrequencyBand::Rare;
  Condition condition = Condition::WithAspects;
  bool memorized = false;
  bool errored = false;
  std::string error;
  std::string completion;
};

struct BandStats {
  std::size_t n_trials = 0;  // non-errored
  std::size_t n_memorized = 0;
  std::size_t n_errors = 0;

  double rate() const {
    return n_trials ? static_cast<double>(n_memorized) / static_cast<double>(n_trials) : 0.0;
  }
};

struct MemorizationReport {
  std::array<BandStats, kBandCount> with_aspects{};
  std::array<BandStats, kBandCount> without_aspects{};
  std::vector<MemorizationTrial> trials;
  std::vector<std::string> excluded_entities;  // mentioned by a demonstration
  std::vector<Condition> conditions;
  std::string backend_name;
  std::size_t k_shot = 0;
  std::uint64_t seed = 0;

  const std::array<BandStats, kBandCount>& stats(Condition condition) const {
    return condition == Condition::WithAspects ? with_aspects : without_aspects;
  }
};

struct MemorizationConfig {
  std::vector<Condition> conditions{Condition::WithAspects, Condition::WithoutAspects};
  GenerationParams params;
  std::string entity_slot = "TSP";  // schema slot the entities bind into
  bool include_demo_entities = false;
  std::uint64_t seed = 0;
};

/// One trial per (entity, headline, condition): with_aspects renders the
/// mac prompt with the entity bound via extraction over the collection's
/// own lexicon, without_aspects renders vanilla; a trial counts as
/// memorized when the completion mentions the entity. Backend failures
/// mark the trial errored and drop it from the denominator. Entities that
/// any demonstration text mentions are excluded (configurable) and listed.
MemorizationReport run_memorization(Backend& backend, const PromptTemplate& tpl,
                                    const std::vector<Demonstration>& demos,
                                    const std::vector<EntityRecord>& entities,
                                    const MemorizationConfig& config);

/// Versioned report document ("mactk-memorization/1").
nlohmann::ordered_json memorization_report_json(const MemorizationReport& report);
nlohmann::ordered_json memorization_trial_json(const MemorizationTrial& trial);

/// Band x condition text table (one row per band, rate columns).
std::string memorization_table(const MemorizationReport& report);

}  // namespace mactk
