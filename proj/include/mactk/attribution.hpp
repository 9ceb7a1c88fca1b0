#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mactk/backend.hpp"
#include "mactk/bindings.hpp"
#include "mactk/prompt.hpp"

namespace mactk {

/// A set-valued function over players 0..n-1 with a memoizing, thread-safe
/// evaluation cache: every distinct subset is computed at most once, and
/// concurrent callers asking for the same subset wait for the first result.
class CoalitionGame {
 public:
  using ValueFn = std::function<double(std::uint64_t subset_mask)>;

  CoalitionGame(std::size_t n, ValueFn f);
  ~CoalitionGame();
  CoalitionGame(const CoalitionGame&) = delete;
  CoalitionGame& operator=(const CoalitionGame&) = delete;

  std::size_t n() const { return n_; }
  double value(std::uint64_t subset_mask);
  std::size_t evaluations() const;  // distinct subsets computed so far

 private:
  struct Cache;
  std::size_t n_;
  ValueFn f_;
  std::unique_ptr<Cache> cache_;
};

struct AspectAttribution {
  double estimate = 0.0;
  double stderr_ = 0.0;
  std::size_t n_samples = 0;
};

struct AttributionResult {
  std::vector<AspectAttribution> aspects;
  double baseline_value = 0.0;  // f(∅)
  double full_value = 0.0;      // f(all)
  std::size_t permutations_used = 0;
  std::uint64_t seed = 0;
  std::string method;  // "exact" | "sampled"
};

/// Exhaustive Shapley values: φ_i = Σ_{S ∌ i} |S|!(n−|S|−1)!/n! · (f(S∪{i}) − f(S)).
/// Costs 2^n evaluations; refuses n > 20.
AttributionResult exact_shapley(CoalitionGame& game);

/// Castro-style permutation sampling: draws m seeded permutations, walks
/// each one crediting every player its marginal contribution over the
/// prefix, and averages. stderr is the sample standard deviation of the
/// marginals over √m. Permutation p draws from its own generator derived
/// from (seed, p), so results are identical for any worker count.
AttributionResult sampled_shapley(CoalitionGame& game, std::size_t m_permutations,
                                  std::uint64_t seed, unsigned n_workers = 1);

enum class ScoringMode { TargetLogprob, ScalarOutput };
enum class ParsePolicy { ScaleMinimum, Abort };

ScoringMode parse_scoring_mode(std::string_view text);
const char* to_string(ScoringMode mode);

struct AspectGameConfig {
  ScoringMode scoring = ScoringMode::ScalarOutput;
  ParsePolicy on_parse_failure = ParsePolicy::ScaleMinimum;
  GenerationParams params;
  std::optional<std::string> target;  // required for TargetLogprob
};

struct AspectPlayer {
  std::string slot;
  std::string value;  // comma-joined match values
  std::size_t slot_index = 0;
  std::vector<Span> spans;
};

struct AspectGame {
  std::unique_ptr<CoalitionGame> game;
  std::vector<AspectPlayer> players;
};

/// Scores one prompt under the configured mode: the target continuation's
/// log-probability, or the parsed scalar output (parse failures map to the
/// scale minimum or abort, per policy).
double score_prompt(Backend& backend, const std::string& prompt_text,
                    const OutputContract& contract, const AspectGameConfig& config);

/// Game over the item's filled aspect slots: player i present in S means
/// slot i keeps its values, absent means the slot renders empty; the
/// baseline is the all-slots-empty prompt, so prompt shape is constant and
/// only aspect values vary. Evaluations are lazy and cached.
AspectGame build_aspect_game(Backend& backend, const PromptTemplate& tpl,
                             const std::vector<Demonstration>& demos,
                             const std::string& item_text, const AspectBindings& bindings,
                             const AspectGameConfig& config);

struct AttributionReport {
  AttributionResult result;
  std::vector<AspectPlayer> players;
  std::string scoring;  // wire value of ScoringMode
  std::optional<double> vanilla_value;  // no-aspects prompt, reported alongside
};

/// Versioned JSON document ("mactk-attribution/1") carrying every result
/// field keyed by slot/value; parses back to an equal report.
nlohmann::ordered_json attribution_report_json(const AttributionReport& report);
AttributionReport attribution_report_from_json(const nlohmann::ordered_json& j,
                                               const std::string& origin);

/// Plain-text view: per-aspect rows sorted by estimate (descending) with
/// sign-scaled ASCII bars, then the item text with every aspect span
/// annotated with its signed contribution. ansi=true adds color only.
std::string attribution_report_text(const AttributionReport& report,
                                    const std::string& item_text, bool ansi = false);

}  // namespace mactk
