#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mactk/backend.hpp"
#include "mactk/knowledge_base.hpp"
#include "mactk/prompt.hpp"

namespace mactk {

enum class TaskKind { Relevance14, MultipleChoice, Sentiment3 };

TaskKind parse_task_kind(std::string_view text);
const char* to_string(TaskKind kind);

/// Task definition: label space, output contract and which F1 flavor the
/// task reports (relevance uses macro-F1, the other two weighted-F1).
struct TaskSpec {
  TaskKind kind = TaskKind::Relevance14;

  static TaskSpec make(TaskKind kind);

  /// Contract for an item; n_choices matters only for multiple choice,
  /// where the scale is 1..#choices of that item.
  OutputContract contract(std::size_t n_choices = 0) const;
  const char* f1_name() const {
    return kind == TaskKind::Relevance14 ? "macro_f1" : "weighted_f1";
  }
};

struct LabeledItem {
  std::string id;
  std::string text;  // multiple choice: question + enumerated options
  ParsedLabel gold{0};
  std::optional<AspectBindings> bindings;
  std::optional<std::string> cot_output;
  std::vector<std::string> choices;
};

/// JSONL loader; schema depends on the task:
///   relevance:        {"id", "text", "label": 1..4, "bindings"?, "cot_output"?}
///   multiple_choice:  {"id", "question", "choices": [..], "label": 1-based index, ...}
///   sentiment:        {"id", "text", "score": real} or {"id", "text", "label": name}
/// Sentiment scores are discretized with `thresholds`. Duplicate ids and
/// out-of-scale labels are load errors naming the line.
std::vector<LabeledItem> load_dataset(const std::string& path, const TaskSpec& task,
                                      std::pair<double, double> thresholds = {-0.1, 0.1});

/// score < lo → negative; lo ≤ score ≤ hi → neutral (closed interval);
/// score > hi → positive. score must lie in [−1, 1].
std::string discretize_sentiment(double score, double lo, double hi);

/// Seeded shuffle split; |test| = round(fraction·n) clamped to [1, n−1].
std::pair<std::vector<LabeledItem>, std::vector<LabeledItem>> split_holdout(
    const std::vector<LabeledItem>& items, double fraction, std::uint64_t seed);

/// Seeded sample of k items without replacement. When stratified and
/// k ≥ #labels, every gold label gets one demo and the remainder follows
/// label support (largest-remainder rounding); otherwise a plain sample.
std::vector<LabeledItem> sample_few_shot(const std::vector<LabeledItem>& train,
                                         std::size_t k, std::uint64_t seed,
                                         bool stratified = true);

struct MetricValues {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
};

/// Confusion-matrix metrics over label strings. Macro-F1 averages per-class
/// F1 over the classes present in golds; weighted-F1 weights those classes
/// by gold support.
MetricValues compute_metrics(const std::vector<std::string>& preds,
                             const std::vector<std::string>& golds);

/// Fleiss' kappa over an items × categories matrix of rating counts; every
/// item must carry the same number of ratings n ≥ 2. All mass in a single
/// category makes chance agreement 1 and raises a degenerate-agreement
/// error.
double fleiss_kappa(const std::vector<std::vector<std::size_t>>& rating_counts);

struct TrialLog {
  std::uint64_t seed = 0;
  std::string item_id;
  std::string gold;
  std::string pred;  // empty on parse failure
  bool correct = false;
  bool parse_failure = false;
};

struct SeedRun {
  std::uint64_t seed = 0;
  MetricValues metrics;
  std::size_t n_test = 0;
  std::size_t parse_failures = 0;
  bool partial = false;  // backend gave out mid-seed
};

struct MetricsReport {
  TaskKind task = TaskKind::Relevance14;
  PromptMode mode = PromptMode::Vanilla;
  std::size_t k = 0;
  std::string backend_name;
  std::vector<SeedRun> seeds;
  std::vector<TrialLog> trials;  // sorted by (seed, test order)
  std::string notes;

  double mean_accuracy() const;
  double std_accuracy() const;
  double mean_f1(TaskKind kind) const;
  double std_f1(TaskKind kind) const;
  bool any_partial() const;
};

struct EvalConfig {
  double holdout_fraction = 0.1;
  bool stratified = true;
  GenerationParams params;
  const KnowledgeBase* kb = nullptr;  // mac-mode bindings when items carry none
};

/// Per seed: holdout split, demo sampling, one completion per test item,
/// parse, score. Parse failures count as wrong answers and are tallied. A
/// backend outage aborts that seed's remaining items and marks it partial.
MetricsReport run_eval(Backend& backend, const PromptTemplate& tpl, const TaskSpec& task,
                       const std::vector<LabeledItem>& dataset, PromptMode mode,
                       std::size_t k, const std::vector<std::uint64_t>& seeds,
                       const EvalConfig& config);

/// Versioned document ("mactk-eval/1") holding one or more runs.
nlohmann::ordered_json metrics_report_json(const std::vector<MetricsReport>& runs);
nlohmann::ordered_json trial_log_json(const TrialLog& trial);

/// Text table, one row per run: mode, k, accuracy and F1 as mean ± std.
std::string metrics_table(const std::vector<MetricsReport>& runs);

}  // namespace mactk
