#include "mactk/eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "mactk/errors.hpp"
#include "mactk/rng.hpp"

namespace mactk {

using nlohmann::ordered_json;

TaskKind parse_task_kind(std::string_view text) {
  if (text == "relevance_1_4") return TaskKind::Relevance14;
  if (text == "multiple_choice") return TaskKind::MultipleChoice;
  if (text == "sentiment_3way") return TaskKind::Sentiment3;
  fail(ErrorKind::Config, "unknown task '" + std::string(text) +
                              "' (expected relevance_1_4, multiple_choice or sentiment_3way)");
}

const char* to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Relevance14: return "relevance_1_4";
    case TaskKind::MultipleChoice: return "multiple_choice";
    case TaskKind::Sentiment3: return "sentiment_3way";
  }
  return "?";
}

TaskSpec TaskSpec::make(TaskKind kind) { return TaskSpec{kind}; }

OutputContract TaskSpec::contract(std::size_t n_choices) const {
  OutputContract contract;
  switch (kind) {
    case TaskKind::Relevance14:
      contract.output_key = "score";
      contract.scale = IntRange{1, 4};
      break;
    case TaskKind::MultipleChoice:
      if (n_choices < 2)
        fail(ErrorKind::Config, "a multiple-choice contract needs at least 2 choices");
      contract.output_key = "choice";
      contract.scale = IntRange{1, static_cast<int>(n_choices)};
      break;
    case TaskKind::Sentiment3:
      contract.output_key = "sentiment";
      contract.scale = std::vector<std::string>{"negative", "neutral", "positive"};
      break;
  }
  return contract;
}

std::string discretize_sentiment(double score, double lo, double hi) {
  if (!(lo < hi))
    fail(ErrorKind::InvalidInput, "sentiment thresholds must satisfy lo < hi");
  if (score < -1.0 || score > 1.0)
    fail(ErrorKind::Range, "sentiment score " + std::to_string(score) +
                               " lies outside [-1, 1]");
  if (score < lo) return "negative";
  if (score > hi) return "positive";
  return "neutral";  // [lo, hi] is a closed interval
}

namespace {

std::optional<AspectBindings> bindings_from_json(const ordered_json& j) {
  if (!j.contains("bindings")) return std::nullopt;
  return AspectBindings::from_json(j.at("bindings"));
}

// Single prompt body listing all options, answered by a 1-based index.
std::string monolithic_choice_text(const std::string& question,
                                   const std::vector<std::string>& choices) {
  std::string text = question + "\nOPTIONS:";
  for (std::size_t i = 0; i < choices.size(); ++i)
    text += "\n" + std::to_string(i + 1) + ". " + choices[i];
  return text;
}

}  // namespace

std::vector<LabeledItem> load_dataset(const std::string& path, const TaskSpec& task,
                                      std::pair<double, double> thresholds) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Load, "cannot open dataset '" + path + "'");
  std::vector<LabeledItem> out;
  std::set<std::string> ids;
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
    LabeledItem item;
    try {
      item.id = j.at("id").get<std::string>();
      switch (task.kind) {
        case TaskKind::Relevance14: {
          item.text = j.at("text").get<std::string>();
          const int label = j.at("label").get<int>();
          if (label < 1 || label > 4)
            fail(ErrorKind::Load, origin + ": label " + std::to_string(label) +
                                      " outside the 1-4 scale");
          item.gold = label;
          break;
        }
        case TaskKind::MultipleChoice: {
          item.choices = j.at("choices").get<std::vector<std::string>>();
          if (item.choices.size() < 2)
            fail(ErrorKind::Load, origin + ": needs at least 2 choices");
          item.text = monolithic_choice_text(j.at("question").get<std::string>(),
                                             item.choices);
          const int label = j.at("label").get<int>();
          if (label < 1 || static_cast<std::size_t>(label) > item.choices.size())
            fail(ErrorKind::Load, origin + ": gold index " + std::to_string(label) +
                                      " outside 1.." + std::to_string(item.choices.size()));
          item.gold = label;
          break;
        }
        case TaskKind::Sentiment3: {
          item.text = j.at("text").get<std::string>();
          if (j.contains("score")) {
            item.gold = discretize_sentiment(j.at("score").get<double>(), thresholds.first,
                                             thresholds.second);
          } else {
            const std::string label = j.at("label").get<std::string>();
            if (label != "negative" && label != "neutral" && label != "positive")
              fail(ErrorKind::Load, origin + ": label '" + label +
                                        "' is not negative/neutral/positive");
            item.gold = label;
          }
          break;
        }
      }
      item.bindings = bindings_from_json(j);
      if (j.contains("cot_output"))
        item.cot_output = j.at("cot_output").get<std::string>();
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      fail(ErrorKind::Load, origin + ": " + e.what());
    }
    if (!ids.insert(item.id).second)
      fail(ErrorKind::Load, origin + ": duplicate item id '" + item.id + "'");
    if (item.text.empty()) fail(ErrorKind::Load, origin + ": item text is empty");
    out.push_back(std::move(item));
  }
  return out;
}

std::pair<std::vector<LabeledItem>, std::vector<LabeledItem>> split_holdout(
    const std::vector<LabeledItem>& items, double fraction, std::uint64_t seed) {
  if (items.size() < 2)
    fail(ErrorKind::InvalidInput, "holdout split needs at least 2 items");
  if (fraction <= 0.0 || fraction >= 1.0)
    fail(ErrorKind::InvalidInput, "holdout fraction must lie in (0, 1)");
  const std::size_t n = items.size();
  auto t = static_cast<std::size_t>(
      std::lround(fraction * static_cast<double>(n)));
  t = std::clamp<std::size_t>(t, 1, n - 1);

  Rng rng(seed);
  std::vector<std::size_t> order = random_permutation(n, rng);
  std::vector<std::size_t> test_idx(order.begin(), order.begin() + static_cast<long>(t));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<long>(t), order.end());
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  std::pair<std::vector<LabeledItem>, std::vector<LabeledItem>> out;
  for (std::size_t i : train_idx) out.first.push_back(items[i]);
  for (std::size_t i : test_idx) out.second.push_back(items[i]);
  return out;
}

std::vector<LabeledItem> sample_few_shot(const std::vector<LabeledItem>& train,
                                         std::size_t k, std::uint64_t seed,
                                         bool stratified) {
  if (k > train.size())
    fail(ErrorKind::Capacity, "asked for " + std::to_string(k) + " demos from " +
                                  std::to_string(train.size()) + " training items");
  if (k == 0) return {};

  Rng rng(seed);
  std::vector<std::size_t> chosen;

  // Label groups in order of first appearance, for a deterministic walk.
  std::vector<std::pair<std::string, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const std::string label = label_text(train[i].gold);
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const auto& g) { return g.first == label; });
    if (it == groups.end())
      groups.push_back({label, {i}});
    else
      it->second.push_back(i);
  }

  if (!stratified || k < groups.size()) {
    std::vector<std::size_t> order = random_permutation(train.size(), rng);
    chosen.assign(order.begin(), order.begin() + static_cast<long>(k));
  } else {
    // One demo per label, remainder proportional to support with
    // largest-remainder rounding, capped by availability.
    const auto n_labels = groups.size();
    std::vector<std::size_t> alloc(n_labels, 1);
    const std::size_t remainder = k - n_labels;
    if (remainder > 0) {
      const auto total = static_cast<double>(train.size());
      std::vector<double> quota(n_labels);
      std::size_t assigned = 0;
      for (std::size_t g = 0; g < n_labels; ++g) {
        quota[g] = static_cast<double>(remainder) *
                   static_cast<double>(groups[g].second.size()) / total;
        const auto whole = static_cast<std::size_t>(quota[g]);
        alloc[g] += whole;
        assigned += whole;
        quota[g] -= static_cast<double>(whole);
      }
      std::vector<std::size_t> by_fraction(n_labels);
      for (std::size_t g = 0; g < n_labels; ++g) by_fraction[g] = g;
      std::stable_sort(by_fraction.begin(), by_fraction.end(),
                       [&](std::size_t a, std::size_t b) { return quota[a] > quota[b]; });
      for (std::size_t r = assigned; r < remainder; ++r)
        alloc[by_fraction[r - assigned]] += 1;
    }
    // Holding the per-label floor of one may overshoot a tiny group's
    // support; shift the surplus to groups with headroom.
    for (std::size_t g = 0; g < n_labels; ++g) {
      while (alloc[g] > groups[g].second.size()) {
        alloc[g] -= 1;
        for (std::size_t other = 0; other < n_labels; ++other) {
          if (alloc[other] < groups[other].second.size()) {
            alloc[other] += 1;
            break;
          }
        }
      }
    }
    for (std::size_t g = 0; g < n_labels; ++g) {
      std::vector<std::size_t> pool = groups[g].second;
      shuffle(pool, rng);
      chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<long>(alloc[g]));
    }
  }

  std::sort(chosen.begin(), chosen.end());
  std::vector<LabeledItem> out;
  for (std::size_t i : chosen) out.push_back(train[i]);
  return out;
}

MetricValues compute_metrics(const std::vector<std::string>& preds,
                             const std::vector<std::string>& golds) {
  if (preds.size() != golds.size() || golds.empty())
    fail(ErrorKind::Metric, "prediction/gold vectors must be equal-length and non-empty");

  const auto n = static_cast<double>(golds.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) hits += preds[i] == golds[i] ? 1 : 0;

  // Classes present in golds, in order of first appearance.
  std::vector<std::string> classes;
  for (const auto& gold : golds)
    if (std::find(classes.begin(), classes.end(), gold) == classes.end())
      classes.push_back(gold);

  MetricValues out;
  out.accuracy = static_cast<double>(hits) / n;
  for (const auto& cls : classes) {
    std::size_t tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) {
      const bool is_gold = golds[i] == cls;
      const bool is_pred = preds[i] == cls;
      support += is_gold ? 1 : 0;
      if (is_gold && is_pred) ++tp;
      if (!is_gold && is_pred) ++fp;
      if (is_gold && !is_pred) ++fn;
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    const double f1 = denom > 0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
    out.macro_f1 += f1 / static_cast<double>(classes.size());
    out.weighted_f1 += f1 * static_cast<double>(support) / n;
  }
  return out;
}

double fleiss_kappa(const std::vector<std::vector<std::size_t>>& rating_counts) {
  if (rating_counts.empty() || rating_counts.front().empty())
    fail(ErrorKind::Shape, "rating matrix is empty");
  const std::size_t n_items = rating_counts.size();
  const std::size_t n_cats = rating_counts.front().size();
  std::size_t raters = 0;
  for (const auto& count : rating_counts.front()) raters += count;
  if (raters < 2) fail(ErrorKind::Shape, "every item needs at least 2 ratings");

  double p_bar = 0.0;
  std::vector<double> category_mass(n_cats, 0.0);
  for (const auto& row : rating_counts) {
    if (row.size() != n_cats)
      fail(ErrorKind::Shape, "rating matrix rows have differing category counts");
    std::size_t total = 0;
    double agreement = 0.0;
    for (std::size_t c = 0; c < n_cats; ++c) {
      total += row[c];
      agreement += static_cast<double>(row[c]) * static_cast<double>(row[c]);
      category_mass[c] += static_cast<double>(row[c]);
    }
    if (total != raters)
      fail(ErrorKind::Shape, "every item must carry the same number of ratings (" +
                                 std::to_string(raters) + ")");
    const auto r = static_cast<double>(raters);
    p_bar += (agreement - r) / (r * (r - 1.0));
  }
  p_bar /= static_cast<double>(n_items);

  double pe_bar = 0.0;
  const double mass = static_cast<double>(n_items) * static_cast<double>(raters);
  for (double total : category_mass) {
    const double p = total / mass;
    pe_bar += p * p;
  }
  if (pe_bar >= 1.0)
    fail(ErrorKind::DegenerateAgreement,
         "all ratings fall in one category; kappa is undefined (0/0)");
  return (p_bar - pe_bar) / (1.0 - pe_bar);
}

namespace {

double mean_of(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double sample_std(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const double mean = mean_of(values);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

double pick_f1(const MetricValues& metrics, TaskKind kind) {
  return kind == TaskKind::Relevance14 ? metrics.macro_f1 : metrics.weighted_f1;
}

}  // namespace

double MetricsReport::mean_accuracy() const {
  std::vector<double> values;
  for (const auto& run : seeds) values.push_back(run.metrics.accuracy);
  return mean_of(values);
}

double MetricsReport::std_accuracy() const {
  std::vector<double> values;
  for (const auto& run : seeds) values.push_back(run.metrics.accuracy);
  return sample_std(values);
}

double MetricsReport::mean_f1(TaskKind kind) const {
  std::vector<double> values;
  for (const auto& run : seeds) values.push_back(pick_f1(run.metrics, kind));
  return mean_of(values);
}

double MetricsReport::std_f1(TaskKind kind) const {
  std::vector<double> values;
  for (const auto& run : seeds) values.push_back(pick_f1(run.metrics, kind));
  return sample_std(values);
}

bool MetricsReport::any_partial() const {
  return std::any_of(seeds.begin(), seeds.end(), [](const SeedRun& s) { return s.partial; });
}

namespace {

Demonstration to_demonstration(const LabeledItem& item, const TaskSpec& task,
                               PromptMode mode, const EvalConfig& config) {
  Demonstration demo;
  demo.item_text = item.text;
  if (item.bindings)
    demo.bindings = *item.bindings;
  else if (config.kb)
    demo.bindings = extract_aspects(*config.kb, item.text);
  if (mode == PromptMode::Cot) {
    if (!item.cot_output)
      fail(ErrorKind::Config, "item '" + item.id +
                                  "' has no cot_output; cot demos need worked reasoning");
    demo.gold_output = *item.cot_output;
  } else {
    demo.gold_output = format_label(task.contract(item.choices.size()), item.gold);
  }
  return demo;
}

}  // namespace

MetricsReport run_eval(Backend& backend, const PromptTemplate& tpl, const TaskSpec& task,
                       const std::vector<LabeledItem>& dataset, PromptMode mode,
                       std::size_t k, const std::vector<std::uint64_t>& seeds,
                       const EvalConfig& config) {
  tpl.validate();
  config.params.validate();
  if (dataset.empty()) fail(ErrorKind::InvalidInput, "dataset is empty");
  if (seeds.empty()) fail(ErrorKind::InvalidInput, "need at least one seed");

  MetricsReport report;
  report.task = task.kind;
  report.mode = mode;
  report.k = k;
  report.backend_name = backend.name();
  if (task.kind == TaskKind::MultipleChoice)
    report.notes = "weighted_f1 is computed over option positions";

  for (std::uint64_t seed : seeds) {
    auto [train, test] = split_holdout(dataset, config.holdout_fraction, seed);
    const std::vector<LabeledItem> demo_items =
        sample_few_shot(train, k, seed, config.stratified);
    std::vector<Demonstration> demos;
    for (const auto& item : demo_items)
      demos.push_back(to_demonstration(item, task, mode, config));

    SeedRun run;
    run.seed = seed;
    std::vector<std::string> preds, golds;
    for (const auto& item : test) {
      AspectBindings bindings;
      if (mode == PromptMode::Mac) {
        if (item.bindings)
          bindings = *item.bindings;
        else if (config.kb)
          bindings = extract_aspects(*config.kb, item.text);
        else
          fail(ErrorKind::Config, "mac mode needs bindings on item '" + item.id +
                                      "' or a knowledge base to extract them");
      }
      const OutputContract contract = task.contract(item.choices.size());
      const RenderedPrompt prompt = render_prompt(tpl, demos, item.text, bindings, mode);

      TrialLog trial;
      trial.seed = seed;
      trial.item_id = item.id;
      trial.gold = label_text(item.gold);
      try {
        const Completion completion = backend.complete(prompt.full_text, config.params);
        try {
          trial.pred = label_text(parse_output(completion.text, contract));
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::ParseFailure && e.kind() != ErrorKind::OutOfRange) throw;
          trial.parse_failure = true;
          run.parse_failures += 1;
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::BackendUnavailable && e.kind() != ErrorKind::Credential)
          throw;
        run.partial = true;  // backend outage: stop this seed, keep the rest
      }
      if (run.partial) break;
      trial.correct = !trial.parse_failure && trial.pred == trial.gold;
      preds.push_back(trial.pred);
      golds.push_back(trial.gold);
      report.trials.push_back(std::move(trial));
    }
    run.n_test = golds.size();
    if (!golds.empty()) run.metrics = compute_metrics(preds, golds);
    report.seeds.push_back(run);
  }
  return report;
}

ordered_json trial_log_json(const TrialLog& trial) {
  ordered_json j;
  j["seed"] = trial.seed;
  j["id"] = trial.item_id;
  j["gold"] = trial.gold;
  j["pred"] = trial.pred;
  j["correct"] = trial.correct;
  j["parse_failure"] = trial.parse_failure;
  return j;
}

ordered_json metrics_report_json(const std::vector<MetricsReport>& runs) {
  ordered_json j;
  j["format"] = "mactk-eval/1";
  j["runs"] = ordered_json::array();
  for (const auto& report : runs) {
    ordered_json run;
    run["task"] = to_string(report.task);
    run["mode"] = to_string(report.mode);
    run["k"] = report.k;
    run["backend"] = report.backend_name;
    if (!report.notes.empty()) run["notes"] = report.notes;
    run["partial"] = report.any_partial();

    const TaskSpec task{report.task};
    ordered_json acc, f1;
    acc["per_seed"] = ordered_json::array();
    f1["per_seed"] = ordered_json::array();
    for (const auto& seed_run : report.seeds) {
      acc["per_seed"].push_back(seed_run.metrics.accuracy);
      f1["per_seed"].push_back(pick_f1(seed_run.metrics, report.task));
    }
    acc["mean"] = report.mean_accuracy();
    acc["std"] = report.std_accuracy();
    f1["mean"] = report.mean_f1(report.task);
    f1["std"] = report.std_f1(report.task);
    run["metrics"] = ordered_json{{"accuracy", acc}, {task.f1_name(), f1}};

    run["seeds"] = ordered_json::array();
    for (const auto& seed_run : report.seeds) {
      ordered_json row;
      row["seed"] = seed_run.seed;
      row["accuracy"] = seed_run.metrics.accuracy;
      row["macro_f1"] = seed_run.metrics.macro_f1;
      row["weighted_f1"] = seed_run.metrics.weighted_f1;
      row["n_test"] = seed_run.n_test;
      row["parse_failures"] = seed_run.parse_failures;
      row["partial"] = seed_run.partial;
      run["seeds"].push_back(std::move(row));
    }
    j["runs"].push_back(std::move(run));
  }
  return j;
}

std::string metrics_table(const std::vector<MetricsReport>& runs) {
  char buffer[200];
  std::string out;
  for (const auto& report : runs) {
    if (out.empty()) {
      std::snprintf(buffer, sizeof buffer, "%-18s %-8s %-3s %-22s %-22s\n", "task", "mode",
                    "k", "accuracy", "f1");
      out += buffer;
    }
    const TaskSpec task{report.task};
    char acc_cell[64], f1_cell[64];
    std::snprintf(acc_cell, sizeof acc_cell, "%.4f +/- %.4f", report.mean_accuracy(),
                  report.std_accuracy());
    std::snprintf(f1_cell, sizeof f1_cell, "%.4f +/- %.4f", report.mean_f1(report.task),
                  report.std_f1(report.task));
    std::snprintf(buffer, sizeof buffer, "%-18s %-8s %-3zu %-22s %-22s (%s)%s\n",
                  to_string(report.task), to_string(report.mode), report.k, acc_cell,
                  f1_cell, task.f1_name(), report.any_partial() ? "  [PARTIAL]" : "");
    out += buffer;
  }
  return out;
}

}  // namespace mactk
