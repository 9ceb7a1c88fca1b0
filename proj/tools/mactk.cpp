// mactk: aspect extraction, prompt assembly, Shapley attribution, the
// memorization bench and the evaluation harness behind one executable.
//
// Exit codes: 0 success, 2 input/config error, 3 partial run (backend gave
// out for part of the work; reports carry a partial marker).

#include <CLI11.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mactk/attribution.hpp"
#include "mactk/backend.hpp"
#include "mactk/errors.hpp"
#include "mactk/eval.hpp"
#include "mactk/knowledge_base.hpp"
#include "mactk/memorization.hpp"
#include "mactk/prompt.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace mactk;

namespace {

ordered_json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Load, "cannot open '" + path + "'");
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(ErrorKind::Load, path + ": " + e.what());
  }
  return j;
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Report, "cannot write '" + path.string() + "'");
  out << content;
}

GenerationParams params_from_json(const ordered_json& j) {
  GenerationParams params;
  params.temperature = j.value("temperature", params.temperature);
  params.top_p = j.value("top_p", params.top_p);
  params.repetition_penalty = j.value("repetition_penalty", params.repetition_penalty);
  params.top_k = j.value("top_k", params.top_k);
  params.max_new_tokens = j.value("max_new_tokens", params.max_new_tokens);
  params.validate();
  return params;
}

ordered_json params_to_json(const GenerationParams& params) {
  return ordered_json{{"temperature", params.temperature},
                      {"top_p", params.top_p},
                      {"repetition_penalty", params.repetition_penalty},
                      {"top_k", params.top_k},
                      {"max_new_tokens", params.max_new_tokens}};
}

// Settings shared by every subcommand: a config file plus flag overrides.
struct Common {
  std::string config_path;
  std::string template_path;
  std::string kb_path;
  std::string backend_path;
  std::string output_dir;
  std::string run_name;
  std::string text;
  std::string input_path;
  std::uint64_t seed = 0;
  bool seed_given = false;

  ordered_json file = ordered_json::object();

  void add_flags(CLI::App* cmd, bool with_input) {
    cmd->add_option("--config", config_path, "JSON run-config file");
    cmd->add_option("--template", template_path, "template file (overrides config)");
    cmd->add_option("--kb", kb_path, "knowledge base file (overrides config)");
    cmd->add_option("--backend", backend_path, "backend config file (overrides config)");
    cmd->add_option("--output-dir", output_dir, "directory for run outputs");
    cmd->add_option("--run-name", run_name, "run directory name (default: timestamp)");
    cmd->add_option("--seed", seed, "global seed")->each([this](const std::string&) {
      seed_given = true;
    });
    if (with_input) {
      cmd->add_option("--text", text, "input text");
      cmd->add_option("--input", input_path, "file holding the input text");
    }
  }

  void load() {
    if (!config_path.empty()) file = parse_json_file(config_path);
  }

  std::string resolve(const std::string& flag, const char* key) const {
    if (!flag.empty()) return flag;
    return file.value(key, std::string{});
  }

  std::string template_file() const {
    const std::string path = resolve(template_path, "template");
    if (path.empty()) fail(ErrorKind::Config, "no template file given (--template or config)");
    return path;
  }

  std::string kb_file(bool required) const {
    const std::string path = resolve(kb_path, "kb");
    if (path.empty() && required)
      fail(ErrorKind::Config, "no knowledge base given (--kb or config)");
    return path;
  }

  ordered_json backend_json() const {
    if (!backend_path.empty()) return parse_json_file(backend_path);
    if (file.contains("backend")) return file.at("backend");
    fail(ErrorKind::Config, "no backend configured (--backend or config)");
  }

  GenerationParams params() const {
    return params_from_json(file.value("params", ordered_json::object()));
  }

  std::uint64_t effective_seed() const {
    if (seed_given) return seed;
    return file.value("seed", std::uint64_t{1});
  }

  std::string out_dir() const {
    const std::string dir = resolve(output_dir, "output_dir");
    return dir.empty() ? "runs" : dir;
  }

  std::string read_input() const {
    if (!text.empty()) return text;
    if (!input_path.empty()) {
      std::ifstream in(input_path, std::ios::binary);
      if (!in) fail(ErrorKind::Load, "cannot open input file '" + input_path + "'");
      std::ostringstream buffer;
      buffer << in.rdbuf();
      std::string content = buffer.str();
      while (!content.empty() && (content.back() == '\n' || content.back() == '\r'))
        content.pop_back();
      return content;
    }
    std::ostringstream buffer;
    buffer << std::cin.rdbuf();
    std::string content = buffer.str();
    while (!content.empty() && (content.back() == '\n' || content.back() == '\r'))
      content.pop_back();
    return content;
  }
};

fs::path make_run_dir(const Common& common, const char* command) {
  std::string name = common.run_name;
  if (name.empty()) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", std::gmtime(&t));
    name = std::string(stamp) + "-" + command;
  }
  fs::path dir = fs::path(common.out_dir()) / name;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Report, "cannot create run directory '" + dir.string() + "'");
  return dir;
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------- extract

int cmd_extract(Common& common) {
  common.load();
  const KnowledgeBase kb = load_knowledge_base(common.kb_file(true));
  const AspectBindings bindings = extract_aspects(kb, common.read_input());
  std::cout << bindings.to_json().dump() << "\n";
  return 0;
}

// ----------------------------------------------------------------- render

int cmd_render(Common& common, const std::string& mode_text,
               std::optional<std::size_t> k, const std::string& bindings_path) {
  common.load();
  const PromptMode mode = parse_mode(mode_text);
  const TemplateFile tf = load_template(common.template_file());
  const std::string item = common.read_input();

  AspectBindings bindings;
  if (mode == PromptMode::Mac) {
    if (!bindings_path.empty())
      bindings = AspectBindings::from_json(parse_json_file(bindings_path));
    else
      bindings = extract_aspects(load_knowledge_base(common.kb_file(true)), item);
  }
  const RenderedPrompt prompt =
      render_prompt(tf.tpl, tf.demos_for(mode, k), item, bindings, mode);
  std::cout << prompt.full_text;  // exact bytes, golden-comparable
  return 0;
}

// -------------------------------------------------------------- attribute

int cmd_attribute(Common& common, std::size_t permutations, bool exact,
                  const std::string& scoring_text, std::string target,
                  unsigned workers, std::optional<std::size_t> k,
                  const std::string& bindings_path) {
  common.load();
  const TemplateFile tf = load_template(common.template_file());
  const std::string item = common.read_input();
  auto backend = make_backend(common.backend_json(), "backend config");

  AspectBindings bindings;
  if (!bindings_path.empty())
    bindings = AspectBindings::from_json(parse_json_file(bindings_path));
  else
    bindings = extract_aspects(load_knowledge_base(common.kb_file(true)), item);

  AspectGameConfig game_config;
  game_config.scoring = parse_scoring_mode(scoring_text);
  game_config.params = common.params();
  if (target.empty()) target = common.file.value("target", std::string{});
  if (!target.empty()) game_config.target = target;
  if (common.file.value("on_parse_failure", std::string{"scale_minimum"}) == "abort")
    game_config.on_parse_failure = ParsePolicy::Abort;

  const std::vector<Demonstration> demos = tf.demos_for(PromptMode::Mac, k);
  AspectGame aspect_game =
      build_aspect_game(*backend, tf.tpl, demos, item, bindings, game_config);

  const std::uint64_t seed = common.effective_seed();
  AttributionReport report;
  report.players = aspect_game.players;
  report.scoring = to_string(game_config.scoring);
  report.result = exact ? exact_shapley(*aspect_game.game)
                        : sampled_shapley(*aspect_game.game, permutations, seed, workers);

  const RenderedPrompt vanilla =
      render_prompt(tf.tpl, tf.demos_for(PromptMode::Vanilla, k), item, AspectBindings{},
                    PromptMode::Vanilla);
  report.vanilla_value = score_prompt(*backend, vanilla.full_text, tf.tpl.contract,
                                      game_config);

  const fs::path dir = make_run_dir(common, "attribute");
  ordered_json snapshot;
  snapshot["command"] = "attribute";
  snapshot["template"] = common.template_file();
  snapshot["kb"] = bindings_path.empty() ? common.kb_file(true) : "";
  snapshot["bindings_file"] = bindings_path;
  snapshot["backend"] = common.backend_json();
  snapshot["params"] = params_to_json(game_config.params);
  snapshot["scoring"] = to_string(game_config.scoring);
  snapshot["target"] = target;
  snapshot["exact"] = exact;
  snapshot["permutations"] = permutations;
  snapshot["workers"] = workers;
  snapshot["seed"] = seed;
  snapshot["item"] = item;
  write_text_file(dir / "config.json", dump(snapshot));

  write_text_file(dir / "attribution.json", dump(attribution_report_json(report)));
  const std::string text_report = attribution_report_text(report, item);
  write_text_file(dir / "attribution.txt", text_report);
  std::cout << text_report;
  std::cerr << "wrote " << (dir / "attribution.json").string() << "\n";
  return 0;
}

// --------------------------------------------------------------- memorize

int cmd_memorize(Common& common, const std::string& entities_path,
                 const std::string& condition_text, std::optional<std::size_t> k,
                 const std::string& entity_slot_flag) {
  common.load();
  const TemplateFile tf = load_template(common.template_file());
  auto backend = make_backend(common.backend_json(), "backend config");
  const std::vector<EntityRecord> entities = load_entities(entities_path);
  if (entities.empty()) fail(ErrorKind::InvalidInput, "entities file lists no entities");

  MemorizationConfig config;
  config.params = common.params();
  config.seed = common.effective_seed();
  config.entity_slot = entity_slot_flag.empty()
                           ? common.file.value("entity_slot", std::string{"TSP"})
                           : entity_slot_flag;
  if (condition_text == "with")
    config.conditions = {Condition::WithAspects};
  else if (condition_text == "without")
    config.conditions = {Condition::WithoutAspects};
  else if (condition_text != "both")
    fail(ErrorKind::Config, "condition must be both, with or without");

  const std::vector<Demonstration> demos = tf.demos_for(PromptMode::Mac, k);
  const MemorizationReport report =
      run_memorization(*backend, tf.tpl, demos, entities, config);

  const fs::path dir = make_run_dir(common, "memorize");
  ordered_json snapshot;
  snapshot["command"] = "memorize";
  snapshot["template"] = common.template_file();
  snapshot["entities"] = entities_path;
  snapshot["backend"] = common.backend_json();
  snapshot["params"] = params_to_json(config.params);
  snapshot["condition"] = condition_text;
  snapshot["entity_slot"] = config.entity_slot;
  snapshot["k_shot"] = demos.size();
  snapshot["seed"] = config.seed;
  write_text_file(dir / "config.json", dump(snapshot));

  write_text_file(dir / "memorization.json", dump(memorization_report_json(report)));
  const std::string table = memorization_table(report);
  write_text_file(dir / "memorization.txt", table);
  std::string trials;
  for (const auto& trial : report.trials) trials += memorization_trial_json(trial).dump() + "\n";
  write_text_file(dir / "trials.jsonl", trials);
  std::cout << table;
  std::cerr << "wrote " << (dir / "memorization.json").string() << "\n";

  const bool partial = std::any_of(report.trials.begin(), report.trials.end(),
                                   [](const MemorizationTrial& t) { return t.errored; });
  return partial ? 3 : 0;
}

// --------------------------------------------------------------- evaluate

int cmd_evaluate(Common& common, const std::string& dataset_path,
                 const std::string& task_text, const std::string& mode_text,
                 std::vector<std::size_t> ks, std::vector<std::uint64_t> seeds) {
  common.load();
  const TemplateFile tf = load_template(common.template_file());
  auto backend = make_backend(common.backend_json(), "backend config");
  const TaskSpec task = TaskSpec::make(parse_task_kind(task_text));
  const PromptMode mode = parse_mode(mode_text);

  std::pair<double, double> thresholds{-0.1, 0.1};
  if (common.file.contains("thresholds")) {
    thresholds.first = common.file.at("thresholds").at(0).get<double>();
    thresholds.second = common.file.at("thresholds").at(1).get<double>();
  }
  const std::vector<LabeledItem> dataset = load_dataset(dataset_path, task, thresholds);

  EvalConfig config;
  config.params = common.params();
  config.holdout_fraction = common.file.value("holdout_fraction", 0.1);
  config.stratified = common.file.value("stratified", true);
  KnowledgeBase kb;
  const std::string kb_path = common.kb_file(false);
  if (!kb_path.empty()) {
    kb = load_knowledge_base(kb_path);
    config.kb = &kb;
  }

  if (ks.empty()) ks = {5, 10};
  if (seeds.empty()) seeds = {1, 2, 3, 4, 5};

  std::vector<MetricsReport> runs;
  for (std::size_t k : ks)
    runs.push_back(run_eval(*backend, tf.tpl, task, dataset, mode, k, seeds, config));

  const fs::path dir = make_run_dir(common, "evaluate");
  ordered_json snapshot;
  snapshot["command"] = "evaluate";
  snapshot["template"] = common.template_file();
  snapshot["dataset"] = dataset_path;
  snapshot["task"] = to_string(task.kind);
  snapshot["mode"] = to_string(mode);
  snapshot["backend"] = common.backend_json();
  snapshot["params"] = params_to_json(config.params);
  snapshot["k"] = ks;
  snapshot["seeds"] = seeds;
  snapshot["holdout_fraction"] = config.holdout_fraction;
  snapshot["stratified"] = config.stratified;
  snapshot["thresholds"] = ordered_json::array({thresholds.first, thresholds.second});
  snapshot["kb"] = kb_path;
  write_text_file(dir / "config.json", dump(snapshot));

  write_text_file(dir / "eval.json", dump(metrics_report_json(runs)));
  const std::string table = metrics_table(runs);
  write_text_file(dir / "eval.txt", table);
  std::string trials;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (const auto& trial : runs[i].trials) {
      ordered_json line;
      line["mode"] = to_string(runs[i].mode);
      line["k"] = runs[i].k;
      line.update(trial_log_json(trial));
      trials += line.dump() + "\n";
    }
  }
  write_text_file(dir / "trials.jsonl", trials);
  std::cout << table;
  std::cerr << "wrote " << (dir / "eval.json").string() << "\n";

  const bool partial = std::any_of(runs.begin(), runs.end(),
                                   [](const MetricsReport& r) { return r.any_partial(); });
  return partial ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-aspect cueing toolkit"};
  app.require_subcommand(1);

  Common common;
  int exit_code = 0;

  // extract
  auto* extract = app.add_subcommand("extract", "find aspect values in text");
  common.add_flags(extract, true);
  extract->callback([&] { exit_code = cmd_extract(common); });

  // render
  auto* render = app.add_subcommand("render", "assemble a prompt");
  std::string render_mode = "mac";
  std::optional<std::size_t> render_k;
  std::string render_bindings;
  common.add_flags(render, true);
  render->add_option("--mode", render_mode, "vanilla|cot|mac");
  render->add_option("--k", render_k, "number of demonstrations (default: all)");
  render->add_option("--bindings", render_bindings, "bindings JSON file (skip extraction)");
  render->callback(
      [&] { exit_code = cmd_render(common, render_mode, render_k, render_bindings); });

  // attribute
  auto* attribute = app.add_subcommand("attribute", "per-aspect Shapley attribution");
  std::size_t permutations = 2000;
  bool exact = false;
  std::string scoring = "scalar_output";
  std::string target;
  unsigned workers = 1;
  std::optional<std::size_t> attribute_k;
  std::string attribute_bindings;
  common.add_flags(attribute, true);
  attribute->add_option("--permutations", permutations, "sampled permutations (default 2000)");
  attribute->add_flag("--exact", exact, "exhaustive enumeration (n <= 20)");
  attribute->add_option("--scoring", scoring, "target_logprob|scalar_output");
  attribute->add_option("--target", target, "target continuation for target_logprob");
  attribute->add_option("--workers", workers, "parallel evaluation workers");
  attribute->add_option("--k", attribute_k, "number of demonstrations (default: all)");
  attribute->add_option("--bindings", attribute_bindings,
                        "bindings JSON file (skip extraction)");
  attribute->callback([&] {
    exit_code = cmd_attribute(common, permutations, exact, scoring, target, workers,
                              attribute_k, attribute_bindings);
  });

  // memorize
  auto* memorize = app.add_subcommand("memorize", "entity memorization bench");
  std::string entities_path;
  std::string condition = "both";
  std::optional<std::size_t> memorize_k;
  std::string entity_slot;
  common.add_flags(memorize, false);
  memorize->add_option("--entities", entities_path, "entities JSONL file")->required();
  memorize->add_option("--condition", condition, "both|with|without");
  memorize->add_option("--k", memorize_k, "number of demonstrations (default: all)");
  memorize->add_option("--entity-slot", entity_slot, "schema slot entities bind into");
  memorize->callback([&] {
    exit_code = cmd_memorize(common, entities_path, condition, memorize_k, entity_slot);
  });

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "classification eval harness");
  std::string dataset_path;
  std::string task_text = "relevance_1_4";
  std::string eval_mode = "mac";
  std::vector<std::size_t> ks;
  std::vector<std::uint64_t> eval_seeds;
  common.add_flags(evaluate, false);
  evaluate->add_option("--dataset", dataset_path, "dataset JSONL file")->required();
  evaluate->add_option("--task", task_text, "relevance_1_4|multiple_choice|sentiment_3way");
  evaluate->add_option("--mode", eval_mode, "vanilla|cot|mac");
  evaluate->add_option("--k", ks, "few-shot sizes (default: 5 and 10)");
  evaluate->add_option("--seeds", eval_seeds, "seeds (default: 1..5)")->delimiter(',');
  evaluate->callback([&] {
    exit_code = cmd_evaluate(common, dataset_path, task_text, eval_mode, ks, eval_seeds);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const mactk::Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return exit_code;
}
