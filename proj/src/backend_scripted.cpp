#include <nlohmann/json.hpp>

#include <fstream>

#include "mactk/backend.hpp"
#include "mactk/errors.hpp"
#include "mactk/rng.hpp"
#include "mactk/text.hpp"

namespace mactk {

using nlohmann::ordered_json;

void GenerationParams::validate() const {
  if (temperature < 0) fail(ErrorKind::Config, "temperature must be >= 0");
  if (top_p <= 0 || top_p > 1) fail(ErrorKind::Config, "top_p must lie in (0, 1]");
  if (repetition_penalty <= 0) fail(ErrorKind::Config, "repetition_penalty must be > 0");
  if (top_k < 0) fail(ErrorKind::Config, "top_k must be >= 0");
  if (max_new_tokens <= 0) fail(ErrorKind::Config, "max_new_tokens must be > 0");
}

namespace {

// Start offset of the content following the last "<label>: " that begins a
// line, or npos.
std::size_t last_labeled_line(const std::string& prompt, const std::string& label) {
  const std::string tag = label + ": ";
  std::size_t best = std::string::npos;
  std::size_t at = prompt.find(tag);
  while (at != std::string::npos) {
    if (at == 0 || prompt[at - 1] == '\n') best = at + tag.size();
    at = prompt.find(tag, at + 1);
  }
  return best;
}

}  // namespace

std::optional<std::string> last_aspects_line(const std::string& prompt) {
  std::size_t begin = last_labeled_line(prompt, "ASPECTS");
  if (begin == std::string::npos) return std::nullopt;
  std::size_t end = prompt.find('\n', begin);
  if (end == std::string::npos) end = prompt.size();
  return prompt.substr(begin, end - begin);
}

std::optional<std::string> last_input_block(const std::string& prompt,
                                            const std::string& marker) {
  std::size_t begin = last_labeled_line(prompt, marker);
  if (begin == std::string::npos) return std::nullopt;
  std::string block = prompt.substr(begin);
  // The input may span lines; only a trailing aspects line is not part of it.
  const std::string aspects_tag = "\nASPECTS: ";
  if (std::size_t at = block.rfind(aspects_tag); at != std::string::npos &&
                                                 block.find('\n', at + 1) == std::string::npos)
    block.resize(at);
  return block;
}

namespace {

struct AspectsLine {
  std::vector<std::pair<std::string, std::vector<std::string>>> slots;
};

// Parses "Competitor (), TSP (Mascom), Product (5G Core)"; slot values must
// not themselves contain "), " for the split to hold, which the line
// builder's fixtures respect.
AspectsLine parse_aspects_line(const std::string& line) {
  AspectsLine out;
  std::size_t pos = 0;
  while (pos < line.size()) {
    std::size_t open = line.find(" (", pos);
    if (open == std::string::npos) break;
    std::size_t close = line.find(')', open);
    while (close != std::string::npos && close + 1 < line.size() &&
           line.compare(close, 3, "), ") != 0)
      close = line.find(')', close + 1);
    if (close == std::string::npos) break;
    std::string slot = line.substr(pos, open - pos);
    std::string inner = line.substr(open + 2, close - open - 2);
    std::vector<std::string> values;
    std::size_t from = 0;
    while (!inner.empty()) {
      std::size_t comma = inner.find(", ", from);
      if (comma == std::string::npos) {
        values.push_back(inner.substr(from));
        break;
      }
      values.push_back(inner.substr(from, comma - from));
      from = comma + 2;
    }
    out.slots.emplace_back(std::move(slot), std::move(values));
    pos = close + 1;
    if (line.compare(pos, 2, ", ") == 0) pos += 2;
  }
  return out;
}

bool weight_key_applies(const std::string& key, const AspectsLine& aspects) {
  const std::string folded = fold_case(key);
  for (const auto& [slot, values] : aspects.slots) {
    if (slot == key && !values.empty()) return true;
    for (const auto& value : values)
      if (fold_case(value) == folded) return true;
  }
  return false;
}

bool contains_text(const std::string& haystack, const std::string& needle) {
  return fold_case(haystack).find(fold_case(needle)) != std::string::npos;
}

}  // namespace

ScriptedBackend::ScriptedBackend(ScriptedConfig config) : config_(std::move(config)) {
  for (const auto& rule : config_.rules) {
    if (rule.when != ScriptedRule::When::Always && rule.needle.empty())
      fail(ErrorKind::Config, "scripted rule predicate needs a non-empty needle");
    if (rule.action == ScriptedRule::Action::Fail && rule.completion.empty())
      fail(ErrorKind::Config, "scripted fail rule needs a message");
  }
}

Completion ScriptedBackend::complete(const std::string& prompt,
                                     const GenerationParams& params,
                                     const std::optional<std::string>& target) {
  if (prompt.empty()) fail(ErrorKind::InvalidInput, "prompt is empty");
  params.validate();

  const std::optional<std::string> aspects = last_aspects_line(prompt);
  const std::optional<std::string> input = last_input_block(prompt, config_.input_marker);
  const AspectsLine parsed = parse_aspects_line(aspects.value_or(""));

  Completion out;
  out.text = config_.default_completion;
  for (const auto& rule : config_.rules) {
    bool hit = false;
    switch (rule.when) {
      case ScriptedRule::When::Contains:
        hit = contains_text(prompt, rule.needle);
        break;
      case ScriptedRule::When::InputContains:
        hit = input && contains_text(*input, rule.needle);
        break;
      case ScriptedRule::When::AspectsValue:
        hit = weight_key_applies(rule.needle, parsed);
        break;
      case ScriptedRule::When::Always:
        hit = true;
        break;
    }
    if (!hit) continue;
    switch (rule.action) {
      case ScriptedRule::Action::Completion:
        out.text = rule.completion;
        break;
      case ScriptedRule::Action::EchoAspects:
        out.text = aspects.value_or("");
        break;
      case ScriptedRule::Action::Fail:
        fail(ErrorKind::BackendUnavailable, rule.completion);
    }
    break;
  }

  if (target) {
    if (!config_.scoring_base)
      fail(ErrorKind::Capability, "scripted backend has no target scoring configured");
    double score = *config_.scoring_base;
    for (const auto& [key, weight] : config_.scoring_weights)
      if (weight_key_applies(key, parsed)) score += weight;
    if (config_.noise_amplitude != 0.0) {
      Rng rng(config_.seed ^ fnv1a(prompt));
      score += rng.uniform_signed() * config_.noise_amplitude;
    }
    out.target_logprob = score;
  }

  out.usage.prompt_tokens = static_cast<std::int64_t>(prompt.size() / 4 + 1);
  out.usage.completion_tokens = static_cast<std::int64_t>(out.text.size() / 4 + 1);
  return out;
}

ScriptedConfig scripted_config_from_json(const ordered_json& j, const std::string& origin) {
  ScriptedConfig config;
  try {
    config.default_completion = j.value("default_completion", std::string{});
    config.input_marker = j.value("input_marker", std::string{"ARTICLE"});
    config.noise_amplitude = j.value("noise_amplitude", 0.0);
    config.seed = j.value("seed", std::uint64_t{0});
    for (const auto& rule_json : j.value("rules", ordered_json::array())) {
      ScriptedRule rule;
      if (rule_json.contains("when_contains")) {
        rule.when = ScriptedRule::When::Contains;
        rule.needle = rule_json.at("when_contains").get<std::string>();
      } else if (rule_json.contains("when_input_contains")) {
        rule.when = ScriptedRule::When::InputContains;
        rule.needle = rule_json.at("when_input_contains").get<std::string>();
      } else if (rule_json.contains("when_aspects_value")) {
        rule.when = ScriptedRule::When::AspectsValue;
        rule.needle = rule_json.at("when_aspects_value").get<std::string>();
      }
      if (rule_json.contains("completion")) {
        rule.action = ScriptedRule::Action::Completion;
        rule.completion = rule_json.at("completion").get<std::string>();
      } else if (rule_json.value("echo_aspects", false)) {
        rule.action = ScriptedRule::Action::EchoAspects;
      } else if (rule_json.contains("fail")) {
        rule.action = ScriptedRule::Action::Fail;
        rule.completion = rule_json.at("fail").get<std::string>();
      } else {
        fail(ErrorKind::Config,
             origin + ": scripted rule needs completion, echo_aspects or fail");
      }
      config.rules.push_back(std::move(rule));
    }
    if (j.contains("target_scoring")) {
      const auto& scoring = j.at("target_scoring");
      config.scoring_base = scoring.value("base", 0.0);
      // Bind before iterating: .items() on a temporary would dangle.
      const ordered_json weights = scoring.value("weights", ordered_json::object());
      for (const auto& [key, weight] : weights.items())
        config.scoring_weights.emplace_back(key, weight.get<double>());
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrorKind::Config, origin + ": " + e.what());
  }
  return config;
}

ScriptedConfig load_scripted_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Load, "cannot open backend config '" + path + "'");
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(ErrorKind::Load, path + ": " + e.what());
  }
  return scripted_config_from_json(j, path);
}

std::unique_ptr<Backend> make_backend(const ordered_json& j, const std::string& origin) {
  const std::string kind = j.value("backend", std::string{"scripted"});
  if (kind == "scripted")
    return std::make_unique<ScriptedBackend>(scripted_config_from_json(j, origin));
  if (kind == "http") return std::make_unique<HttpBackend>(http_config_from_json(j, origin));
  fail(ErrorKind::Config, origin + ": unknown backend kind '" + kind + "'");
}

std::unique_ptr<Backend> load_backend(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Load, "cannot open backend config '" + path + "'");
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(ErrorKind::Load, path + ": " + e.what());
  }
  return make_backend(j, path);
}

}  // namespace mactk
