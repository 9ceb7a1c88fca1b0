#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mactk {

/// Decoding controls, mirrored onto the wire verbatim.
struct GenerationParams {
  double temperature = 0.3;
  double top_p = 0.95;
  double repetition_penalty = 1.2;
  int top_k = 50;
  int max_new_tokens = 400;

  void validate() const;

  friend bool operator==(const GenerationParams&, const GenerationParams&) = default;
};

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct Completion {
  std::string text;
  std::optional<double> target_logprob;
  Usage usage;
};

/// A completion provider. Implementations must be callable from many
/// threads at once.
class Backend {
 public:
  virtual ~Backend() = default;

  /// Generates a continuation of `prompt`. When `target` is given and the
  /// backend can score continuations, the completion carries the total
  /// log-probability the model assigns to `target` after `prompt`;
  /// backends without that facility raise a capability error instead.
  virtual Completion complete(const std::string& prompt, const GenerationParams& params,
                              const std::optional<std::string>& target = {}) = 0;

  virtual bool supports_target_scoring() const = 0;
  virtual const char* name() const = 0;
};

/// Rule-driven deterministic backend for tests and oracles. Rules are
/// checked in order against the prompt text; the first hit decides the
/// completion. Target scoring, when configured, is additive over the
/// prompt's aspects line: base + Σ weight[k] over keys that name a filled
/// slot or appear among the slot values, plus optional seeded noise.
struct ScriptedRule {
  enum class When { Contains, InputContains, AspectsValue, Always };
  enum class Action { Completion, EchoAspects, Fail };

  When when = When::Always;
  std::string needle;
  Action action = Action::Completion;
  std::string completion;  // Fail: the error message
};

struct ScriptedConfig {
  std::vector<ScriptedRule> rules;
  std::string default_completion;
  std::string input_marker = "ARTICLE";
  std::optional<double> scoring_base;  // enables target scoring
  std::vector<std::pair<std::string, double>> scoring_weights;
  double noise_amplitude = 0.0;
  std::uint64_t seed = 0;
};

class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(ScriptedConfig config);

  Completion complete(const std::string& prompt, const GenerationParams& params,
                      const std::optional<std::string>& target = {}) override;
  bool supports_target_scoring() const override { return config_.scoring_base.has_value(); }
  const char* name() const override { return "scripted"; }

  const ScriptedConfig& config() const { return config_; }

 private:
  ScriptedConfig config_;
};

ScriptedConfig scripted_config_from_json(const nlohmann::ordered_json& j,
                                         const std::string& origin);
ScriptedConfig load_scripted_config(const std::string& path);

/// Client for an OpenAI-compatible endpoint. Completions go through the
/// chat route; target scoring uses the legacy completions route's
/// echo+logprobs facility when `scoring` is "echo".
struct HttpBackendConfig {
  std::string base_url;       // e.g. http://localhost:8000
  std::string model;          // server-side model identifier
  std::string credential_env = "MACTK_API_KEY";
  std::string chat_path = "/v1/chat/completions";
  std::string completions_path = "/v1/completions";
  std::string scoring = "none";  // "none" | "echo"
  bool greedy = true;            // send temperature 0 for reproducibility
  bool strict_params = false;    // drop non-standard fields for strict servers
  int max_attempts = 3;
  int backoff_ms = 500;
  int timeout_s = 120;
  int max_in_flight = 4;
  std::string audit_path;  // JSONL request/response log; empty disables
};

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  ~HttpBackend() override;

  Completion complete(const std::string& prompt, const GenerationParams& params,
                      const std::optional<std::string>& target = {}) override;
  bool supports_target_scoring() const override { return config_.scoring == "echo"; }
  const char* name() const override { return "http"; }

  struct Impl;

 private:
  void audit(const std::string& route, const std::string& request_body, int status,
             const std::string& response_body);

  HttpBackendConfig config_;
  std::unique_ptr<Impl> impl_;
};

HttpBackendConfig http_config_from_json(const nlohmann::ordered_json& j,
                                        const std::string& origin);

/// Dispatches on {"backend": "scripted"|"http", ...} config objects.
std::unique_ptr<Backend> make_backend(const nlohmann::ordered_json& j,
                                      const std::string& origin);
std::unique_ptr<Backend> load_backend(const std::string& path);

/// The content of the prompt's last aspects line ("ASPECTS: ..."), if any.
std::optional<std::string> last_aspects_line(const std::string& prompt);

/// The input item text: everything after the last "<marker>: " line start,
/// with a trailing aspects line stripped.
std::optional<std::string> last_input_block(const std::string& prompt,
                                            const std::string& marker);

}  // namespace mactk
