#include <httplib.h>

#include <nlohmann/json.hpp>

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#include "mactk/backend.hpp"
#include "mactk/errors.hpp"

namespace mactk {

using nlohmann::ordered_json;

struct HttpBackend::Impl {
  std::mutex audit_mutex;
  std::mutex slots_mutex;
  std::condition_variable slots_cv;
  int in_flight = 0;
};

HttpBackend::HttpBackend(HttpBackendConfig config)
    : config_(std::move(config)), impl_(std::make_unique<Impl>()) {
  if (config_.base_url.empty()) fail(ErrorKind::Config, "http backend needs a base_url");
  if (config_.scoring != "none" && config_.scoring != "echo")
    fail(ErrorKind::Config, "scoring must be \"none\" or \"echo\", got \"" +
                                config_.scoring + "\"");
  if (config_.max_attempts < 1) fail(ErrorKind::Config, "max_attempts must be >= 1");
  if (config_.max_in_flight < 1) fail(ErrorKind::Config, "max_in_flight must be >= 1");
}

HttpBackend::~HttpBackend() = default;

namespace {

class InFlightGuard {
 public:
  InFlightGuard(HttpBackend::Impl& impl, int limit) : impl_(impl) {
    std::unique_lock lock(impl_.slots_mutex);
    impl_.slots_cv.wait(lock, [&] { return impl_.in_flight < limit; });
    ++impl_.in_flight;
  }
  ~InFlightGuard() {
    {
      std::lock_guard lock(impl_.slots_mutex);
      --impl_.in_flight;
    }
    impl_.slots_cv.notify_one();
  }

 private:
  HttpBackend::Impl& impl_;
};

std::string snippet(const std::string& body) {
  return body.size() <= 200 ? body : body.substr(0, 200) + "...";
}

ordered_json parse_body(const std::string& body, const std::string& route) {
  try {
    return ordered_json::parse(body);
  } catch (const std::exception& e) {
    fail(ErrorKind::BackendUnavailable,
         route + " returned unparseable JSON: " + std::string(e.what()));
  }
}

}  // namespace

namespace {

struct WireResult {
  int status = 0;
  std::string body;
};

}  // namespace

Completion HttpBackend::complete(const std::string& prompt, const GenerationParams& params,
                                 const std::optional<std::string>& target) {
  if (prompt.empty()) fail(ErrorKind::InvalidInput, "prompt is empty");
  params.validate();
  if (target && config_.scoring != "echo")
    fail(ErrorKind::Capability,
         "backend is not configured for target scoring (set scoring: \"echo\")");

  const bool scoring = target.has_value();
  const std::string& route = scoring ? config_.completions_path : config_.chat_path;

  ordered_json body;
  body["model"] = config_.model;
  if (scoring) {
    body["prompt"] = prompt + *target;
    body["echo"] = true;
    body["logprobs"] = 1;
    body["max_tokens"] = 0;
  } else {
    body["messages"] = ordered_json::array({{{"role", "user"}, {"content", prompt}}});
    body["temperature"] = config_.greedy ? 0.0 : params.temperature;
    body["top_p"] = params.top_p;
    body["max_tokens"] = params.max_new_tokens;
    if (!config_.strict_params) {
      body["repetition_penalty"] = params.repetition_penalty;
      body["top_k"] = params.top_k;
    }
  }

  httplib::Headers headers;
  const char* credential =
      config_.credential_env.empty() ? nullptr : std::getenv(config_.credential_env.c_str());
  if (credential && *credential)
    headers.emplace("Authorization", std::string("Bearer ") + credential);

  InFlightGuard guard(*impl_, config_.max_in_flight);
  const std::string payload = body.dump();

  WireResult wire;
  std::string transport_error;
  for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(
          std::chrono::milliseconds(config_.backoff_ms << (attempt - 1)));
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout_s);
    client.set_read_timeout(config_.timeout_s);
    client.set_write_timeout(config_.timeout_s);
    auto res = client.Post(route, headers, payload, "application/json");
    if (!res) {
      transport_error = httplib::to_string(res.error());
      continue;  // connection-level failure: retry
    }
    wire = {res->status, res->body};
    audit(route, payload, wire.status, wire.body);
    if (res->status >= 500) {
      transport_error = "server returned " + std::to_string(res->status);
      continue;  // transient server failure: retry
    }
    if (res->status == 401 || res->status == 403)
      fail(ErrorKind::Credential,
           "endpoint rejected the credential from $" + config_.credential_env + " (" +
               std::to_string(res->status) + "): " + snippet(res->body));
    if (res->status != 200)
      fail(ErrorKind::BackendUnavailable, route + " returned " + std::to_string(res->status) +
                                              ": " + snippet(res->body));
    break;
  }
  if (wire.status == 0 || wire.status >= 500)
    fail(ErrorKind::BackendUnavailable, "no response from " + config_.base_url + route +
                                            " after " + std::to_string(config_.max_attempts) +
                                            " attempts: " + transport_error);

  const ordered_json response = parse_body(wire.body, route);
  Completion out;
  try {
    const auto& choice = response.at("choices").at(0);
    if (scoring) {
      // Echoed scoring: the server returns prompt+target with per-token
      // logprobs; the target's score is the sum over tokens at or past the
      // prompt/target split.
      if (!choice.contains("logprobs") || choice.at("logprobs").is_null())
        fail(ErrorKind::Capability, "endpoint returned no logprobs for echoed scoring");
      const auto& logprobs = choice.at("logprobs");
      const auto& token_logprobs = logprobs.at("token_logprobs");
      const auto& offsets = logprobs.at("text_offset");
      double total = 0.0;
      for (std::size_t i = 0; i < token_logprobs.size() && i < offsets.size(); ++i) {
        if (offsets[i].get<std::size_t>() < prompt.size()) continue;
        if (token_logprobs[i].is_null())
          fail(ErrorKind::Capability, "endpoint cannot score the target's first token");
        total += token_logprobs[i].get<double>();
      }
      out.target_logprob = total;
      out.text = *target;  // the continuation that was scored
    } else {
      out.text = choice.at("message").at("content").get<std::string>();
    }
    if (response.contains("usage")) {
      out.usage.prompt_tokens = response.at("usage").value("prompt_tokens", std::int64_t{0});
      out.usage.completion_tokens =
          response.at("usage").value("completion_tokens", std::int64_t{0});
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrorKind::BackendUnavailable,
         route + " response shape is not OpenAI-compatible: " + std::string(e.what()));
  }
  return out;
}

void HttpBackend::audit(const std::string& route, const std::string& request_body,
                        int status, const std::string& response_body) {
  if (config_.audit_path.empty()) return;
  ordered_json line;
  line["ts"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::system_clock::now().time_since_epoch())
                   .count();
  line["route"] = route;
  line["request"] = request_body;
  line["status"] = status;
  line["response"] = response_body;
  std::lock_guard lock(impl_->audit_mutex);
  std::ofstream out(config_.audit_path, std::ios::app);
  out << line.dump() << '\n';
}

HttpBackendConfig http_config_from_json(const ordered_json& j, const std::string& origin) {
  HttpBackendConfig config;
  try {
    config.base_url = j.at("base_url").get<std::string>();
    config.model = j.value("model", std::string{"default"});
    config.credential_env = j.value("credential_env", config.credential_env);
    config.chat_path = j.value("chat_path", config.chat_path);
    config.completions_path = j.value("completions_path", config.completions_path);
    config.scoring = j.value("scoring", config.scoring);
    config.greedy = j.value("greedy", config.greedy);
    config.strict_params = j.value("strict_params", config.strict_params);
    config.max_attempts = j.value("max_attempts", config.max_attempts);
    config.backoff_ms = j.value("backoff_ms", config.backoff_ms);
    config.timeout_s = j.value("timeout_s", config.timeout_s);
    config.max_in_flight = j.value("max_in_flight", config.max_in_flight);
    config.audit_path = j.value("audit_path", config.audit_path);
  } catch (const std::exception& e) {
    fail(ErrorKind::Config, origin + ": " + e.what());
  }
  return config;
}

}  // namespace mactk
