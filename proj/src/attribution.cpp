#include "mactk/attribution.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <future>
#include <map>
#include <mutex>
#include <thread>

#include "mactk/errors.hpp"
#include "mactk/rng.hpp"

namespace mactk {

using nlohmann::ordered_json;

struct CoalitionGame::Cache {
  std::mutex mutex;
  std::map<std::uint64_t, std::shared_future<double>> entries;
  std::size_t evaluations = 0;
};

CoalitionGame::CoalitionGame(std::size_t n, ValueFn f)
    : n_(n), f_(std::move(f)), cache_(std::make_unique<Cache>()) {
  if (n_ < 1) fail(ErrorKind::InvalidInput, "a coalition game needs at least one player");
  if (n_ > 63) fail(ErrorKind::Capacity, "subset masks support at most 63 players");
  if (!f_) fail(ErrorKind::InvalidInput, "coalition game has no value function");
}

CoalitionGame::~CoalitionGame() = default;

double CoalitionGame::value(std::uint64_t subset_mask) {
  if (n_ < 64 && (subset_mask >> n_) != 0)
    fail(ErrorKind::InvalidSubset, "subset mask has bits past player " + std::to_string(n_ - 1));

  std::promise<double> promise;
  std::optional<std::shared_future<double>> pending;
  {
    std::lock_guard lock(cache_->mutex);
    auto it = cache_->entries.find(subset_mask);
    if (it != cache_->entries.end()) {
      pending = it->second;
    } else {
      cache_->entries.emplace(subset_mask, promise.get_future().share());
      ++cache_->evaluations;
    }
  }
  if (pending) return pending->get();  // first caller computes; we wait
  try {
    double value = f_(subset_mask);
    promise.set_value(value);
    return value;
  } catch (...) {
    promise.set_exception(std::current_exception());
    throw;
  }
}

std::size_t CoalitionGame::evaluations() const {
  std::lock_guard lock(cache_->mutex);
  return cache_->evaluations;
}

AttributionResult exact_shapley(CoalitionGame& game) {
  const std::size_t n = game.n();
  if (n > 20)
    fail(ErrorKind::Capacity, "exact enumeration over " + std::to_string(n) +
                                  " aspects needs 2^" + std::to_string(n) +
                                  " evaluations; use sampled_shapley");

  // w(s) = |S|!(n−1−|S|)!/n! = 1 / (n · C(n−1, s)); C stays integral and
  // exact in double for n ≤ 20.
  std::vector<double> weight(n);
  double binom = 1.0;
  for (std::size_t s = 0; s < n; ++s) {
    if (s > 0) binom = binom * static_cast<double>(n - s) / static_cast<double>(s);
    weight[s] = 1.0 / (static_cast<double>(n) * binom);
  }

  AttributionResult out;
  out.method = "exact";
  out.aspects.resize(n);
  const std::uint64_t full = (n == 64) ? ~0ull : ((1ull << n) - 1);
  for (std::uint64_t mask = 0; mask <= full; ++mask) {
    const auto size = static_cast<std::size_t>(std::popcount(mask));
    const double without = game.value(mask);
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1ull << i)) continue;
      const double with = game.value(mask | (1ull << i));
      out.aspects[i].estimate += weight[size] * (with - without);
    }
  }
  for (auto& aspect : out.aspects) {
    aspect.stderr_ = 0.0;
    aspect.n_samples = std::size_t{1} << (n - 1);
  }
  out.baseline_value = game.value(0);
  out.full_value = game.value(full);
  out.permutations_used = 0;
  out.seed = 0;
  return out;
}

namespace {

// Independent, well-mixed stream per permutation index: the generator's
// state increment is the splitmix64 golden-ratio constant, so (seed, p)
// pairs land on distinct streams for any worker layout.
Rng permutation_stream(std::uint64_t seed, std::size_t p) {
  return Rng(seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(p + 1));
}

}  // namespace

AttributionResult sampled_shapley(CoalitionGame& game, std::size_t m_permutations,
                                  std::uint64_t seed, unsigned n_workers) {
  if (m_permutations < 1) fail(ErrorKind::InvalidInput, "need at least one permutation");
  if (n_workers < 1) n_workers = 1;
  const std::size_t n = game.n();
  const std::size_t m = m_permutations;

  // marginals[p*n + i] = contribution of player i in permutation p
  std::vector<double> marginals(m * n, 0.0);

  auto run_slice = [&](std::size_t worker) {
    for (std::size_t p = worker; p < m; p += n_workers) {
      Rng rng = permutation_stream(seed, p);
      std::vector<std::size_t> order = random_permutation(n, rng);
      std::uint64_t mask = 0;
      double before = game.value(mask);
      for (std::size_t i : order) {
        mask |= (1ull << i);
        const double after = game.value(mask);
        marginals[p * n + i] = after - before;
        before = after;
      }
    }
  };

  if (n_workers == 1) {
    run_slice(0);
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (unsigned w = 0; w < n_workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          run_slice(w);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
    for (auto& worker : pool) worker.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  AttributionResult out;
  out.method = "sampled";
  out.aspects.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Constant marginals (additive/dummy players) sidestep mean rounding:
    // the estimate is the marginal itself, exactly.
    bool constant = true;
    const double first = marginals[i];
    for (std::size_t p = 1; p < m && constant; ++p)
      constant = marginals[p * n + i] == first;

    AspectAttribution& aspect = out.aspects[i];
    aspect.n_samples = m;
    if (constant) {
      aspect.estimate = first;
      aspect.stderr_ = 0.0;
      continue;
    }
    double sum = 0.0;
    for (std::size_t p = 0; p < m; ++p) sum += marginals[p * n + i];
    const double mean = sum / static_cast<double>(m);
    double ss = 0.0;
    for (std::size_t p = 0; p < m; ++p) {
      const double d = marginals[p * n + i] - mean;
      ss += d * d;
    }
    aspect.estimate = mean;
    aspect.stderr_ = m > 1 ? std::sqrt(ss / static_cast<double>(m - 1)) /
                                 std::sqrt(static_cast<double>(m))
                           : 0.0;
  }
  out.baseline_value = game.value(0);
  out.full_value = game.value(n == 64 ? ~0ull : ((1ull << n) - 1));
  out.permutations_used = m;
  out.seed = seed;
  return out;
}

ScoringMode parse_scoring_mode(std::string_view text) {
  if (text == "target_logprob") return ScoringMode::TargetLogprob;
  if (text == "scalar_output") return ScoringMode::ScalarOutput;
  fail(ErrorKind::Config, "unknown scoring mode '" + std::string(text) +
                              "' (expected target_logprob or scalar_output)");
}

const char* to_string(ScoringMode mode) {
  return mode == ScoringMode::TargetLogprob ? "target_logprob" : "scalar_output";
}

double score_prompt(Backend& backend, const std::string& prompt_text,
                    const OutputContract& contract, const AspectGameConfig& config) {
  if (config.scoring == ScoringMode::TargetLogprob) {
    if (!config.target)
      fail(ErrorKind::Config, "target_logprob scoring needs a target continuation");
    Completion completion = backend.complete(prompt_text, config.params, config.target);
    if (!completion.target_logprob)
      fail(ErrorKind::Capability, "backend returned no target score");
    return *completion.target_logprob;
  }
  if (!contract.is_range())
    fail(ErrorKind::Config, "scalar_output scoring needs an integer output scale");
  Completion completion = backend.complete(prompt_text, config.params);
  try {
    return static_cast<double>(std::get<int>(parse_output(completion.text, contract)));
  } catch (const Error& e) {
    if (config.on_parse_failure == ParsePolicy::Abort ||
        (e.kind() != ErrorKind::ParseFailure && e.kind() != ErrorKind::OutOfRange))
      fail(ErrorKind::GameEvaluation,
           std::string("subset evaluation failed to parse a score: ") + e.what());
    return static_cast<double>(contract.range().lo);
  }
}

AspectGame build_aspect_game(Backend& backend, const PromptTemplate& tpl,
                             const std::vector<Demonstration>& demos,
                             const std::string& item_text, const AspectBindings& bindings,
                             const AspectGameConfig& config) {
  const std::vector<std::size_t> filled = bindings.filled_indices();
  if (filled.empty())
    fail(ErrorKind::InvalidInput, "attribution needs at least one filled aspect slot");
  if (config.scoring == ScoringMode::TargetLogprob) {
    if (!config.target)
      fail(ErrorKind::Config, "target_logprob scoring needs a target continuation");
    if (!backend.supports_target_scoring())
      fail(ErrorKind::Capability,
           "backend cannot score target continuations; use scalar_output scoring");
  }
  config.params.validate();

  AspectGame out;
  for (std::size_t index : filled) {
    const SlotMatches& slot = bindings.slots()[index];
    AspectPlayer player;
    player.slot = slot.slot;
    player.slot_index = index;
    for (std::size_t j = 0; j < slot.matches.size(); ++j) {
      if (j) player.value += ", ";
      player.value += slot.matches[j].value;
      player.spans.push_back(slot.matches[j].span);
    }
    out.players.push_back(std::move(player));
  }

  auto evaluate = [&backend, tpl, demos, item_text, bindings, filled,
                   config](std::uint64_t subset_mask) -> double {
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < filled.size(); ++j)
      if (subset_mask & (1ull << j)) keep.push_back(filled[j]);
    const AspectBindings ablated = ablate_bindings(bindings, keep);
    const RenderedPrompt prompt =
        render_prompt(tpl, demos, item_text, ablated, PromptMode::Mac);
    return score_prompt(backend, prompt.full_text, tpl.contract, config);
  };
  out.game = std::make_unique<CoalitionGame>(filled.size(), std::move(evaluate));
  return out;
}

namespace {

std::string format_estimate(double value) {
  char buffer[64];
  if (value == 0.0) {
    std::snprintf(buffer, sizeof buffer, "%.4f", 0.0);
  } else {
    std::snprintf(buffer, sizeof buffer, "%+.4f", value);
  }
  return buffer;
}

}  // namespace

ordered_json attribution_report_json(const AttributionReport& report) {
  if (report.result.aspects.size() != report.players.size())
    fail(ErrorKind::Report, "result has " + std::to_string(report.result.aspects.size()) +
                                " aspects but " + std::to_string(report.players.size()) +
                                " players are labeled");
  ordered_json j;
  j["format"] = "mactk-attribution/1";
  j["method"] = report.result.method;
  j["scoring"] = report.scoring;
  j["seed"] = report.result.seed;
  j["permutations_used"] = report.result.permutations_used;
  j["baseline_value"] = report.result.baseline_value;
  j["full_value"] = report.result.full_value;
  if (report.vanilla_value) j["vanilla_value"] = *report.vanilla_value;
  j["aspects"] = ordered_json::array();
  for (std::size_t i = 0; i < report.players.size(); ++i) {
    const AspectPlayer& player = report.players[i];
    const AspectAttribution& aspect = report.result.aspects[i];
    ordered_json row;
    row["slot"] = player.slot;
    row["value"] = player.value;
    row["slot_index"] = player.slot_index;
    row["spans"] = ordered_json::array();
    for (const Span& span : player.spans)
      row["spans"].push_back(ordered_json::array({span.begin, span.end}));
    row["estimate"] = aspect.estimate;
    row["stderr"] = aspect.stderr_;
    row["n_samples"] = aspect.n_samples;
    j["aspects"].push_back(std::move(row));
  }
  return j;
}

AttributionReport attribution_report_from_json(const ordered_json& j,
                                               const std::string& origin) {
  if (j.value("format", std::string{}) != "mactk-attribution/1")
    fail(ErrorKind::Load, origin + ": unsupported attribution report format");
  AttributionReport report;
  try {
    report.result.method = j.at("method").get<std::string>();
    report.scoring = j.at("scoring").get<std::string>();
    report.result.seed = j.at("seed").get<std::uint64_t>();
    report.result.permutations_used = j.at("permutations_used").get<std::size_t>();
    report.result.baseline_value = j.at("baseline_value").get<double>();
    report.result.full_value = j.at("full_value").get<double>();
    if (j.contains("vanilla_value")) report.vanilla_value = j.at("vanilla_value").get<double>();
    for (const auto& row : j.at("aspects")) {
      AspectPlayer player;
      player.slot = row.at("slot").get<std::string>();
      player.value = row.at("value").get<std::string>();
      player.slot_index = row.at("slot_index").get<std::size_t>();
      for (const auto& span : row.at("spans"))
        player.spans.push_back({span.at(0).get<std::size_t>(), span.at(1).get<std::size_t>()});
      report.players.push_back(std::move(player));
      AspectAttribution aspect;
      aspect.estimate = row.at("estimate").get<double>();
      aspect.stderr_ = row.at("stderr").get<double>();
      aspect.n_samples = row.at("n_samples").get<std::size_t>();
      report.result.aspects.push_back(aspect);
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrorKind::Load, origin + ": " + e.what());
  }
  return report;
}

std::string attribution_report_text(const AttributionReport& report,
                                    const std::string& item_text, bool ansi) {
  if (report.result.aspects.size() != report.players.size())
    fail(ErrorKind::Report, "result/player count mismatch in attribution report");

  const char* green = ansi ? "\x1b[32m" : "";
  const char* red = ansi ? "\x1b[31m" : "";
  const char* reset = ansi ? "\x1b[0m" : "";

  std::string out = "ATTRIBUTION (" + report.result.method + ", " + report.scoring +
                    ", seed " + std::to_string(report.result.seed);
  if (report.result.method == "sampled")
    out += ", m " + std::to_string(report.result.permutations_used);
  out += ")\n";
  out += "baseline " + format_estimate(report.result.baseline_value) + "   full " +
         format_estimate(report.result.full_value);
  if (report.vanilla_value) out += "   vanilla " + format_estimate(*report.vanilla_value);
  out += "\n\n";

  std::vector<std::size_t> order(report.players.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return report.result.aspects[a].estimate > report.result.aspects[b].estimate;
  });

  double peak = 0.0;
  for (const auto& aspect : report.result.aspects)
    peak = std::max(peak, std::abs(aspect.estimate));

  for (std::size_t i : order) {
    const AspectPlayer& player = report.players[i];
    const AspectAttribution& aspect = report.result.aspects[i];
    const double estimate = aspect.estimate;
    std::size_t bar = 0;
    if (peak > 0 && estimate != 0.0)
      bar = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::lround(10.0 * std::abs(estimate) / peak)));
    const char mark = estimate > 0 ? '+' : estimate < 0 ? '-' : '.';
    out += "  ";
    out += estimate > 0 ? green : estimate < 0 ? red : "";
    out += format_estimate(estimate);
    if (aspect.stderr_ > 0) out += " (se " + format_estimate(aspect.stderr_).substr(1) + ")";
    out += "  ";
    out += player.slot + " = " + player.value + "  [";
    out += bar ? std::string(bar, mark) : std::string(1, mark);
    out += "]";
    out += reset;
    out += "\n";
  }

  // Item text with every aspect span annotated by its contribution.
  struct Mark {
    Span span;
    std::string tag;
  };
  std::vector<Mark> marks;
  for (std::size_t i = 0; i < report.players.size(); ++i) {
    for (const Span& span : report.players[i].spans) {
      if (span.end > item_text.size() || span.length() == 0) continue;
      marks.push_back({span, format_estimate(report.result.aspects[i].estimate)});
    }
  }
  std::sort(marks.begin(), marks.end(),
            [](const Mark& a, const Mark& b) { return a.span.begin < b.span.begin; });
  out += "\nITEM\n";
  std::size_t cursor = 0;
  for (const Mark& mark : marks) {
    if (mark.span.begin < cursor) continue;  // cross-slot overlap: first wins
    out += item_text.substr(cursor, mark.span.begin - cursor);
    out += "[";
    out += item_text.substr(mark.span.begin, mark.span.length());
    out += "|" + mark.tag + "]";
    cursor = mark.span.end;
  }
  out += item_text.substr(cursor);
  out += "\n";
  return out;
}

}  // namespace mactk
