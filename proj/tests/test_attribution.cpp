#include <doctest.h>

#include <nlohmann/json.hpp>

#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <thread>
#include <vector>

#include "mactk/attribution.hpp"
#include "mactk/errors.hpp"
#include "mactk/knowledge_base.hpp"
#include "mactk/rng.hpp"

using namespace mactk;

namespace {

std::string data_path(const std::string& name) {
  return std::string(MACTK_DATA_DIR) + "/" + name;
}

// Pure, deterministic pseudo-random game value for a subset mask.
double noise_value(std::uint64_t mask, std::uint64_t salt) {
  Rng rng(salt ^ (mask * 0x9E3779B97F4A7C15ull));
  return rng.uniform() * 10.0 - 5.0;
}

double sum_of(const AttributionResult& result) {
  double total = 0.0;
  for (const auto& aspect : result.aspects) total += aspect.estimate;
  return total;
}

}  // namespace

TEST_CASE("exact attribution reproduces the worked two-player case") {
  // f(∅)=0, f({A})=1, f({B})=2, f({A,B})=4: A gets ½·1 + ½·2 = 1.5 and
  // B gets ½·2 + ½·3 = 2.5.
  CoalitionGame game(2, [](std::uint64_t mask) {
    switch (mask) {
      case 0b00: return 0.0;
      case 0b01: return 1.0;
      case 0b10: return 2.0;
      default: return 4.0;
    }
  });
  const AttributionResult result = exact_shapley(game);
  REQUIRE(result.aspects.size() == 2);
  CHECK(result.aspects[0].estimate == 1.5);
  CHECK(result.aspects[1].estimate == 2.5);
  CHECK(result.aspects[0].stderr_ == 0.0);
  CHECK(result.aspects[0].n_samples == 2);  // 2^(n-1)
  CHECK(result.baseline_value == 0.0);
  CHECK(result.full_value == 4.0);
  CHECK(result.method == "exact");
  CHECK(result.permutations_used == 0);
  CHECK(game.evaluations() == 4);
}

TEST_CASE("exact attribution splits a unanimity game between its carriers") {
  CoalitionGame game(3, [](std::uint64_t mask) {
    return (mask & 0b011) == 0b011 ? 1.0 : 0.0;
  });
  const AttributionResult result = exact_shapley(game);
  CHECK(result.aspects[0].estimate == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(result.aspects[1].estimate == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(result.aspects[2].estimate == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("exact attribution recovers the weights of an additive game") {
  const std::vector<double> weights = {0.25, -1.5, 3.0, 0.0, 2.125};
  CoalitionGame game(weights.size(), [&](std::uint64_t mask) {
    double v = 7.0;
    for (std::size_t i = 0; i < weights.size(); ++i)
      if (mask & (1ull << i)) v += weights[i];
    return v;
  });
  const AttributionResult result = exact_shapley(game);
  for (std::size_t i = 0; i < weights.size(); ++i)
    CHECK(result.aspects[i].estimate == doctest::Approx(weights[i]).epsilon(1e-12));
}

TEST_CASE("exact attribution satisfies efficiency, dummies and symmetry") {
  // Six players; player 5 is a dummy adding exactly 0.7, players 3 and 4
  // are interchangeable by construction.
  auto value = [](std::uint64_t mask) {
    const std::uint64_t rest = mask & 0b000111;
    const int pair = std::popcount(mask & 0b011000);
    double v = noise_value(rest, 77) * (1.0 + 0.2 * pair) + (pair == 2 ? 0.1 : 0.0);
    if (mask & 0b100000) v += 0.7;
    return v;
  };
  CoalitionGame game(6, value);
  const AttributionResult result = exact_shapley(game);

  CHECK(std::abs(sum_of(result) - (result.full_value - result.baseline_value)) <= 1e-9);
  CHECK(std::abs(result.aspects[5].estimate - 0.7) <= 1e-12);
  CHECK(std::abs(result.aspects[3].estimate - result.aspects[4].estimate) <= 1e-12);
}

TEST_CASE("sampled attribution satisfies efficiency by construction") {
  CoalitionGame game(7, [](std::uint64_t mask) { return noise_value(mask, 13); });
  const AttributionResult result = sampled_shapley(game, 40, 5);
  CHECK(std::abs(sum_of(result) - (result.full_value - result.baseline_value)) <= 1e-9);
  CHECK(result.method == "sampled");
  CHECK(result.seed == 5);
  CHECK(result.permutations_used == 40);
  for (const auto& aspect : result.aspects) CHECK(aspect.n_samples == 40);
}

TEST_CASE("sampled attribution is exact with zero stderr on additive games") {
  const std::vector<double> weights = {1.2, 5.1096, -0.5};
  CoalitionGame game(weights.size(), [&](std::uint64_t mask) {
    double v = -14.25;
    for (std::size_t i = 0; i < weights.size(); ++i)
      if (mask & (1ull << i)) v += weights[i];
    return v;
  });
  const AttributionResult result = sampled_shapley(game, 16, 3);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    // Marginals are constant up to floating-point rounding of the sums.
    CHECK(std::abs(result.aspects[i].estimate - weights[i]) <= 1e-12);
    CHECK(result.aspects[i].stderr_ <= 1e-12);
  }
}

TEST_CASE("sampled estimates converge to the exact values") {
  CoalitionGame game(6, [](std::uint64_t mask) { return noise_value(mask, 901); });
  const AttributionResult exact = exact_shapley(game);
  const AttributionResult sampled = sampled_shapley(game, 4000, 11);
  for (std::size_t i = 0; i < 6; ++i) {
    const double err = std::abs(sampled.aspects[i].estimate - exact.aspects[i].estimate);
    CAPTURE(i);
    CHECK(err <= 4.0 * sampled.aspects[i].stderr_ + 1e-12);
    CHECK(sampled.aspects[i].stderr_ > 0.0);
  }
}

TEST_CASE("sampled stderr follows the two-point sample distribution") {
  // f(∅)=0, f({0})=1, f({1})=0, f({0,1})=3. Player 0's marginal is 1 when
  // drawn first and 3 otherwise; player 1's is 2 and 0 respectively.
  CoalitionGame game(2, [](std::uint64_t mask) {
    switch (mask) {
      case 0b00: return 0.0;
      case 0b01: return 1.0;
      case 0b10: return 0.0;
      default: return 3.0;
    }
  });
  const std::size_t m = 64;
  const AttributionResult result = sampled_shapley(game, m, 21);

  const double mean0 = result.aspects[0].estimate;
  const double k_real = static_cast<double>(m) * (3.0 - mean0) / 2.0;
  const double k = std::round(k_real);
  CHECK(std::abs(k_real - k) <= 1e-9);  // mean is a lattice point
  CHECK(k >= 0);
  CHECK(k <= static_cast<double>(m));

  // Efficiency ties the two estimates together.
  CHECK(result.aspects[0].estimate + result.aspects[1].estimate ==
        doctest::Approx(3.0).epsilon(1e-12));

  const double md = static_cast<double>(m);
  const double ss = k * (1.0 - mean0) * (1.0 - mean0) +
                    (md - k) * (3.0 - mean0) * (3.0 - mean0);
  const double expected = std::sqrt(ss / (md - 1.0)) / std::sqrt(md);
  CHECK(result.aspects[0].stderr_ == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("a single permutation yields zero stderr") {
  CoalitionGame game(3, [](std::uint64_t mask) { return noise_value(mask, 4); });
  const AttributionResult result = sampled_shapley(game, 1, 9);
  for (const auto& aspect : result.aspects) {
    CHECK(aspect.stderr_ == 0.0);
    CHECK(aspect.n_samples == 1);
  }
}

TEST_CASE("worker count never changes sampled results") {
  auto run = [](unsigned workers) {
    CoalitionGame game(8, [](std::uint64_t mask) { return noise_value(mask, 5150); });
    return sampled_shapley(game, 200, 42, workers);
  };
  const AttributionResult one = run(1);
  for (unsigned workers : {2u, 4u, 7u}) {
    const AttributionResult many = run(workers);
    CAPTURE(workers);
    REQUIRE(many.aspects.size() == one.aspects.size());
    for (std::size_t i = 0; i < one.aspects.size(); ++i) {
      CHECK(many.aspects[i].estimate == one.aspects[i].estimate);  // bit-identical
      CHECK(many.aspects[i].stderr_ == one.aspects[i].stderr_);
    }
  }
}

TEST_CASE("the coalition cache evaluates each subset once, even under contention") {
  std::atomic<int> calls{0};
  CoalitionGame game(4, [&](std::uint64_t mask) {
    ++calls;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    return static_cast<double>(mask);
  });

  std::vector<std::thread> pool;
  for (int t = 0; t < 8; ++t)
    pool.emplace_back([&] { CHECK(game.value(0b0101) == 5.0); });
  for (auto& t : pool) t.join();
  CHECK(calls.load() == 1);
  CHECK(game.evaluations() == 1);

  game.value(0b0101);
  CHECK(calls.load() == 1);  // still cached

  exact_shapley(game);
  CHECK(game.evaluations() == 16);
  exact_shapley(game);
  CHECK(game.evaluations() == 16);  // the second pass is free
}

TEST_CASE("sampling stays within the query budget") {
  const std::size_t n = 10, m = 50;
  CoalitionGame game(n, [](std::uint64_t mask) { return noise_value(mask, 31); });
  sampled_shapley(game, m, 2, 3);
  CHECK(game.evaluations() <= std::min<std::size_t>(std::size_t{1} << n, m * (n + 1)));
  CHECK(game.evaluations() >= n + 1);  // at least one full chain
}

TEST_CASE("attribution input validation") {
  try {
    CoalitionGame game(21, [](std::uint64_t) { return 0.0; });
    exact_shapley(game);
    FAIL("expected a capacity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Capacity);
    CHECK(std::string(e.what()).find("sampled") != std::string::npos);
  }
  CHECK_THROWS_AS(CoalitionGame(0, [](std::uint64_t) { return 0.0; }), Error);
  CHECK_THROWS_AS(CoalitionGame(2, CoalitionGame::ValueFn{}), Error);

  CoalitionGame game(2, [](std::uint64_t) { return 0.0; });
  try {
    game.value(0b100);
    FAIL("expected an invalid-subset error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidSubset);
  }
  try {
    sampled_shapley(game, 0, 1);
    FAIL("expected an invalid-input error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidInput);
  }
}

// ---- Aspect games over prompts ---------------------------------------------

namespace {

struct GameSetup {
  TemplateFile file = load_template(data_path("template.json"));
  KnowledgeBase kb = load_knowledge_base(data_path("kb.json"));
};

}  // namespace

TEST_CASE("aspect game over an additive scorer recovers the configured weights") {
  GameSetup s;
  auto backend = load_backend(data_path("backend_additive.json"));
  const std::string item = "Telecom giant accelerates the 5G Core rollout nationwide";
  const AspectBindings bindings = extract_aspects(s.kb, item);

  AspectGameConfig config;
  config.scoring = ScoringMode::TargetLogprob;
  config.target = "{\"score\": 4}";

  AspectGame game = build_aspect_game(*backend, s.file.tpl, s.file.demos_for(PromptMode::Mac),
                                      item, bindings, config);
  REQUIRE(game.players.size() == 2);
  CHECK(game.players[0].slot == "Competitor");
  CHECK(game.players[0].value == "Telecom giant");
  CHECK(game.players[0].slot_index == 0);
  REQUIRE(game.players[0].spans.size() == 1);
  CHECK(game.players[0].spans[0] == Span{0, 13});
  CHECK(game.players[1].slot == "Product");
  CHECK(game.players[1].value == "5G Core");
  CHECK(game.players[1].spans[0] == Span{30, 37});
  CHECK(game.game->evaluations() == 0);  // nothing queried yet

  const AttributionResult result = exact_shapley(*game.game);
  CHECK(std::abs(result.aspects[0].estimate - 1.2) <= 1e-12);
  CHECK(std::abs(result.aspects[1].estimate - 5.1096) <= 1e-12);
  CHECK(result.baseline_value == -14.25);  // base alone; exactly representable
  CHECK(result.full_value == -14.25 + 1.2 + 5.1096);  // same summation order
  CHECK(game.game->evaluations() == 4);
}

TEST_CASE("aspect game with scalar scoring reads the parsed output") {
  GameSetup s;
  auto backend = load_backend(data_path("backend_separation.json"));
  const std::string item = "Mascom announces new price increases in 2024";
  const AspectBindings bindings = extract_aspects(s.kb, item);

  AspectGameConfig config;  // scalar_output by default
  AspectGame game =
      build_aspect_game(*backend, s.file.tpl, {}, item, bindings, config);
  REQUIRE(game.players.size() == 1);
  CHECK(game.players[0].slot == "TSP");

  const AttributionResult result = exact_shapley(*game.game);
  CHECK(result.baseline_value == 1.0);  // empty aspects fall back to {"score": 1}
  CHECK(result.full_value == 4.0);
  CHECK(result.aspects[0].estimate == 3.0);
}

TEST_CASE("parse failures during a scalar game follow the configured policy") {
  GameSetup s;
  ScriptedConfig mute;
  mute.default_completion = "no fragment in sight";
  ScriptedBackend backend{mute};
  const std::string item = "Mascom announces new price increases in 2024";
  const AspectBindings bindings = extract_aspects(s.kb, item);

  AspectGameConfig config;
  config.on_parse_failure = ParsePolicy::ScaleMinimum;
  AspectGame game = build_aspect_game(backend, s.file.tpl, {}, item, bindings, config);
  const AttributionResult result = exact_shapley(*game.game);
  CHECK(result.baseline_value == 1.0);  // the scale minimum
  CHECK(result.full_value == 1.0);
  CHECK(result.aspects[0].estimate == 0.0);

  config.on_parse_failure = ParsePolicy::Abort;
  AspectGame strict = build_aspect_game(backend, s.file.tpl, {}, item, bindings, config);
  try {
    exact_shapley(*strict.game);
    FAIL("expected a game-evaluation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::GameEvaluation);
  }
}

TEST_CASE("aspect game construction validates its inputs") {
  GameSetup s;
  auto scored = load_backend(data_path("backend_additive.json"));
  auto plain = load_backend(data_path("backend_echo.json"));

  AspectGameConfig config;
  try {
    build_aspect_game(*scored, s.file.tpl, {},
                      "no aspects at all here",
                      extract_aspects(s.kb, "no aspects at all here"), config);
    FAIL("expected an invalid-input error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidInput);
  }

  const std::string item = "Mascom announces new price increases in 2024";
  const AspectBindings bindings = extract_aspects(s.kb, item);
  config.scoring = ScoringMode::TargetLogprob;
  try {
    build_aspect_game(*scored, s.file.tpl, {}, item, bindings, config);  // no target
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
  config.target = "t";
  try {
    build_aspect_game(*plain, s.file.tpl, {}, item, bindings, config);
    FAIL("expected a capability error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Capability);
  }

  OutputContract categorical;
  categorical.output_key = "sentiment";
  categorical.scale = std::vector<std::string>{"negative", "neutral", "positive"};
  AspectGameConfig scalar;
  try {
    score_prompt(*plain, "p", categorical, scalar);
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
}

TEST_CASE("scoring modes parse and print symmetrically") {
  CHECK(parse_scoring_mode("target_logprob") == ScoringMode::TargetLogprob);
  CHECK(parse_scoring_mode("scalar_output") == ScoringMode::ScalarOutput);
  CHECK(std::string(to_string(ScoringMode::TargetLogprob)) == "target_logprob");
  CHECK_THROWS_AS(parse_scoring_mode("vibes"), Error);
}

// ---- Reports ----------------------------------------------------------------

namespace {

AttributionReport make_report() {
  GameSetup s;
  auto backend = load_backend(data_path("backend_additive.json"));
  const std::string item = "Telecom giant accelerates the 5G Core rollout nationwide";
  const AspectBindings bindings = extract_aspects(s.kb, item);
  AspectGameConfig config;
  config.scoring = ScoringMode::TargetLogprob;
  config.target = "{\"score\": 4}";
  AspectGame game = build_aspect_game(*backend, s.file.tpl, {}, item, bindings, config);
  AttributionReport report;
  report.result = exact_shapley(*game.game);
  report.players = game.players;
  report.scoring = to_string(config.scoring);
  report.vanilla_value = -14.25;
  return report;
}

}  // namespace

TEST_CASE("attribution reports round-trip through JSON exactly") {
  const AttributionReport report = make_report();
  const nlohmann::ordered_json j = attribution_report_json(report);
  CHECK(j.at("format") == "mactk-attribution/1");

  const auto parsed = nlohmann::ordered_json::parse(j.dump());
  const AttributionReport back = attribution_report_from_json(parsed, "roundtrip");

  CHECK(back.result.method == report.result.method);
  CHECK(back.scoring == report.scoring);
  CHECK(back.result.seed == report.result.seed);
  CHECK(back.result.permutations_used == report.result.permutations_used);
  CHECK(back.result.baseline_value == report.result.baseline_value);
  CHECK(back.result.full_value == report.result.full_value);
  REQUIRE(back.vanilla_value.has_value());
  CHECK(*back.vanilla_value == *report.vanilla_value);
  REQUIRE(back.players.size() == report.players.size());
  for (std::size_t i = 0; i < report.players.size(); ++i) {
    CHECK(back.players[i].slot == report.players[i].slot);
    CHECK(back.players[i].value == report.players[i].value);
    CHECK(back.players[i].slot_index == report.players[i].slot_index);
    CHECK(back.players[i].spans == report.players[i].spans);
    CHECK(back.result.aspects[i].estimate == report.result.aspects[i].estimate);
    CHECK(back.result.aspects[i].stderr_ == report.result.aspects[i].stderr_);
    CHECK(back.result.aspects[i].n_samples == report.result.aspects[i].n_samples);
  }

  AttributionReport lopsided = report;
  lopsided.players.pop_back();
  try {
    attribution_report_json(lopsided);
    FAIL("expected a report error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Report);
  }
  try {
    attribution_report_from_json(nlohmann::ordered_json{{"format", "other/9"}}, "x");
    FAIL("expected a load error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Load);
  }
}

TEST_CASE("the text report ranks aspects and annotates the item") {
  const AttributionReport report = make_report();
  const std::string item = "Telecom giant accelerates the 5G Core rollout nationwide";
  const std::string text = attribution_report_text(report, item);

  CHECK(text.find("ATTRIBUTION (exact, target_logprob, seed 0)") != std::string::npos);
  CHECK(text.find("baseline -14.2500   full -7.9404   vanilla -14.2500") !=
        std::string::npos);
  CHECK(text.find("+5.1096  Product = 5G Core  [++++++++++]") != std::string::npos);
  CHECK(text.find("+1.2000  Competitor = Telecom giant  [++]") != std::string::npos);
  // The larger contribution is listed first.
  CHECK(text.find("+5.1096") < text.find("+1.2000"));
  CHECK(text.find("[Telecom giant|+1.2000] accelerates the [5G Core|+5.1096] "
                  "rollout nationwide") != std::string::npos);
  // Plain output stays ANSI-free; the colored variant differs only by codes.
  CHECK(text.find('\x1b') == std::string::npos);
  CHECK(attribution_report_text(report, item, true).find("\x1b[32m") != std::string::npos);
}
