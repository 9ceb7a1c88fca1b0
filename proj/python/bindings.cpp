// Python bindings for the toolkit's main operations: aspect extraction,
// prompt assembly, output parsing, Shapley attribution, evaluation metrics
// and the frequency banding used by the memorization bench.

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mactk/attribution.hpp"
#include "mactk/backend.hpp"
#include "mactk/errors.hpp"
#include "mactk/eval.hpp"
#include "mactk/knowledge_base.hpp"
#include "mactk/memorization.hpp"
#include "mactk/prompt.hpp"
#include "mactk/text.hpp"

namespace py = pybind11;
using nlohmann::ordered_json;
using namespace mactk;

namespace {

ordered_json to_json(py::handle obj) {
  if (obj.is_none()) return nullptr;
  if (py::isinstance<py::bool_>(obj)) return obj.cast<bool>();
  if (py::isinstance<py::int_>(obj)) return obj.cast<std::int64_t>();
  if (py::isinstance<py::float_>(obj)) return obj.cast<double>();
  if (py::isinstance<py::str>(obj)) return obj.cast<std::string>();
  if (py::isinstance<py::list>(obj) || py::isinstance<py::tuple>(obj)) {
    ordered_json arr = ordered_json::array();
    for (py::handle item : obj) arr.push_back(to_json(item));
    return arr;
  }
  if (py::isinstance<py::dict>(obj)) {
    ordered_json map = ordered_json::object();
    for (auto item : obj.cast<py::dict>())
      map[item.first.cast<std::string>()] = to_json(item.second);
    return map;
  }
  throw py::type_error("unsupported value type for JSON conversion");
}

py::object to_py(const ordered_json& j) {
  switch (j.type()) {
    case ordered_json::value_t::null: return py::none();
    case ordered_json::value_t::boolean: return py::bool_(j.get<bool>());
    case ordered_json::value_t::number_integer: return py::int_(j.get<std::int64_t>());
    case ordered_json::value_t::number_unsigned: return py::int_(j.get<std::uint64_t>());
    case ordered_json::value_t::number_float: return py::float_(j.get<double>());
    case ordered_json::value_t::string: return py::str(j.get<std::string>());
    case ordered_json::value_t::array: {
      py::list out;
      for (const auto& item : j) out.append(to_py(item));
      return out;
    }
    case ordered_json::value_t::object: {
      py::dict out;
      for (const auto& [key, value] : j.items()) out[py::str(key)] = to_py(value);
      return out;
    }
    default: throw py::type_error("unsupported JSON value");
  }
}

OutputContract make_contract(const std::string& output_key, py::object scale) {
  OutputContract contract;
  contract.output_key = output_key;
  const ordered_json j = to_json(scale);
  if (j.is_array() && j.size() == 2 && j[0].is_number_integer() && j[1].is_number_integer()) {
    contract.scale = IntRange{j[0].get<int>(), j[1].get<int>()};
  } else if (j.is_array()) {
    contract.scale = j.get<std::vector<std::string>>();
  } else {
    throw py::type_error("scale must be [lo, hi] or a list of labels");
  }
  contract.validate();
  return contract;
}

py::object label_to_py(const ParsedLabel& label) {
  if (std::holds_alternative<int>(label)) return py::int_(std::get<int>(label));
  return py::str(std::get<std::string>(label));
}

ParsedLabel label_from_py(py::handle value) {
  if (py::isinstance<py::bool_>(value)) throw py::type_error("label must be int or str");
  if (py::isinstance<py::int_>(value)) return value.cast<int>();
  if (py::isinstance<py::str>(value)) return value.cast<std::string>();
  throw py::type_error("label must be int or str");
}

AspectBindings bindings_from_py(py::handle obj) {
  if (obj.is_none()) return {};
  return AspectBindings::from_json(to_json(obj));
}

py::dict result_to_py(const AttributionResult& result) {
  py::list estimates, stderrs, n_samples;
  for (const auto& aspect : result.aspects) {
    estimates.append(aspect.estimate);
    stderrs.append(aspect.stderr_);
    n_samples.append(aspect.n_samples);
  }
  py::dict out;
  out["estimates"] = estimates;
  out["stderrs"] = stderrs;
  out["n_samples"] = n_samples;
  out["baseline_value"] = result.baseline_value;
  out["full_value"] = result.full_value;
  out["method"] = result.method;
  out["permutations_used"] = result.permutations_used;
  out["seed"] = result.seed;
  return out;
}

// The game callback runs under the GIL; the surrounding computation (which
// may use worker threads) runs with it released.
CoalitionGame::ValueFn wrap_game(py::function f) {
  return [f = std::move(f)](std::uint64_t mask) {
    py::gil_scoped_acquire gil;
    return f(mask).cast<double>();
  };
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-aspect cueing toolkit core";

  py::register_exception<Error>(m, "ToolkitError");

  m.def(
      "fold_case", [](const std::string& text) { return fold_case(text); },
      py::arg("text"), "ASCII plus Latin-1 case folding; byte length preserved.");

  m.def(
      "find_term",
      [](const std::string& text, const std::string& term) {
        py::list out;
        for (const Span& span : find_term(text, term))
          out.append(py::make_tuple(span.begin, span.end));
        return out;
      },
      py::arg("text"), py::arg("term"),
      "Case-insensitive word-boundary occurrences as (begin, end) pairs.");

  m.def(
      "extract_aspects",
      [](py::dict kb, const std::string& text) {
        const KnowledgeBase base = knowledge_base_from_json(to_json(kb), "kb");
        return to_py(extract_aspects(base, text).to_json());
      },
      py::arg("kb"), py::arg("text"),
      "Finds every slot's entities; returns {slot: [{value, span}, ...]}.");

  m.def(
      "aspect_line",
      [](const std::vector<std::string>& slots, py::object bindings) {
        AspectSchema schema{slots};
        return aspect_line(schema, bindings_from_py(bindings));
      },
      py::arg("slots"), py::arg("bindings") = py::none(),
      "The slot enumeration line, e.g. \"Competitor (), TSP (Mascom)\".");

  m.def(
      "render_prompt",
      [](py::dict template_doc, const std::string& text, const std::string& mode_text,
         py::object bindings, py::object kb, std::optional<std::size_t> k) {
        const TemplateFile file = template_from_json(to_json(template_doc), "template");
        const PromptMode mode = parse_mode(mode_text);
        AspectBindings bound;
        if (mode == PromptMode::Mac) {
          if (!bindings.is_none())
            bound = bindings_from_py(bindings);
          else if (!kb.is_none())
            bound = extract_aspects(knowledge_base_from_json(to_json(kb), "kb"), text);
        }
        return render_prompt(file.tpl, file.demos_for(mode, k), text, bound, mode).full_text;
      },
      py::arg("template"), py::arg("text"), py::arg("mode") = "mac",
      py::arg("bindings") = py::none(), py::arg("kb") = py::none(),
      py::arg("k") = py::none(),
      "Assembles the prompt for a template document; byte-deterministic.");

  m.def(
      "parse_output",
      [](const std::string& completion, const std::string& output_key, py::object scale) {
        return label_to_py(parse_output(completion, make_contract(output_key, scale)));
      },
      py::arg("completion"), py::arg("output_key"), py::arg("scale"),
      "Value of the last in-scale {\"<key>\": <value>} fragment.");

  m.def(
      "format_label",
      [](const std::string& output_key, py::object scale, py::object label) {
        return format_label(make_contract(output_key, scale), label_from_py(label));
      },
      py::arg("output_key"), py::arg("scale"), py::arg("label"),
      "Canonical output fragment for a label, e.g. {\"score\": 2}.");

  m.def(
      "exact_shapley",
      [](std::size_t n, py::function f) {
        CoalitionGame game(n, wrap_game(std::move(f)));
        AttributionResult result;
        {
          py::gil_scoped_release release;
          result = exact_shapley(game);
        }
        return result_to_py(result);
      },
      py::arg("n"), py::arg("f"),
      "Exhaustive Shapley values of f over subsets of 0..n-1 (n <= 20).");

  m.def(
      "sampled_shapley",
      [](std::size_t n, py::function f, std::size_t permutations, std::uint64_t seed,
         unsigned workers) {
        CoalitionGame game(n, wrap_game(std::move(f)));
        AttributionResult result;
        {
          py::gil_scoped_release release;
          result = sampled_shapley(game, permutations, seed, workers);
        }
        return result_to_py(result);
      },
      py::arg("n"), py::arg("f"), py::arg("permutations") = 2000, py::arg("seed") = 0,
      py::arg("workers") = 1,
      "Seeded permutation-sampling estimate; identical for any worker count.");

  m.def(
      "compute_metrics",
      [](const std::vector<std::string>& preds, const std::vector<std::string>& golds) {
        const MetricValues values = compute_metrics(preds, golds);
        py::dict out;
        out["accuracy"] = values.accuracy;
        out["macro_f1"] = values.macro_f1;
        out["weighted_f1"] = values.weighted_f1;
        return out;
      },
      py::arg("preds"), py::arg("golds"),
      "Accuracy and per-class F1 aggregates over label strings.");

  m.def(
      "fleiss_kappa",
      [](const std::vector<std::vector<std::size_t>>& counts) {
        return fleiss_kappa(counts);
      },
      py::arg("rating_counts"),
      "Fleiss' kappa over an items x categories matrix of rating counts.");

  m.def(
      "categorize_frequency",
      [](std::uint64_t count) { return std::string(to_string(categorize_frequency(count))); },
      py::arg("count"),
      "Band name for a news-appearance count: rare, less_frequent, frequent "
      "or highly_frequent.");

  m.def(
      "discretize_sentiment",
      [](double score, double lo, double hi) { return discretize_sentiment(score, lo, hi); },
      py::arg("score"), py::arg("lo") = -0.1, py::arg("hi") = 0.1,
      "negative / neutral / positive with [lo, hi] mapping to neutral.");

  m.def(
      "scripted_completion",
      [](py::dict config, const std::string& prompt, std::optional<std::string> target) {
        ScriptedBackend backend(scripted_config_from_json(to_json(config), "config"));
        const Completion completion = backend.complete(prompt, GenerationParams{}, target);
        py::dict out;
        out["text"] = completion.text;
        out["target_logprob"] = completion.target_logprob
                                    ? py::object(py::float_(*completion.target_logprob))
                                    : py::object(py::none());
        return out;
      },
      py::arg("config"), py::arg("prompt"), py::arg("target") = py::none(),
      "Runs one prompt through a scripted backend configuration.");
}
