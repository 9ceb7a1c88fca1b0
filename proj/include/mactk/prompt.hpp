#pragma once

#include <nlohmann/json_fwd.hpp>

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mactk/bindings.hpp"

namespace mactk {

/// Ordered list of aspect slot names; order is preserved in every render.
struct AspectSchema {
  std::vector<std::string> slots;

  void validate() const;
  std::optional<std::size_t> index_of(std::string_view slot) const;
};

struct IntRange {
  int lo = 1;
  int hi = 4;

  friend bool operator==(const IntRange&, const IntRange&) = default;
};

/// What the model is asked to emit: a single JSON fragment
/// {"<output_key>": <value>} whose value lies on the scale.
struct OutputContract {
  std::string output_key = "score";
  std::variant<IntRange, std::vector<std::string>> scale = IntRange{};

  bool is_range() const { return std::holds_alternative<IntRange>(scale); }
  const IntRange& range() const { return std::get<IntRange>(scale); }
  const std::vector<std::string>& labels() const {
    return std::get<std::vector<std::string>>(scale);
  }
  void validate() const;

  friend bool operator==(const OutputContract&, const OutputContract&) = default;
};

/// int for range scales, canonical label text for categorical scales.
using ParsedLabel = std::variant<int, std::string>;

std::string label_text(const ParsedLabel& label);

struct Demonstration {
  std::string item_text;
  AspectBindings bindings;
  std::string gold_output;
};

enum class PromptMode { Vanilla, Cot, Mac };

PromptMode parse_mode(std::string_view text);
const char* to_string(PromptMode mode);

inline constexpr std::string_view kDefaultCotTrigger = "Let's think step by step.";
inline constexpr std::string_view kDefaultInputMarker = "ARTICLE";
inline constexpr std::string_view kAspectsMarker = "ASPECTS";

struct PromptTemplate {
  std::string instruction;
  std::string context;
  AspectSchema schema;
  OutputContract contract;
  std::string cot_trigger{kDefaultCotTrigger};
  std::string input_marker{kDefaultInputMarker};

  void validate() const;
};

enum class SectionKind { Instruction, Context, Demonstrations, Input, Aspects };

const char* to_string(SectionKind kind);

struct Section {
  SectionKind kind;
  Span span;
};

struct RenderedPrompt {
  std::string full_text;
  std::vector<Section> sections;
  PromptMode mode = PromptMode::Vanilla;

  const Section* find(SectionKind kind) const;
};

/// The slot enumeration shown after the aspects marker, e.g.
/// "Competitor (), TSP (Mascom), Product ()". Every schema slot appears
/// exactly once; multiple values are comma-joined in match order.
std::string aspect_line(const AspectSchema& schema, const AspectBindings& bindings);

/// Assembles the prompt. Layout: instruction (with the reasoning trigger
/// appended in cot mode), context, demonstrations, then the input item;
/// blocks are separated by blank lines. In mac mode the input and each
/// demonstration carry an aspects line directly under their marker line.
/// Byte-deterministic in its arguments.
RenderedPrompt render_prompt(const PromptTemplate& tpl,
                             const std::vector<Demonstration>& demos,
                             const std::string& item_text,
                             const AspectBindings& bindings, PromptMode mode);

/// Extracts the value of the last well-formed {"<output_key>": <value>}
/// fragment whose value lies on the contract scale. Prose around the
/// fragment and whitespace inside the braces are tolerated.
ParsedLabel parse_output(const std::string& completion_text,
                         const OutputContract& contract);

/// Formats a label as the canonical output fragment, e.g. {"score": 2}.
std::string format_label(const OutputContract& contract, const ParsedLabel& label);

/// Projects bindings onto the kept slot indices; all other slots stay
/// present but empty. keep=∅ yields the all-empty baseline.
AspectBindings ablate_bindings(const AspectBindings& bindings,
                               const std::vector<std::size_t>& keep);

/// Template + demonstrations file. Schema: instruction, context, slots,
/// output_key, scale, demos[]; see docs/file-formats.md.
struct TemplateFile {
  struct DemoRecord {
    std::string text;
    AspectBindings bindings;
    std::string output;
    std::optional<std::string> cot_output;
  };

  PromptTemplate tpl;
  std::vector<DemoRecord> demos;

  /// Demonstrations for a mode; cot uses cot_output and rejects demos
  /// without one. k limits to the first k demos.
  std::vector<Demonstration> demos_for(PromptMode mode,
                                       std::optional<std::size_t> k = {}) const;
};

TemplateFile load_template(const std::string& path);
TemplateFile template_from_json(const nlohmann::ordered_json& j,
                                const std::string& origin);

}  // namespace mactk
