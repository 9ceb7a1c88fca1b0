#include "mactk/prompt.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "mactk/errors.hpp"
#include "mactk/text.hpp"

namespace mactk {

using nlohmann::ordered_json;

void AspectSchema::validate() const {
  if (slots.empty()) fail(ErrorKind::Config, "aspect schema has no slots");
  std::set<std::string> seen;
  for (const auto& slot : slots) {
    if (slot.empty()) fail(ErrorKind::Config, "aspect schema has an empty slot name");
    if (!seen.insert(slot).second)
      fail(ErrorKind::Config, "duplicate aspect slot '" + slot + "'");
  }
}

std::optional<std::size_t> AspectSchema::index_of(std::string_view slot) const {
  for (std::size_t i = 0; i < slots.size(); ++i)
    if (slots[i] == slot) return i;
  return std::nullopt;
}

void OutputContract::validate() const {
  if (output_key.empty()) fail(ErrorKind::Config, "output key is empty");
  if (is_range()) {
    if (range().lo > range().hi)
      fail(ErrorKind::Config, "output scale [" + std::to_string(range().lo) + ", " +
                                  std::to_string(range().hi) + "] is inverted");
  } else {
    if (labels().empty()) fail(ErrorKind::Config, "categorical scale has no labels");
    std::set<std::string> seen;
    for (const auto& label : labels()) {
      if (label.empty()) fail(ErrorKind::Config, "categorical scale has an empty label");
      if (!seen.insert(fold_case(label)).second)
        fail(ErrorKind::Config, "categorical label '" + label +
                                    "' repeats under case folding");
    }
  }
}

std::string label_text(const ParsedLabel& label) {
  if (const int* value = std::get_if<int>(&label)) return std::to_string(*value);
  return std::get<std::string>(label);
}

PromptMode parse_mode(std::string_view text) {
  if (text == "vanilla") return PromptMode::Vanilla;
  if (text == "cot") return PromptMode::Cot;
  if (text == "mac") return PromptMode::Mac;
  fail(ErrorKind::Config,
       "unknown prompt mode '" + std::string(text) + "' (expected vanilla, cot or mac)");
}

const char* to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::Vanilla: return "vanilla";
    case PromptMode::Cot: return "cot";
    case PromptMode::Mac: return "mac";
  }
  return "?";
}

const char* to_string(SectionKind kind) {
  switch (kind) {
    case SectionKind::Instruction: return "instruction";
    case SectionKind::Context: return "context";
    case SectionKind::Demonstrations: return "demonstrations";
    case SectionKind::Input: return "input";
    case SectionKind::Aspects: return "aspects";
  }
  return "?";
}

void PromptTemplate::validate() const {
  if (instruction.empty()) fail(ErrorKind::Config, "template instruction is empty");
  if (input_marker.empty()) fail(ErrorKind::Config, "input marker is empty");
  schema.validate();
  contract.validate();
}

const Section* RenderedPrompt::find(SectionKind kind) const {
  for (const auto& section : sections)
    if (section.kind == kind) return &section;
  return nullptr;
}

std::string aspect_line(const AspectSchema& schema, const AspectBindings& bindings) {
  std::string line;
  for (std::size_t i = 0; i < schema.slots.size(); ++i) {
    if (i) line += ", ";
    line += schema.slots[i];
    line += " (";
    if (const std::vector<AspectMatch>* matches = bindings.find(schema.slots[i])) {
      for (std::size_t j = 0; j < matches->size(); ++j) {
        if (j) line += ", ";
        line += (*matches)[j].value;
      }
    }
    line += ")";
  }
  return line;
}

namespace {

void check_bindings_fit(const AspectSchema& schema, const AspectBindings& bindings,
                        const char* what) {
  for (const auto& slot : bindings.slots()) {
    if (!schema.index_of(slot.slot))
      fail(ErrorKind::SchemaMismatch, std::string(what) + " bind slot '" + slot.slot +
                                          "' which is not in the aspect schema");
  }
}

}  // namespace

RenderedPrompt render_prompt(const PromptTemplate& tpl,
                             const std::vector<Demonstration>& demos,
                             const std::string& item_text,
                             const AspectBindings& bindings, PromptMode mode) {
  tpl.validate();
  if (item_text.empty()) fail(ErrorKind::InvalidInput, "input item text is empty");
  check_bindings_fit(tpl.schema, bindings, "input bindings");
  for (std::size_t i = 0; i < demos.size(); ++i) {
    if (demos[i].item_text.empty())
      fail(ErrorKind::InvalidInput, "demonstration " + std::to_string(i) + " has empty text");
    if (demos[i].gold_output.empty())
      fail(ErrorKind::InvalidInput,
           "demonstration " + std::to_string(i) + " has empty gold output");
    check_bindings_fit(tpl.schema, demos[i].bindings,
                       ("demonstration " + std::to_string(i)).c_str());
  }
  if (mode == PromptMode::Cot && tpl.cot_trigger.empty())
    fail(ErrorKind::Config, "cot mode needs a non-empty reasoning trigger");

  RenderedPrompt out;
  out.mode = mode;
  std::string& text = out.full_text;
  auto begin_block = [&text] {
    if (!text.empty()) text += "\n\n";
    return text.size();
  };

  {
    std::size_t begin = begin_block();
    text += tpl.instruction;
    if (mode == PromptMode::Cot) {
      text += ' ';
      text += tpl.cot_trigger;
    }
    out.sections.push_back({SectionKind::Instruction, {begin, text.size()}});
  }

  if (!tpl.context.empty()) {
    std::size_t begin = begin_block();
    text += tpl.context;
    out.sections.push_back({SectionKind::Context, {begin, text.size()}});
  }

  if (!demos.empty()) {
    std::size_t demos_begin = 0;
    for (std::size_t i = 0; i < demos.size(); ++i) {
      std::size_t begin = begin_block();
      if (i == 0) demos_begin = begin;
      text += tpl.input_marker;
      text += ": ";
      text += demos[i].item_text;
      if (mode == PromptMode::Mac) {
        text += '\n';
        text += kAspectsMarker;
        text += ": ";
        text += aspect_line(tpl.schema, demos[i].bindings);
      }
      text += '\n';
      text += demos[i].gold_output;
    }
    out.sections.push_back({SectionKind::Demonstrations, {demos_begin, text.size()}});
  }

  {
    std::size_t begin = begin_block();
    text += tpl.input_marker;
    text += ": ";
    text += item_text;
    out.sections.push_back({SectionKind::Input, {begin, text.size()}});
    if (mode == PromptMode::Mac) {
      text += '\n';
      std::size_t aspects_begin = text.size();
      text += kAspectsMarker;
      text += ": ";
      text += aspect_line(tpl.schema, bindings);
      out.sections.push_back({SectionKind::Aspects, {aspects_begin, text.size()}});
    }
  }

  return out;
}

namespace {

std::string escape_for_regex(const std::string& text) {
  static const std::string specials = R"(\^$.|?*+()[]{})";
  std::string out;
  for (char c : text) {
    if (specials.find(c) != std::string::npos) out += '\\';
    out += c;
  }
  return out;
}

struct Fragment {
  std::string raw_value;  // as matched, quotes stripped
  bool quoted = false;
};

std::vector<Fragment> scan_fragments(const std::string& text, const std::string& key) {
  // {"score": 2} with optional whitespace; value is a signed integer, a
  // single- or double-quoted string, or a bare word.
  const std::string pattern =
      R"(\{\s*")" + escape_for_regex(key) +
      R"re("\s*:\s*(?:(-?\d+)|"([^"\n]*)"|'([^'\n]*)'|([A-Za-z][A-Za-z0-9_\- ]*?))\s*\})re";
  const std::regex re(pattern);
  std::vector<Fragment> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), re);
       it != std::sregex_iterator(); ++it) {
    const std::smatch& m = *it;
    if (m[1].matched) out.push_back({m[1].str(), false});
    else if (m[2].matched) out.push_back({m[2].str(), true});
    else if (m[3].matched) out.push_back({m[3].str(), true});
    else out.push_back({m[4].str(), false});
  }
  return out;
}

std::optional<ParsedLabel> admit(const Fragment& fragment, const OutputContract& contract) {
  if (contract.is_range()) {
    const std::string& s = fragment.raw_value;
    if (s.empty()) return std::nullopt;
    std::size_t pos = s[0] == '-' ? 1 : 0;
    if (pos == s.size()) return std::nullopt;
    for (std::size_t i = pos; i < s.size(); ++i)
      if (!std::isdigit(static_cast<unsigned char>(s[i]))) return std::nullopt;
    long value = 0;
    try {
      value = std::stol(s);
    } catch (const std::exception&) {
      return std::nullopt;
    }
    if (value < contract.range().lo || value > contract.range().hi) return std::nullopt;
    return ParsedLabel{static_cast<int>(value)};
  }
  const std::string folded = fold_case(fragment.raw_value);
  for (const auto& label : contract.labels())
    if (fold_case(label) == folded) return ParsedLabel{label};
  return std::nullopt;
}

}  // namespace

ParsedLabel parse_output(const std::string& completion_text,
                         const OutputContract& contract) {
  contract.validate();
  const auto fragments = scan_fragments(completion_text, contract.output_key);
  if (fragments.empty())
    fail(ErrorKind::ParseFailure,
         "completion contains no {\"" + contract.output_key + "\": ...} fragment");
  for (auto it = fragments.rbegin(); it != fragments.rend(); ++it) {
    if (auto label = admit(*it, contract)) return *label;
  }
  fail(ErrorKind::OutOfRange, "completion fragment value '" + fragments.back().raw_value +
                                  "' is outside the output scale");
}

std::string format_label(const OutputContract& contract, const ParsedLabel& label) {
  contract.validate();
  std::string value;
  if (const int* num = std::get_if<int>(&label)) {
    if (!contract.is_range())
      fail(ErrorKind::InvalidInput, "numeric label on a categorical scale");
    if (*num < contract.range().lo || *num > contract.range().hi)
      fail(ErrorKind::OutOfRange, "label " + std::to_string(*num) + " is outside the scale");
    value = std::to_string(*num);
  } else {
    if (contract.is_range())
      fail(ErrorKind::InvalidInput, "text label on an integer scale");
    const std::string folded = fold_case(std::get<std::string>(label));
    const auto& labels = contract.labels();
    auto it = std::find_if(labels.begin(), labels.end(), [&](const std::string& l) {
      return fold_case(l) == folded;
    });
    if (it == labels.end())
      fail(ErrorKind::OutOfRange,
           "label '" + std::get<std::string>(label) + "' is not on the scale");
    value = "\"" + *it + "\"";
  }
  return "{\"" + contract.output_key + "\": " + value + "}";
}

AspectBindings ablate_bindings(const AspectBindings& bindings,
                               const std::vector<std::size_t>& keep) {
  const auto& slots = bindings.slots();
  std::vector<bool> kept(slots.size(), false);
  for (std::size_t index : keep) {
    if (index >= slots.size())
      fail(ErrorKind::InvalidSubset, "keep index " + std::to_string(index) +
                                         " is out of range for " +
                                         std::to_string(slots.size()) + " slots");
    kept[index] = true;
  }
  AspectBindings out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    out.ensure_slot(slots[i].slot);
    if (kept[i])
      for (const auto& match : slots[i].matches) out.add(slots[i].slot, match);
  }
  return out;
}

namespace {

OutputContract contract_from_json(const ordered_json& j, const std::string& origin) {
  OutputContract contract;
  contract.output_key = j.at("output_key").get<std::string>();
  const auto& scale = j.at("scale");
  if (scale.is_array() && scale.size() == 2 && scale[0].is_number_integer()) {
    contract.scale = IntRange{scale[0].get<int>(), scale[1].get<int>()};
  } else if (scale.is_object() && scale.contains("labels")) {
    contract.scale = scale.at("labels").get<std::vector<std::string>>();
  } else {
    fail(ErrorKind::Load, origin + ": scale must be [lo, hi] or {\"labels\": [...]}");
  }
  return contract;
}

AspectBindings demo_bindings_from_json(const ordered_json& j, const std::string& text,
                                       const AspectSchema& schema,
                                       const std::string& origin) {
  AspectBindings bindings;
  for (const auto& slot : schema.slots) bindings.ensure_slot(slot);
  if (j.is_null()) return bindings;
  for (const auto& [slot, values] : j.items()) {
    if (!schema.index_of(slot))
      fail(ErrorKind::SchemaMismatch,
           origin + ": demo binds slot '" + slot + "' not present in the schema");
    if (!values.is_array())
      fail(ErrorKind::Load, origin + ": demo bindings for '" + slot + "' must be an array");
    for (const auto& value : values) {
      const std::string surface = value.get<std::string>();
      // Anchor the value in the demo text when it occurs there; a zero
      // span otherwise (the render only uses the value text).
      const std::vector<Span> spans = find_term(text, surface);
      bindings.add(slot, {surface, spans.empty() ? Span{0, 0} : spans.front()});
    }
  }
  return bindings;
}

}  // namespace

std::vector<Demonstration> TemplateFile::demos_for(PromptMode mode,
                                                   std::optional<std::size_t> k) const {
  std::size_t count = k.value_or(demos.size());
  if (count > demos.size())
    fail(ErrorKind::Capacity, "requested " + std::to_string(count) + " demos but only " +
                                  std::to_string(demos.size()) + " are available");
  std::vector<Demonstration> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const DemoRecord& record = demos[i];
    Demonstration demo;
    demo.item_text = record.text;
    demo.bindings = record.bindings;
    if (mode == PromptMode::Cot) {
      if (!record.cot_output)
        fail(ErrorKind::Config, "demo " + std::to_string(i) +
                                    " has no cot_output; cot mode needs worked reasoning");
      demo.gold_output = *record.cot_output;
    } else {
      demo.gold_output = record.output;
    }
    out.push_back(std::move(demo));
  }
  return out;
}

TemplateFile template_from_json(const ordered_json& j, const std::string& origin) {
  if (!j.is_object()) fail(ErrorKind::Load, origin + ": template file must be a JSON object");
  const std::string format = j.value("format", std::string{});
  if (format != "mactk-template/1")
    fail(ErrorKind::Load, origin + ": unsupported template format '" + format + "'");

  TemplateFile out;
  try {
    out.tpl.instruction = j.at("instruction").get<std::string>();
    out.tpl.context = j.value("context", std::string{});
    out.tpl.schema.slots = j.at("slots").get<std::vector<std::string>>();
    out.tpl.contract = contract_from_json(j, origin);
    out.tpl.cot_trigger = j.value("cot_trigger", std::string{kDefaultCotTrigger});
    out.tpl.input_marker = j.value("input_marker", std::string{kDefaultInputMarker});
    out.tpl.validate();
    for (const auto& demo : j.value("demos", ordered_json::array())) {
      TemplateFile::DemoRecord record;
      record.text = demo.at("text").get<std::string>();
      if (record.text.empty()) fail(ErrorKind::Load, origin + ": demo text is empty");
      record.output = demo.at("output").get<std::string>();
      if (record.output.empty()) fail(ErrorKind::Load, origin + ": demo output is empty");
      if (demo.contains("cot_output"))
        record.cot_output = demo.at("cot_output").get<std::string>();
      record.bindings = demo_bindings_from_json(demo.value("bindings", ordered_json{}),
                                                record.text, out.tpl.schema, origin);
      out.demos.push_back(std::move(record));
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrorKind::Load, origin + ": " + e.what());
  }
  return out;
}

TemplateFile load_template(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Load, "cannot open template file '" + path + "'");
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(ErrorKind::Load, path + ": " + e.what());
  }
  return template_from_json(j, path);
}

}  // namespace mactk
