#include "mactk/knowledge_base.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>

#include "mactk/errors.hpp"
#include "mactk/text.hpp"

namespace mactk {

using nlohmann::ordered_json;

KbSlot& KnowledgeBase::ensure(std::string_view slot) {
  for (auto& existing : slots_)
    if (existing.slot == slot) return existing;
  if (slot.empty()) fail(ErrorKind::Load, "knowledge base slot name is empty");
  slots_.push_back({std::string(slot), {}, {}});
  return slots_.back();
}

void KnowledgeBase::add_slot(std::string_view slot) { ensure(slot); }

void KnowledgeBase::add_entry(std::string_view slot, std::string_view surface,
                              std::optional<std::string> canonical) {
  KbSlot& target = ensure(slot);
  const std::string collapsed = collapse_whitespace(surface);
  if (collapsed.empty())
    fail(ErrorKind::Load, "slot '" + target.slot + "' has an empty surface form");
  const std::string folded = fold_case(collapsed);
  for (const auto& entry : target.entries) {
    if (fold_case(entry.surface) == folded)
      fail(ErrorKind::Load, "slot '" + target.slot + "' lists surface form '" +
                                collapsed + "' twice (matching ignores case)");
  }
  target.entries.push_back({collapsed, std::move(canonical)});
}

void KnowledgeBase::add_pattern(std::string_view slot, std::string_view pattern) {
  KbSlot& target = ensure(slot);
  if (pattern.empty())
    fail(ErrorKind::Pattern, "slot '" + target.slot + "' has an empty pattern");
  try {
    std::regex compiled(pattern.begin(), pattern.end(),
                        std::regex::ECMAScript | std::regex::icase);
    target.patterns.push_back({std::string(pattern), std::move(compiled)});
  } catch (const std::regex_error& e) {
    fail(ErrorKind::Pattern, "slot '" + target.slot + "' pattern '" +
                                 std::string(pattern) + "' does not compile: " + e.what());
  }
}

const KbSlot* KnowledgeBase::find(std::string_view slot) const {
  for (const auto& existing : slots_)
    if (existing.slot == slot) return &existing;
  return nullptr;
}

AspectSchema KnowledgeBase::schema() const {
  AspectSchema schema;
  for (const auto& slot : slots_) schema.slots.push_back(slot.slot);
  return schema;
}

KnowledgeBase knowledge_base_from_json(const ordered_json& j, const std::string& origin) {
  if (!j.is_object())
    fail(ErrorKind::Load, origin + ": knowledge base file must be a JSON object");
  const std::string format = j.value("format", std::string{});
  if (format != "mactk-kb/1")
    fail(ErrorKind::Load, origin + ": unsupported knowledge base format '" + format + "'");

  KnowledgeBase kb;
  for (const auto& [key, value] : j.items()) {
    if (key == "format" || key == "patterns") continue;
    if (!value.is_array())
      fail(ErrorKind::Load, origin + ": slot '" + key + "' must map to an entry array");
    kb.add_slot(key);
    std::size_t index = 0;
    for (const auto& entry : value) {
      if (entry.is_string()) {
        kb.add_entry(key, entry.get<std::string>());
      } else if (entry.is_object() && entry.contains("surface")) {
        std::optional<std::string> canonical;
        if (entry.contains("canonical"))
          canonical = entry.at("canonical").get<std::string>();
        kb.add_entry(key, entry.at("surface").get<std::string>(), std::move(canonical));
      } else {
        fail(ErrorKind::Load, origin + ": slot '" + key + "' entry " +
                                  std::to_string(index) +
                                  " must be a string or a {surface, canonical?} object");
      }
      ++index;
    }
  }
  if (j.contains("patterns")) {
    const auto& patterns = j.at("patterns");
    if (!patterns.is_object())
      fail(ErrorKind::Load, origin + ": patterns must map slot names to pattern arrays");
    for (const auto& [slot, list] : patterns.items()) {
      if (!list.is_array())
        fail(ErrorKind::Load, origin + ": patterns for slot '" + slot + "' must be an array");
      for (const auto& pattern : list) kb.add_pattern(slot, pattern.get<std::string>());
    }
  }
  return kb;
}

KnowledgeBase load_knowledge_base(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Load, "cannot open knowledge base file '" + path + "'");
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(ErrorKind::Load, path + ": " + e.what());
  }
  return knowledge_base_from_json(j, path);
}

namespace {

struct Candidate {
  Span span;
  std::string value;
  std::size_t rank;  // KB entry order; patterns rank after all lexicon entries
};

// Longer beats shorter, earlier beats later, then earlier KB entry.
bool preferred(const Candidate& a, const Candidate& b) {
  if (a.span.length() != b.span.length()) return a.span.length() > b.span.length();
  if (a.span.begin != b.span.begin) return a.span.begin < b.span.begin;
  return a.rank < b.rank;
}

std::vector<Candidate> slot_candidates(const KbSlot& slot, const std::string& text) {
  std::vector<Candidate> candidates;
  std::size_t rank = 0;
  for (const auto& entry : slot.entries) {
    for (const Span& span : find_term(text, entry.surface))
      candidates.push_back(
          {span, entry.canonical.value_or(text.substr(span.begin, span.length())), rank});
    ++rank;
  }
  for (const auto& pattern : slot.patterns) {
    auto begin = std::sregex_iterator(text.begin(), text.end(), pattern.compiled);
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
      if (it->length(0) == 0) continue;  // empty matches carry no value
      const std::size_t at = static_cast<std::size_t>(it->position(0));
      candidates.push_back(
          {{at, at + static_cast<std::size_t>(it->length(0))}, it->str(0), rank});
    }
    ++rank;
  }
  return candidates;
}

}  // namespace

AspectBindings extract_aspects(const KnowledgeBase& kb, const std::string& text) {
  if (text.empty()) fail(ErrorKind::InvalidInput, "cannot extract aspects from empty text");
  AspectBindings bindings;
  for (const auto& slot : kb.slots()) {
    bindings.ensure_slot(slot.slot);
    std::vector<Candidate> candidates = slot_candidates(slot, text);
    std::sort(candidates.begin(), candidates.end(), preferred);
    std::vector<Candidate> accepted;
    for (const auto& candidate : candidates) {
      bool blocked = std::any_of(accepted.begin(), accepted.end(), [&](const Candidate& a) {
        return a.span.overlaps(candidate.span);
      });
      if (!blocked) accepted.push_back(candidate);
    }
    std::sort(accepted.begin(), accepted.end(),
              [](const Candidate& a, const Candidate& b) { return a.span.begin < b.span.begin; });
    for (const auto& candidate : accepted)
      bindings.add(slot.slot, {candidate.value, candidate.span});
  }
  return bindings;
}

}  // namespace mactk
