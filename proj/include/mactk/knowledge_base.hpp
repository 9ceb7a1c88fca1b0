#pragma once

#include <nlohmann/json_fwd.hpp>

#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "mactk/bindings.hpp"
#include "mactk/prompt.hpp"

namespace mactk {

struct KbEntry {
  std::string surface;                   // whitespace-collapsed lookup form
  std::optional<std::string> canonical;  // reported value; surface text when absent
};

struct KbPattern {
  std::string source;
  std::regex compiled;  // case-insensitive ECMAScript
};

struct KbSlot {
  std::string slot;
  std::vector<KbEntry> entries;
  std::vector<KbPattern> patterns;
};

/// Per-slot lexicon of entity surface forms plus optional regex patterns.
/// Immutable once loaded; extraction is pure, so instances can be shared
/// across threads freely.
class KnowledgeBase {
 public:
  void add_slot(std::string_view slot);
  void add_entry(std::string_view slot, std::string_view surface,
                 std::optional<std::string> canonical = {});
  void add_pattern(std::string_view slot, std::string_view pattern);

  const std::vector<KbSlot>& slots() const { return slots_; }
  const KbSlot* find(std::string_view slot) const;
  AspectSchema schema() const;

 private:
  KbSlot& ensure(std::string_view slot);

  std::vector<KbSlot> slots_;
};

/// File schema: {"format": "mactk-kb/1", <slot>: [entries...], ...,
/// "patterns": {<slot>: [regex...]}}. Entries are bare surface strings or
/// {"surface": ..., "canonical": ...} objects. "format" and "patterns" are
/// reserved top-level keys, not slot names.
KnowledgeBase load_knowledge_base(const std::string& path);
KnowledgeBase knowledge_base_from_json(const nlohmann::ordered_json& j,
                                       const std::string& origin);

/// Finds every slot's entities in the text: case-insensitive, word
/// boundaries on both ends for lexicon entries, patterns as written.
/// Within a slot, overlapping candidates resolve to the longer match,
/// then the earlier, then the earlier KB entry; distinct slots may claim
/// overlapping spans. Every KB slot appears in the result, possibly empty.
AspectBindings extract_aspects(const KnowledgeBase& kb, const std::string& text);

}  // namespace mactk
