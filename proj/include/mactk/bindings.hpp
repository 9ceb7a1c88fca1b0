#pragma once

#include <nlohmann/json_fwd.hpp>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mactk/text.hpp"

namespace mactk {

/// One matched aspect value: the canonical text plus where it was found.
struct AspectMatch {
  std::string value;
  Span span;

  friend bool operator==(const AspectMatch&, const AspectMatch&) = default;
};

struct SlotMatches {
  std::string slot;
  std::vector<AspectMatch> matches;

  friend bool operator==(const SlotMatches&, const SlotMatches&) = default;
};

/// Ordered slot -> matches mapping. Slot order is stable (schema/KB order)
/// and every slot is present even when it matched nothing. Within one slot,
/// matches are non-overlapping and sorted by span start; `add` enforces both.
class AspectBindings {
 public:
  AspectBindings() = default;
  explicit AspectBindings(const std::vector<std::string>& slot_names);

  /// Appends a slot (empty) if not present; keeps insertion order.
  void ensure_slot(const std::string& slot);

  /// Adds a match, keeping the slot's matches sorted and non-overlapping.
  /// Overlapping inserts raise an invalid-input error.
  void add(const std::string& slot, AspectMatch match);

  bool has_slot(std::string_view slot) const;
  std::optional<std::size_t> slot_index(std::string_view slot) const;
  const std::vector<AspectMatch>* find(std::string_view slot) const;

  const std::vector<SlotMatches>& slots() const { return slots_; }
  std::size_t slot_count() const { return slots_.size(); }
  bool empty() const { return slots_.empty(); }

  /// Indices of slots holding at least one match, in slot order.
  std::vector<std::size_t> filled_indices() const;
  std::size_t filled_count() const { return filled_indices().size(); }

  nlohmann::ordered_json to_json() const;
  static AspectBindings from_json(const nlohmann::ordered_json& j);

  friend bool operator==(const AspectBindings&, const AspectBindings&) = default;

 private:
  std::vector<SlotMatches> slots_;
};

}  // namespace mactk
