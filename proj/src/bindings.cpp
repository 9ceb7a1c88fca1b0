#include "mactk/bindings.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>

#include "mactk/errors.hpp"

namespace mactk {

AspectBindings::AspectBindings(const std::vector<std::string>& slot_names) {
  for (const auto& name : slot_names) ensure_slot(name);
}

void AspectBindings::ensure_slot(const std::string& slot) {
  if (!has_slot(slot)) slots_.push_back({slot, {}});
}

void AspectBindings::add(const std::string& slot, AspectMatch match) {
  if (match.span.begin > match.span.end) {
    fail(ErrorKind::InvalidInput, "match span is inverted for slot '" + slot + "'");
  }
  ensure_slot(slot);
  auto& matches = slots_[*slot_index(slot)].matches;
  for (const auto& existing : matches) {
    if (match.span.length() > 0 && existing.span.overlaps(match.span)) {
      fail(ErrorKind::InvalidInput,
           "overlapping matches within slot '" + slot + "'");
    }
  }
  matches.push_back(std::move(match));
  std::sort(matches.begin(), matches.end(),
            [](const AspectMatch& a, const AspectMatch& b) {
              return a.span.begin < b.span.begin;
            });
}

bool AspectBindings::has_slot(std::string_view slot) const {
  return slot_index(slot).has_value();
}

std::optional<std::size_t> AspectBindings::slot_index(std::string_view slot) const {
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].slot == slot) return i;
  }
  return std::nullopt;
}

const std::vector<AspectMatch>* AspectBindings::find(std::string_view slot) const {
  if (auto idx = slot_index(slot)) return &slots_[*idx].matches;
  return nullptr;
}

std::vector<std::size_t> AspectBindings::filled_indices() const {
  std::vector<std::size_t> indices;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (!slots_[i].matches.empty()) indices.push_back(i);
  }
  return indices;
}

nlohmann::ordered_json AspectBindings::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& slot : slots_) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& m : slot.matches) {
      arr.push_back({{"value", m.value}, {"span", {m.span.begin, m.span.end}}});
    }
    j[slot.slot] = std::move(arr);
  }
  return j;
}

AspectBindings AspectBindings::from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) {
    fail(ErrorKind::Load, "bindings JSON must be an object");
  }
  AspectBindings bindings;
  for (const auto& [slot, matches] : j.items()) {
    bindings.ensure_slot(slot);
    if (!matches.is_array()) {
      fail(ErrorKind::Load, "bindings for slot '" + slot + "' must be an array");
    }
    for (const auto& m : matches) {
      if (m.is_string()) {
        bindings.add(slot, {m.get<std::string>(), Span{0, 0}});
        continue;
      }
      if (!m.is_object() || !m.contains("value")) {
        fail(ErrorKind::Load,
             "bindings for slot '" + slot + "' must hold strings or {value, span} objects");
      }
      AspectMatch match;
      match.value = m.at("value").get<std::string>();
      if (m.contains("span")) {
        const auto& s = m.at("span");
        if (!s.is_array() || s.size() != 2) {
          fail(ErrorKind::Load, "span must be a [begin, end] pair");
        }
        match.span = Span{s[0].get<std::size_t>(), s[1].get<std::size_t>()};
      }
      bindings.add(slot, std::move(match));
    }
  }
  return bindings;
}

}  // namespace mactk
