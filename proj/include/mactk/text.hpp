#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace mactk {

/// Half-open character interval [begin, end) in a source text.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - begin; }
  bool overlaps(const Span& other) const {
    return begin < other.end && other.begin < end;
  }
  friend bool operator==(const Span&, const Span&) = default;
};

/// ASCII case folding plus the Latin-1 supplement letters (UTF-8 C3 80..C3 9E
/// excluding the multiplication sign). Byte length is preserved, so spans in
/// the folded text map 1:1 onto the original.
std::string fold_case(std::string_view text);

/// Word characters are [A-Za-z0-9_] and any non-ASCII byte; everything else
/// separates words.
bool is_word_byte(unsigned char c);

/// True when text[span] sits on word boundaries on both sides.
bool on_word_boundary(std::string_view text, const Span& span);

/// Case-insensitive, word-boundary occurrences of `term` in `text`, sorted by
/// start. Overlapping occurrences of the same term are all reported.
std::vector<Span> find_term(std::string_view text, std::string_view term);

bool contains_term(std::string_view text, std::string_view term);

/// Trims and collapses runs of whitespace to single spaces.
std::string collapse_whitespace(std::string_view text);

}  // namespace mactk
