#include "mactk/text.hpp"

#include <cctype>

namespace mactk {

std::string fold_case(std::string_view text) {
  std::string out(text);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(out[i]);
    if (c < 0x80) {
      out[i] = static_cast<char>(std::tolower(c));
    } else if (c == 0xC3 && i + 1 < out.size()) {
      // Latin-1 supplement uppercase: U+00C0..U+00DE except U+00D7.
      const unsigned char next = static_cast<unsigned char>(out[i + 1]);
      if (next >= 0x80 && next <= 0x9E && next != 0x97) {
        out[i + 1] = static_cast<char>(next + 0x20);
      }
      ++i;
    }
  }
  return out;
}

bool is_word_byte(unsigned char c) {
  if (c >= 0x80) return true;
  return std::isalnum(c) != 0 || c == '_';
}

bool on_word_boundary(std::string_view text, const Span& span) {
  if (span.begin > 0 &&
      is_word_byte(static_cast<unsigned char>(text[span.begin - 1]))) {
    return false;
  }
  if (span.end < text.size() &&
      is_word_byte(static_cast<unsigned char>(text[span.end]))) {
    return false;
  }
  return true;
}

std::vector<Span> find_term(std::string_view text, std::string_view term) {
  std::vector<Span> spans;
  if (term.empty() || term.size() > text.size()) return spans;
  const std::string folded_text = fold_case(text);
  const std::string folded_term = fold_case(term);
  std::size_t pos = 0;
  while ((pos = folded_text.find(folded_term, pos)) != std::string::npos) {
    const Span span{pos, pos + folded_term.size()};
    if (on_word_boundary(text, span)) spans.push_back(span);
    ++pos;
  }
  return spans;
}

bool contains_term(std::string_view text, std::string_view term) {
  return !find_term(text, term).empty();
}

std::string collapse_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool in_space = true;  // leading whitespace dropped
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      in_space = true;
    } else {
      if (in_space && !out.empty()) out.push_back(' ');
      out.push_back(static_cast<char>(c));
      in_space = false;
    }
  }
  return out;
}

}  // namespace mactk
