#pragma once

#include <cstddef>
#include <string>

namespace miml {

// Character offsets throughout the project count Unicode code points of the
// UTF-8 decoded text, matching the annotation files. Invalid bytes are
// counted as one code point each.

inline std::size_t utf8_length(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

// Advances i past one code point; returns it as a 32-bit value (best effort).
inline char32_t utf8_next(const std::string& s, std::size_t& i) {
  unsigned char c = static_cast<unsigned char>(s[i]);
  if (c < 0x80) { ++i; return c; }
  int extra = (c >= 0xF0) ? 3 : (c >= 0xE0) ? 2 : (c >= 0xC0) ? 1 : 0;
  char32_t cp = (extra == 0) ? c : (c & (0x3F >> extra));
  std::size_t j = i + 1;
  for (; extra > 0 && j < s.size() && (static_cast<unsigned char>(s[j]) & 0xC0) == 0x80;
       --extra, ++j) {
    cp = (cp << 6) | (static_cast<unsigned char>(s[j]) & 0x3F);
  }
  i = j;
  return cp;
}

}  // namespace miml
