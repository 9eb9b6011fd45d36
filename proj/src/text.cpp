#include "relbow/text.hpp"

#include <array>
#include <cctype>
#include <cstdint>

namespace relbow {
namespace {

struct Decoded {
  char32_t cp;
  std::size_t len;  // bytes consumed
};

// Minimal UTF-8 decoder; a malformed lead byte is returned as-is with len 1.
Decoded decode(std::string_view s, std::size_t i) {
  unsigned char b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) return {b0, 1};
  auto cont = [&](std::size_t k) {
    return i + k < s.size() &&
           (static_cast<unsigned char>(s[i + k]) & 0xc0) == 0x80;
  };
  if ((b0 & 0xe0) == 0xc0 && cont(1)) {
    char32_t cp = (b0 & 0x1f) << 6 | (s[i + 1] & 0x3f);
    return {cp, 2};
  }
  if ((b0 & 0xf0) == 0xe0 && cont(1) && cont(2)) {
    char32_t cp = (b0 & 0x0f) << 12 | (s[i + 1] & 0x3f) << 6 | (s[i + 2] & 0x3f);
    return {cp, 3};
  }
  if ((b0 & 0xf8) == 0xf0 && cont(1) && cont(2) && cont(3)) {
    char32_t cp = (b0 & 0x07) << 18 | (s[i + 1] & 0x3f) << 12 |
                  (s[i + 2] & 0x3f) << 6 | (s[i + 3] & 0x3f);
    return {cp, 4};
  }
  return {b0, 1};
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

bool is_letter(char32_t cp) {
  if ((cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z')) return true;
  if (cp >= 0xc0 && cp <= 0xff && cp != 0xd7 && cp != 0xf7) return true;  // Latin-1
  if (cp >= 0x100 && cp <= 0x24f) return true;   // Latin Extended-A/B
  if (cp >= 0x370 && cp <= 0x3ff) return true;   // Greek
  if (cp >= 0x400 && cp <= 0x4ff) return true;   // Cyrillic
  return false;
}

bool is_word_cp(char32_t cp) {
  return is_letter(cp) || (cp >= '0' && cp <= '9') || cp == '_';
}

char32_t to_lower(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
  if (cp >= 0xc0 && cp <= 0xde && cp != 0xd7) return cp + 0x20;  // Latin-1
  if (cp >= 0x100 && cp <= 0x177 && (cp & 1) == 0) return cp + 1;  // Latin Ext-A pairs
  if (cp == 0x178) return 0xff;
  if ((cp == 0x179 || cp == 0x17b || cp == 0x17d)) return cp + 1;
  if (cp >= 0x391 && cp <= 0x3ab && cp != 0x3a2) return cp + 0x20;  // Greek
  if (cp >= 0x410 && cp <= 0x42f) return cp + 0x20;                 // Cyrillic
  return cp;
}

bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool ieq_prefix(std::string_view s, std::size_t i, std::string_view pat) {
  if (s.size() - i < pat.size()) return false;
  for (std::size_t k = 0; k < pat.size(); ++k) {
    char a = s[i + k];
    if (a >= 'A' && a <= 'Z') a = static_cast<char>(a + 0x20);
    if (a != pat[k]) return false;
  }
  return true;
}

// Emoticons matched literally and kept as single tokens; longest first.
constexpr std::array<std::string_view, 22> kEmoticons = {
    ":'-)", ":'-(", ":-)", ":-(", ":-D", ":-P", ";-)", ":')", ":'(",
    ":)",  ":(",  ":D",  ":P",  ":p",  ";)",  ":/",  ":|",  ":o",
    ":O",  "<3",  "=)",  "=("};

}  // namespace

std::vector<std::string> Tokenizer::tokenize(std::string_view text) const {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    // sentinel tokens survive re-tokenization
    if (text.compare(i, 5, "<url>") == 0) {
      tokens.emplace_back("<url>");
      i += 5;
      continue;
    }
    if (text.compare(i, 6, "<user>") == 0) {
      tokens.emplace_back("<user>");
      i += 6;
      continue;
    }
    bool emoted = false;
    for (std::string_view e : kEmoticons) {
      if (text.compare(i, e.size(), e) == 0) {
        tokens.emplace_back(e);
        i += e.size();
        emoted = true;
        break;
      }
    }
    if (emoted) continue;
    if (ieq_prefix(text, i, "http://") || ieq_prefix(text, i, "https://") ||
        ieq_prefix(text, i, "www.")) {
      while (i < n && !is_ascii_space(text[i])) ++i;
      tokens.emplace_back("<url>");
      continue;
    }
    if (text[i] == '@') {
      std::size_t j = i + 1;
      while (j < n && (std::isalnum(static_cast<unsigned char>(text[j])) ||
                       text[j] == '_'))
        ++j;
      if (j > i + 1) {
        tokens.emplace_back("<user>");
        i = j;
        continue;
      }
      ++i;
      continue;
    }
    std::size_t start = i;
    if (text[i] == '#') {
      Decoded d = decode(text, i + 1 < n ? i + 1 : i);
      if (i + 1 < n && is_word_cp(d.cp)) {
        start = i + 1;  // keep the bare tag
      } else {
        ++i;
        continue;
      }
    }
    Decoded d = decode(text, start);
    if (!is_word_cp(d.cp)) {
      i = start + d.len;
      continue;
    }
    std::string word;
    std::size_t j = start;
    while (j < n) {
      Decoded w = decode(text, j);
      if (!is_word_cp(w.cp)) break;
      append_utf8(word, lowercase ? to_lower(w.cp) : w.cp);
      j += w.len;
    }
    tokens.push_back(std::move(word));
    i = j;
  }
  return tokens;
}

const Tokenizer& default_tokenizer() {
  static const Tokenizer t{};
  return t;
}

std::vector<std::string> tokenize(std::string_view text) {
  return default_tokenizer().tokenize(text);
}

std::size_t count_codepoints(std::string_view text) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < text.size(); i += decode(text, i).len) ++count;
  return count;
}

std::string_view codepoint_prefix(std::string_view text, std::size_t budget) {
  std::size_t i = 0, count = 0;
  while (i < text.size() && count < budget) {
    i += decode(text, i).len;
    ++count;
  }
  return text.substr(0, i);
}

}  // namespace relbow
