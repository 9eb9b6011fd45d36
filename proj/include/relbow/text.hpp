#ifndef RELBOW_TEXT_HPP
#define RELBOW_TEXT_HPP

#include <string>
#include <string_view>
#include <vector>

namespace relbow {

// Word tokenizer for social-media text. Pure function of its input:
//   - lowercases (ASCII + Latin-1/Latin-Ext-A letters),
//   - URLs collapse to "<url>", @-mentions to "<user>",
//   - "#tag" keeps the bare tag word,
//   - emoticons from a fixed set are kept whole,
//   - all other punctuation separates tokens.
// The literal tokens "<url>" and "<user>" re-tokenize to themselves, so
// tokenize(join(tokenize(t))) == tokenize(t).
struct Tokenizer {
  bool lowercase = true;

  std::vector<std::string> tokenize(std::string_view text) const;
};

// Shared default instance; corpus statistics and all feature building use
// this exact tokenizer.
const Tokenizer& default_tokenizer();

std::vector<std::string> tokenize(std::string_view text);

// Number of Unicode code points in a UTF-8 string (malformed bytes count 1).
std::size_t count_codepoints(std::string_view text);

// Prefix holding at most `budget` code points.
std::string_view codepoint_prefix(std::string_view text, std::size_t budget);

}  // namespace relbow

#endif  // RELBOW_TEXT_HPP
