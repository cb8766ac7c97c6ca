#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace groundkit::text {

inline constexpr std::string_view kSegToken = "[SEG]";
inline constexpr std::string_view kNoFindings = "No findings";

// Lowercase and collapse runs of whitespace to one space; trims both ends.
std::string normalize(std::string_view s);

// Lowercased word tokens. Punctuation characters become standalone tokens;
// the literal "[SEG]" is kept as a single token in its original case.
std::vector<std::string> tokenize_words(std::string_view s);

// Inverse of tokenize_words up to case and whitespace.
std::string join_tokens(const std::vector<std::string>& tokens);

bool contains_seg(std::string_view s);
bool is_no_findings(std::string_view s);

// "liver tumor" -> "Liver tumor"
std::string capitalize(std::string_view s);

}  // namespace groundkit::text
