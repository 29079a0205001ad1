#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

// Tokenization and the fixed word lists shared by the behavior generator, the
// noise-filter oracle, and the specificity reward. Navigational / generic
// words are deliberately disjoint from the synthetic topic vocabulary, which
// is built from pseudo-words.

namespace iqgen {

// Lowercases and splits on any non-alphanumeric character. "NVIDIA Q4" ->
// {"nvidia", "q4"}; "www.amazon.com" -> {"www", "amazon", "com"}.
std::vector<std::string> tokenize(std::string_view text);

std::string join_tokens(std::span<const std::string> tokens);

std::string to_lower(std::string_view text);

bool all_digits(std::string_view token);

// Platform / navigational words ("google", "youtube", ...).
std::span<const std::string_view> nav_words();

// Generic utility words that carry no topical interest on their own
// ("weather", "today", "latest", ...). Also used as query qualifiers and
// title filler by the world generator.
std::span<const std::string_view> generic_words();

bool is_nav_word(std::string_view token);
bool is_generic_word(std::string_view token);
bool is_login_word(std::string_view token);

// True when the whole payload is a bare URL ("www.amazon.com",
// "https://example.org/x").
bool is_url_only(std::string_view payload);

}  // namespace iqgen
