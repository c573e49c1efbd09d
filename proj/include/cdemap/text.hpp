#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cdemap::text {

// Trims ASCII/Unicode-space at both ends and collapses inner whitespace runs
// to a single ASCII space. Case is preserved.
std::string squash_whitespace(std::string_view s);

// Surface-form key: NFC-normalized, case-folded, whitespace-squashed.
// Two surface forms are equal iff their keys are byte-equal.
std::string normalize_surface(std::string_view s);

std::string trim(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Tokens are maximal runs of letters/digits taken from the normalized
// surface; punctuation separates tokens.
std::vector<std::string> tokenize(std::string_view s);

// Whitespace-separated word count of the squashed string.
std::size_t word_count(std::string_view s);

std::uint64_t fnv1a64(std::string_view s);
std::uint32_t fnv1a32(std::string_view s);

// 16 lowercase hex digits.
std::string hex64(std::uint64_t v);

bool contains(std::string_view haystack, std::string_view needle);

}  // namespace cdemap::text
