#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace evlm {

// Byte-level vocabulary: three special ids followed by the 256 raw byte
// values, so vocab size is 259.
namespace tok {
constexpr int kBos = 0;
constexpr int kEos = 1;
constexpr int kEvent = 2;
constexpr int kByteOffset = 3;
constexpr int kVocabSize = 259;
} // namespace tok

/// UTF-8 text to byte ids (no specials added).
std::vector<int> tokenize(const std::string& text);

/// Inverse of tokenize; throws IndexError on special or out-of-range ids.
std::string detokenize(const std::vector<int>& ids);

} // namespace evlm
