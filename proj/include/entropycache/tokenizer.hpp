#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace entropycache {

// Byte-level vocabulary: ids 0..255 are raw byte values, specials follow.
inline constexpr int kMaskTokenId = 256;
inline constexpr int kEosTokenId = 257;
inline constexpr int kPadTokenId = 258;
inline constexpr int kMinVocabSize = 259;

/// UTF-8 text to token ids, one id per byte.
std::vector<int> encode_bytes(std::string_view text);

/// Token ids back to text; specials render as bracketed tags.
std::string decode_tokens(const std::vector<int>& tokens);

}  // namespace entropycache
