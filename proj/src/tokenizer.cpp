#include "entropycache/tokenizer.hpp"

namespace entropycache {

std::vector<int> encode_bytes(std::string_view text) {
    std::vector<int> out;
    out.reserve(text.size());
    for (const char c : text) {
        out.push_back(static_cast<int>(static_cast<unsigned char>(c)));
    }
    return out;
}

std::string decode_tokens(const std::vector<int>& tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (const int t : tokens) {
        if (t >= 0 && t < 256) {
            out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
        } else if (t == kMaskTokenId) {
            out += "[MASK]";
        } else if (t == kEosTokenId) {
            out += "[EOS]";
        } else if (t == kPadTokenId) {
            out += "[PAD]";
        } else {
            out += "[UNK]";
        }
    }
    return out;
}

}  // namespace entropycache
