#include "evlm/tokenizer.hpp"

#include "evlm/errors.hpp"

namespace evlm {

std::vector<int> tokenize(const std::string& text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(tok::kByteOffset + static_cast<int>(c));
    return ids;
}

std::string detokenize(const std::vector<int>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id < tok::kByteOffset || id >= tok::kVocabSize) {
            throw IndexError("cannot decode id " + std::to_string(id) + " at position " +
                             std::to_string(i) + " as a byte");
        }
        out.push_back(static_cast<char>(id - tok::kByteOffset));
    }
    return out;
}

} // namespace evlm
