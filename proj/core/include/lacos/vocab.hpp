#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace lacos {

/// Whitespace/lowercase vocabulary with two reserved ids: PAD = 0, UNK = 1.
/// Real tokens occupy ids from 2 upward, ordered by descending corpus
/// frequency with lexical tie-break, capped so every id < vocab_size.
struct Vocabulary {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    std::vector<std::string> tokens;            // tokens[i] has id i + 2
    std::unordered_map<std::string, int> index; // token -> id

    std::size_t size() const { return tokens.size() + 2; }

    int lookup(const std::string& token) const {
        const auto it = index.find(token);
        return it == index.end() ? kUnk : it->second;
    }
};

std::vector<std::string> split_lowercase(const std::string& text);

Vocabulary build_vocabulary(const std::vector<std::string>& texts, std::size_t vocab_size);

/// Rebuild a vocabulary from its ordered token list (tokens[i] gets id i+2),
/// e.g. when restoring from a checkpoint. Duplicates are rejected.
Vocabulary vocabulary_from_tokens(std::vector<std::string> tokens);

/// Token ids for one sentence: lowercased whitespace tokens looked up in the
/// vocabulary, truncated to max_seq_len; an empty string yields [UNK].
std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab,
                          std::size_t max_seq_len);

/// n aligned padded rows of token ids plus a 0/1 validity mask.
struct TokenBatch {
    std::size_t n = 0;
    std::size_t t = 0;
    std::vector<int> ids;            // n*t, row-major, PAD-filled
    std::vector<std::uint8_t> mask;  // n*t, 1 = real token

    int id_at(std::size_t row, std::size_t col) const { return ids[row * t + col]; }
    std::uint8_t mask_at(std::size_t row, std::size_t col) const { return mask[row * t + col]; }
    std::vector<std::uint8_t> mask_row(std::size_t row) const {
        return {mask.begin() + static_cast<std::ptrdiff_t>(row * t),
                mask.begin() + static_cast<std::ptrdiff_t>((row + 1) * t)};
    }
};

TokenBatch make_token_batch(const std::vector<std::vector<int>>& rows, std::size_t vocab_size);

} // namespace lacos
