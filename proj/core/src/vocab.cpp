#include "lacos/vocab.hpp"

#include <algorithm>
#include <cctype>

#include "lacos/errors.hpp"

namespace lacos {

std::vector<std::string> split_lowercase(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (const char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) {
                out.push_back(std::move(cur));
                cur.clear();
            }
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

Vocabulary build_vocabulary(const std::vector<std::string>& texts, std::size_t vocab_size) {
    if (vocab_size < 3) throw ConfigError("vocabulary: vocab_size must be >= 3");
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto& text : texts) {
        for (auto& tok : split_lowercase(text)) freq[tok] += 1;
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    const std::size_t cap = vocab_size - 2; // ids 0 and 1 are reserved
    if (ranked.size() > cap) ranked.resize(cap);

    Vocabulary vocab;
    vocab.tokens.reserve(ranked.size());
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        vocab.index.emplace(ranked[i].first, static_cast<int>(i) + 2);
        vocab.tokens.push_back(std::move(ranked[i].first));
    }
    return vocab;
}

Vocabulary vocabulary_from_tokens(std::vector<std::string> tokens) {
    Vocabulary vocab;
    vocab.tokens = std::move(tokens);
    for (std::size_t i = 0; i < vocab.tokens.size(); ++i) {
        const bool fresh = vocab.index.emplace(vocab.tokens[i], static_cast<int>(i) + 2).second;
        if (!fresh) throw DataError("vocabulary: duplicate token '" + vocab.tokens[i] + "'");
    }
    return vocab;
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab,
                          std::size_t max_seq_len) {
    if (max_seq_len < 1) throw ConfigError("tokenize: max_seq_len must be >= 1");
    std::vector<int> ids;
    for (const auto& tok : split_lowercase(text)) {
        if (ids.size() == max_seq_len) break;
        ids.push_back(vocab.lookup(tok));
    }
    if (ids.empty()) ids.push_back(Vocabulary::kUnk);
    return ids;
}

TokenBatch make_token_batch(const std::vector<std::vector<int>>& rows, std::size_t vocab_size) {
    if (rows.empty()) throw DataError("token batch: no rows");
    std::size_t t = 0;
    for (const auto& row : rows) t = std::max(t, row.size());
    if (t == 0) throw DataError("token batch: a row has no tokens");

    TokenBatch batch;
    batch.n = rows.size();
    batch.t = t;
    batch.ids.assign(batch.n * t, Vocabulary::kPad);
    batch.mask.assign(batch.n * t, 0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].empty()) throw DataError("token batch: row " + std::to_string(i) + " is empty");
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            const int id = rows[i][j];
            if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
                throw DataError("token batch: id " + std::to_string(id) + " outside vocab of " +
                                std::to_string(vocab_size));
            }
            batch.ids[i * t + j] = id;
            batch.mask[i * t + j] = 1;
        }
    }
    return batch;
}

} // namespace lacos
