#include "lacos/data.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "lacos/errors.hpp"
#include "lacos/rng.hpp"

namespace lacos {

namespace {

using Json = nlohmann::ordered_json;

std::string trimmed(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

[[noreturn]] void row_error(const std::string& path, std::size_t line, const std::string& what) {
    throw DataError(path + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> cols;
    std::string cur;
    for (const char ch : line) {
        if (ch == '\t') {
            cols.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    cols.push_back(cur);
    return cols;
}

template <class RowFn>
void for_each_row(const std::string& path, RowFn&& fn) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trimmed(line).empty()) continue; // tolerate blank lines
        fn(line, lineno);
    }
}

Json parse_json_row(const std::string& path, const std::string& line, std::size_t lineno) {
    Json row = Json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.is_object()) row_error(path, lineno, "invalid JSON object");
    return row;
}

std::string json_string_field(const std::string& path, std::size_t lineno, const Json& row,
                              const char* field) {
    if (!row.contains(field) || !row[field].is_string()) {
        row_error(path, lineno, std::string("missing string field '") + field + "'");
    }
    return row[field].get<std::string>();
}

} // namespace

const char* to_string(NliLabel label) {
    switch (label) {
    case NliLabel::entailment: return "entailment";
    case NliLabel::neutral: return "neutral";
    case NliLabel::contradiction: return "contradiction";
    }
    return "?";
}

NliLabel nli_label_from_string(const std::string& s) {
    if (s == "entailment") return NliLabel::entailment;
    if (s == "neutral") return NliLabel::neutral;
    if (s == "contradiction") return NliLabel::contradiction;
    throw DataError("label '" + s + "' is not entailment/neutral/contradiction");
}

FileFormat file_format_from_string(const std::string& s) {
    if (s == "jsonl") return FileFormat::jsonl;
    if (s == "tsv") return FileFormat::tsv;
    throw ConfigError("unknown data format '" + s + "' (expected jsonl or tsv)");
}

std::vector<NliRecord> load_nli(const std::string& path, FileFormat format) {
    std::vector<NliRecord> out;
    for_each_row(path, [&](const std::string& line, std::size_t lineno) {
        NliRecord rec;
        std::string label;
        if (format == FileFormat::jsonl) {
            const Json row = parse_json_row(path, line, lineno);
            rec.premise = json_string_field(path, lineno, row, "premise");
            rec.hypothesis = json_string_field(path, lineno, row, "hypothesis");
            label = json_string_field(path, lineno, row, "label");
        } else {
            const auto cols = split_tabs(line);
            if (cols.size() != 3) {
                row_error(path, lineno,
                          "expected 3 tab-separated columns, got " + std::to_string(cols.size()));
            }
            rec.premise = cols[0];
            rec.hypothesis = cols[1];
            label = cols[2];
        }
        if (trimmed(rec.premise).empty()) row_error(path, lineno, "empty premise");
        if (trimmed(rec.hypothesis).empty()) row_error(path, lineno, "empty hypothesis");
        try {
            rec.label = nli_label_from_string(trimmed(label));
        } catch (const DataError& e) {
            row_error(path, lineno, e.what());
        }
        out.push_back(std::move(rec));
    });
    return out;
}

std::vector<StsRecord> load_sts(const std::string& path, FileFormat format) {
    std::vector<StsRecord> out;
    for_each_row(path, [&](const std::string& line, std::size_t lineno) {
        StsRecord rec;
        if (format == FileFormat::jsonl) {
            const Json row = parse_json_row(path, line, lineno);
            rec.sentence1 = json_string_field(path, lineno, row, "sentence1");
            rec.sentence2 = json_string_field(path, lineno, row, "sentence2");
            if (!row.contains("score") || !row["score"].is_number()) {
                row_error(path, lineno, "missing numeric field 'score'");
            }
            rec.score = row["score"].get<double>();
        } else {
            const auto cols = split_tabs(line);
            if (cols.size() != 3) {
                row_error(path, lineno,
                          "expected 3 tab-separated columns, got " + std::to_string(cols.size()));
            }
            rec.sentence1 = cols[0];
            rec.sentence2 = cols[1];
            try {
                std::size_t used = 0;
                rec.score = std::stod(cols[2], &used);
                if (used != trimmed(cols[2]).size() && used != cols[2].size()) {
                    row_error(path, lineno, "trailing characters in score '" + cols[2] + "'");
                }
            } catch (const std::invalid_argument&) {
                row_error(path, lineno, "score '" + cols[2] + "' is not a number");
            } catch (const std::out_of_range&) {
                row_error(path, lineno, "score '" + cols[2] + "' is out of range");
            }
        }
        if (trimmed(rec.sentence1).empty()) row_error(path, lineno, "empty sentence1");
        if (trimmed(rec.sentence2).empty()) row_error(path, lineno, "empty sentence2");
        if (!(rec.score >= 0.0 && rec.score <= 5.0)) {
            row_error(path, lineno, "score " + std::to_string(rec.score) + " outside [0, 5]");
        }
        out.push_back(std::move(rec));
    });
    return out;
}

void write_nli_jsonl(std::ostream& out, const std::vector<NliRecord>& records) {
    for (const auto& rec : records) {
        Json row;
        row["premise"] = rec.premise;
        row["hypothesis"] = rec.hypothesis;
        row["label"] = to_string(rec.label);
        out << row.dump() << "\n";
    }
}

void write_sts_jsonl(std::ostream& out, const std::vector<StsRecord>& records) {
    for (const auto& rec : records) {
        Json row;
        row["sentence1"] = rec.sentence1;
        row["sentence2"] = rec.sentence2;
        row["score"] = rec.score;
        out << row.dump() << "\n";
    }
}

std::vector<SentencePair> filter_entailment(const std::vector<NliRecord>& records) {
    std::vector<SentencePair> out;
    for (const auto& rec : records) {
        if (rec.label == NliLabel::entailment) out.emplace_back(rec.premise, rec.hypothesis);
    }
    return out;
}

std::vector<PairBatch> make_batches(const std::vector<SentencePair>& pairs, std::size_t n,
                                    std::uint64_t seed, bool dedup) {
    if (n < 1) throw ConfigError("make_batches: batch size must be >= 1");
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    std::deque<std::size_t> queue(order.begin(), order.end());
    std::vector<PairBatch> batches;
    while (!queue.empty()) {
        PairBatch batch;
        std::unordered_set<std::string> premises_in_batch;
        std::vector<std::size_t> skipped;
        while (batch.indices.size() < n && !queue.empty()) {
            const std::size_t idx = queue.front();
            queue.pop_front();
            if (dedup && !premises_in_batch.insert(pairs[idx].first).second) {
                skipped.push_back(idx);
                continue;
            }
            batch.indices.push_back(idx);
        }
        queue.insert(queue.begin(), skipped.begin(), skipped.end());
        if (batch.indices.size() >= 2) batches.push_back(std::move(batch));
        // a 1-pair remainder has no in-batch negatives and is dropped
    }
    return batches;
}

MiniBatch tokenize_minibatch(const std::vector<SentencePair>& pairs, const PairBatch& batch,
                             const Vocabulary& vocab, std::size_t max_seq_len,
                             std::size_t vocab_size) {
    std::vector<std::vector<int>> prem_rows, hyp_rows;
    prem_rows.reserve(batch.indices.size());
    hyp_rows.reserve(batch.indices.size());
    for (const std::size_t idx : batch.indices) {
        prem_rows.push_back(tokenize(pairs[idx].first, vocab, max_seq_len));
        hyp_rows.push_back(tokenize(pairs[idx].second, vocab, max_seq_len));
    }
    MiniBatch mb;
    mb.premises = make_token_batch(prem_rows, vocab_size);
    mb.hypotheses = make_token_batch(hyp_rows, vocab_size);
    mb.source_ids = batch.indices;
    return mb;
}

double multiset_jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::map<std::string, std::size_t> ca, cb;
    for (const auto& t : a) ca[t] += 1;
    for (const auto& t : b) cb[t] += 1;
    std::size_t inter = 0, uni = 0;
    for (const auto& [tok, count] : ca) {
        const auto it = cb.find(tok);
        const std::size_t other = it == cb.end() ? 0 : it->second;
        inter += std::min(count, other);
        uni += std::max(count, other);
    }
    for (const auto& [tok, count] : cb) {
        if (ca.find(tok) == ca.end()) uni += count;
    }
    if (uni == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

std::vector<std::string> synth_word_list(std::size_t vocab_size) {
    // leave room for PAD and UNK so a built vocabulary keeps every word
    const std::size_t n_words = vocab_size - 2;
    std::vector<std::string> words;
    words.reserve(n_words);
    for (std::size_t i = 0; i < n_words; ++i) words.push_back("w" + std::to_string(i));
    return words;
}

std::vector<std::string> random_sentence(Rng& rng, const std::vector<std::string>& words) {
    const std::size_t len = rng.uniform_range(5, 12);
    std::vector<std::string> toks(len);
    for (auto& t : toks) t = words[rng.uniform_index(words.size())];
    return toks;
}

std::string join(const std::vector<std::string>& toks) {
    std::string out;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (i) out.push_back(' ');
        out += toks[i];
    }
    return out;
}

} // namespace

SynthCorpus synth_corpus(std::uint64_t seed, std::size_t n_train_pairs, std::size_t n_eval_pairs,
                         std::size_t vocab_size) {
    if (vocab_size < 16) throw ConfigError("synth_corpus: vocab_size must be >= 16");
    const auto words = synth_word_list(vocab_size);
    SynthCorpus corpus;

    Rng train_rng(derive_seed(seed, 1));
    corpus.train.reserve(n_train_pairs);
    for (std::size_t i = 0; i < n_train_pairs; ++i) {
        const auto premise = random_sentence(train_rng, words);
        // paraphrase: token dropout then adjacent swaps
        std::vector<std::string> hyp;
        for (const auto& tok : premise) {
            if (!train_rng.bernoulli(0.1)) hyp.push_back(tok);
        }
        if (hyp.empty()) hyp.push_back(premise[train_rng.uniform_index(premise.size())]);
        for (std::size_t j = 0; j + 1 < hyp.size(); ++j) {
            if (train_rng.bernoulli(0.2)) std::swap(hyp[j], hyp[j + 1]);
        }
        corpus.train.push_back({join(premise), join(hyp), NliLabel::entailment});
    }

    Rng eval_rng(derive_seed(seed, 2));
    corpus.eval.reserve(n_eval_pairs);
    for (std::size_t i = 0; i < n_eval_pairs; ++i) {
        const auto s1 = random_sentence(eval_rng, words);
        std::vector<std::string> s2;
        if (eval_rng.bernoulli(0.05)) {
            s2 = s1; // exact paraphrase, gold 5.0
        } else {
            // target overlap fraction, realized by sampling that many tokens
            // from s1 and filling the rest with fresh random draws
            const double f = eval_rng.uniform01();
            const std::size_t keep =
                static_cast<std::size_t>(std::llround(f * static_cast<double>(s1.size())));
            std::vector<std::size_t> positions(s1.size());
            for (std::size_t j = 0; j < positions.size(); ++j) positions[j] = j;
            eval_rng.shuffle(positions);
            for (std::size_t j = 0; j < keep; ++j) s2.push_back(s1[positions[j]]);
            while (s2.size() < s1.size()) s2.push_back(words[eval_rng.uniform_index(words.size())]);
            eval_rng.shuffle(s2);
        }
        StsRecord rec;
        rec.sentence1 = join(s1);
        rec.sentence2 = join(s2);
        rec.score = 5.0 * multiset_jaccard(s1, s2);
        corpus.eval.push_back(std::move(rec));
    }
    return corpus;
}

} // namespace lacos
