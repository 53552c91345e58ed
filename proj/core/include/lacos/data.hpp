#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "lacos/vocab.hpp"

namespace lacos {

enum class NliLabel { entailment, neutral, contradiction };

const char* to_string(NliLabel label);
NliLabel nli_label_from_string(const std::string& s); // throws DataError

struct NliRecord {
    std::string premise;
    std::string hypothesis;
    NliLabel label = NliLabel::entailment;
};

struct StsRecord {
    std::string sentence1;
    std::string sentence2;
    double score = 0.0; // gold relatedness in [0, 5]
};

enum class FileFormat { jsonl, tsv };

FileFormat file_format_from_string(const std::string& s); // throws ConfigError

/// Strict loaders: any malformed row aborts with its 1-based line number.
std::vector<NliRecord> load_nli(const std::string& path, FileFormat format);
std::vector<StsRecord> load_sts(const std::string& path, FileFormat format);

void write_nli_jsonl(std::ostream& out, const std::vector<NliRecord>& records);
void write_sts_jsonl(std::ostream& out, const std::vector<StsRecord>& records);

using SentencePair = std::pair<std::string, std::string>;

/// Entailment-labeled records only, order preserved, as (premise, hypothesis).
std::vector<SentencePair> filter_entailment(const std::vector<NliRecord>& records);

/// Indices into the pair list forming one training mini-batch.
struct PairBatch {
    std::vector<std::size_t> indices;
};

/// Seeded shuffle, then greedy fill; with dedup, a pair whose premise already
/// occurs in the open batch is skipped and re-queued for later batches. A
/// final batch smaller than 2 is dropped (one pair has no in-batch negatives).
std::vector<PairBatch> make_batches(const std::vector<SentencePair>& pairs, std::size_t n,
                                    std::uint64_t seed, bool dedup);

/// Aligned premise/hypothesis token batches for one PairBatch.
struct MiniBatch {
    TokenBatch premises;
    TokenBatch hypotheses;
    std::vector<std::size_t> source_ids;
};

MiniBatch tokenize_minibatch(const std::vector<SentencePair>& pairs, const PairBatch& batch,
                             const Vocabulary& vocab, std::size_t max_seq_len,
                             std::size_t vocab_size);

/// Intersection-over-union of token multisets (counts capped by min / max).
double multiset_jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b);

struct SynthCorpus {
    std::vector<NliRecord> train; // all entailment-labeled positives
    std::vector<StsRecord> eval;  // gold = 5 x multiset-Jaccard
};

/// Deterministic synthetic paraphrase corpus over an artificial word list.
/// Train and eval sets come from independent derived seed streams.
SynthCorpus synth_corpus(std::uint64_t seed, std::size_t n_train_pairs, std::size_t n_eval_pairs,
                         std::size_t vocab_size);

} // namespace lacos
