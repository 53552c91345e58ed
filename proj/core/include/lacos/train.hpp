#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lacos/data.hpp"
#include "lacos/encoder.hpp"
#include "lacos/objective.hpp"
#include "lacos/optim.hpp"
#include "lacos/vocab.hpp"

namespace lacos {

struct TrainOptions {
    std::size_t batch_size = 32;
    std::size_t epochs = 1;
    std::uint64_t seed = 0; // batching streams; weight init comes from the encoder config
    bool dedup_premises = true;
    MnrConfig mnr;
    AdamConfig adam;
};

struct StepMetric {
    std::size_t step = 0; // 1-based, global across epochs
    double loss = 0.0;    // per-pair mean MNR loss of the batch
    double acc = 0.0;     // in-batch retrieval accuracy
};

struct TrainResult {
    double initial_loss = 0.0; // row-weighted epoch-mean loss before any update
    double final_loss = 0.0;   // same batches, after training
    std::size_t steps = 0;
    std::size_t pairs = 0;
    std::vector<StepMetric> metrics;
};

/// Row-weighted mean of the per-pair MNR loss over fixed batches, no updates.
double epoch_mean_loss(const SentenceEncoder& model, const std::vector<SentencePair>& pairs,
                       const std::vector<PairBatch>& batches, const Vocabulary& vocab,
                       const MnrConfig& mnr);

/// Siamese contrastive fine-tuning of the trainable tensors (adapters, plus
/// embeddings when configured). Epoch e draws its batches from a seed stream
/// derived from (seed, e); the first epoch's batches also serve as the fixed
/// evaluation set for initial_loss/final_loss. on_step (optional) observes
/// every optimizer step in order.
TrainResult train_model(SentenceEncoder& model, const std::vector<SentencePair>& pairs,
                        const Vocabulary& vocab, const TrainOptions& opts,
                        const std::function<void(const StepMetric&)>& on_step = {});

} // namespace lacos
