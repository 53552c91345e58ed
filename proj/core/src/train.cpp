#include "lacos/train.hpp"

#include "lacos/errors.hpp"
#include "lacos/rng.hpp"
#include "lacos/tensor.hpp"

#include <optional>

namespace lacos {

namespace {

MnrConfig mean_variant(MnrConfig cfg) {
    cfg.reduction = Reduction::mean;
    return cfg;
}

} // namespace

double epoch_mean_loss(const SentenceEncoder& model, const std::vector<SentencePair>& pairs,
                       const std::vector<PairBatch>& batches, const Vocabulary& vocab,
                       const MnrConfig& mnr) {
    if (batches.empty()) throw DataError("epoch mean loss: no batches");
    const MnrConfig per_pair = mean_variant(mnr);
    double weighted = 0.0;
    std::size_t rows = 0;
    for (const auto& batch : batches) {
        const auto mb = tokenize_minibatch(pairs, batch, vocab, model.config().max_seq_len,
                                           model.config().vocab_size);
        Graph g;
        const auto [u, v] = model.siamese_encode_pair(g, mb.premises, mb.hypotheses);
        const double loss = mnr_loss(g, u, v, per_pair).item();
        weighted += loss * static_cast<double>(batch.indices.size());
        rows += batch.indices.size();
    }
    return weighted / static_cast<double>(rows);
}

TrainResult train_model(SentenceEncoder& model, const std::vector<SentencePair>& pairs,
                        const Vocabulary& vocab, const TrainOptions& opts,
                        const std::function<void(const StepMetric&)>& on_step) {
    if (opts.epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (opts.batch_size < 2) throw ConfigError("train: batch size must be >= 2");

    const auto eval_batches =
        make_batches(pairs, opts.batch_size, derive_seed(opts.seed, 0), opts.dedup_premises);
    if (eval_batches.empty()) {
        throw DataError("train: not enough pairs for a single batch of 2");
    }

    // lr = 0 is a sanctioned no-op run (metrics without updates); the
    // optimizer itself requires a positive rate, so it is skipped entirely.
    const bool no_op = opts.adam.lr == 0.0;
    std::optional<Adam> opt;
    if (no_op) {
        AdamConfig rest = opts.adam;
        rest.lr = 1.0;
        validate(rest); // the remaining fields must still be sane
    } else {
        opt.emplace(opts.adam);
        for (const auto& p : model.parameters()) {
            if (p.trainable) opt->add_param(p.name, *p.tensor);
        }
        if (opt->slot_count() == 0) {
            throw ConfigError(
                "train: the model has no trainable tensors (rank 0, frozen embeddings)");
        }
    }

    TrainResult result;
    result.pairs = pairs.size();
    result.initial_loss = epoch_mean_loss(model, pairs, eval_batches, vocab, opts.mnr);

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        const auto batches =
            epoch == 0 ? eval_batches
                       : make_batches(pairs, opts.batch_size, derive_seed(opts.seed, epoch),
                                      opts.dedup_premises);
        for (const auto& batch : batches) {
            const auto mb = tokenize_minibatch(pairs, batch, vocab, model.config().max_seq_len,
                                               model.config().vocab_size);
            Graph g;
            const auto [u, v] = model.siamese_encode_pair(g, mb.premises, mb.hypotheses);
            const Tensor loss = mnr_loss(g, u, v, opts.mnr);
            if (!no_op) {
                opt->zero_grad();
                g.backward(loss);
                opt->step();
            }

            StepMetric metric;
            metric.step = ++step;
            // report the per-pair mean regardless of the gradient reduction
            metric.loss = opts.mnr.reduction == Reduction::mean
                              ? static_cast<double>(loss.item())
                              : static_cast<double>(loss.item()) /
                                    static_cast<double>(batch.indices.size());
            metric.acc = mnr_accuracy(u, v);
            result.metrics.push_back(metric);
            if (on_step) on_step(metric);
        }
    }
    result.steps = step;
    result.final_loss = epoch_mean_loss(model, pairs, eval_batches, vocab, opts.mnr);
    return result;
}

} // namespace lacos
