#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "lacos/data.hpp"
#include "lacos/encoder.hpp"
#include "lacos/objective.hpp"
#include "lacos/optim.hpp"
#include "lacos/vocab.hpp"

namespace {

struct Setup {
    lacos::SentenceEncoder model;
    lacos::Vocabulary vocab;
    lacos::MiniBatch batch;
};

Setup make_setup(std::size_t batch_size, std::size_t d_model, std::size_t n_layers) {
    const auto corpus = lacos::synth_corpus(11, batch_size * 4, 0, 64);
    const auto pairs = lacos::filter_entailment(corpus.train);

    std::vector<std::string> texts;
    for (const auto& [p, h] : pairs) {
        texts.push_back(p);
        texts.push_back(h);
    }
    const auto vocab = lacos::build_vocabulary(texts, 64);

    lacos::EncoderConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.d_model = d_model;
    cfg.n_layers = n_layers;
    cfg.n_heads = 4;
    cfg.max_seq_len = 16;
    cfg.lora_rank = 4;
    cfg.seed = 3;

    const auto batches = lacos::make_batches(pairs, batch_size, 1, true);
    auto mini = lacos::tokenize_minibatch(pairs, batches.front(), vocab, cfg.max_seq_len,
                                          cfg.vocab_size);
    return Setup{lacos::SentenceEncoder(cfg), vocab, std::move(mini)};
}

void BM_EncodeBatch(benchmark::State& state) {
    auto setup = make_setup(static_cast<std::size_t>(state.range(0)), 64, 2);
    for (auto _ : state) {
        lacos::Graph g;
        auto u = setup.model.encode(g, setup.batch.premises);
        benchmark::DoNotOptimize(u.values().data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(setup.batch.premises.n));
}
BENCHMARK(BM_EncodeBatch)->Arg(8)->Arg(32);

void BM_SiameseTrainStep(benchmark::State& state) {
    auto setup = make_setup(static_cast<std::size_t>(state.range(0)), 64, 2);

    lacos::AdamConfig adam;
    adam.lr = 1e-4;
    lacos::Adam opt(adam);
    for (const auto& p : setup.model.parameters()) {
        if (p.trainable) opt.add_param(p.name, *p.tensor);
    }

    lacos::MnrConfig mnr;
    mnr.scale = 20.0;
    for (auto _ : state) {
        lacos::Graph g;
        auto [u, v] = setup.model.siamese_encode_pair(g, setup.batch.premises,
                                                      setup.batch.hypotheses);
        auto loss = lacos::mnr_loss(g, u, v, mnr);
        opt.zero_grad();
        g.backward(loss);
        opt.step();
        benchmark::DoNotOptimize(loss.values().data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(setup.batch.premises.n));
}
BENCHMARK(BM_SiameseTrainStep)->Arg(8)->Arg(32);

void BM_EncodeDepth(benchmark::State& state) {
    auto setup = make_setup(16, 64, static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        lacos::Graph g;
        auto u = setup.model.encode(g, setup.batch.premises);
        benchmark::DoNotOptimize(u.values().data());
    }
}
BENCHMARK(BM_EncodeDepth)->Arg(1)->Arg(2)->Arg(4);

} // namespace

BENCHMARK_MAIN();
