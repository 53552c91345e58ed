#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lacos/errors.hpp"
#include "lacos/lora.hpp"
#include "lacos/quant.hpp"
#include "lacos/rng.hpp"
#include "lacos/tensor.hpp"
#include "lacos/vocab.hpp"

namespace lacos {

struct EncoderConfig {
    std::size_t vocab_size = 4096;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_ff = 0; // 0 = 4 * d_model
    std::size_t max_seq_len = 64;
    std::size_t lora_rank = 4; // 0 = no adapters
    std::vector<AttachPoint> lora_attach = {AttachPoint::ffn_in, AttachPoint::ffn_out,
                                            AttachPoint::final_hidden};
    std::uint64_t seed = 7;
    bool causal = true;          // decoder-style masking; false = bidirectional
    bool train_embeddings = false;
    double init_std = 0.02;

    std::size_t resolved_d_ff() const { return d_ff == 0 ? 4 * d_model : d_ff; }
    bool attaches(AttachPoint ap) const {
        if (lora_rank == 0) return false;
        for (const auto a : lora_attach) {
            if (a == ap) return true;
        }
        return false;
    }
};

inline void validate(const EncoderConfig& cfg) {
    if (cfg.vocab_size < 3) throw ConfigError("encoder: vocab_size must be >= 3 (PAD, UNK, data)");
    if (cfg.d_model < 1 || cfg.n_layers < 1 || cfg.n_heads < 1 || cfg.max_seq_len < 1) {
        throw ConfigError("encoder: dimensions must be positive");
    }
    if (cfg.d_model % cfg.n_heads != 0) {
        throw ConfigError("encoder: d_model " + std::to_string(cfg.d_model) +
                          " not divisible by n_heads " + std::to_string(cfg.n_heads));
    }
    if (!(cfg.init_std > 0)) throw ConfigError("encoder: init_std must be positive");
    if (cfg.lora_rank > 0 && !cfg.lora_attach.empty()) {
        const std::size_t limit = std::min(cfg.d_model, cfg.resolved_d_ff());
        if (cfg.lora_rank > limit) {
            throw ConfigError("encoder: lora_rank " + std::to_string(cfg.lora_rank) +
                              " exceeds min layer dimension " + std::to_string(limit));
        }
    }
}

/// Weight-tied Siamese sentence encoder: token + learned position embeddings,
/// pre-layer-norm transformer blocks (self-attention then GELU FFN, adapters
/// at the configured attach points), a final adapted hidden projection, and
/// masked mean pooling. All base weights are frozen seeded-random draws; only
/// adapter factors (and optionally the token embedding) train.
template <class S>
class SentenceEncoderT {
public:
    struct Layer {
        LoraLinearT<S> wq, wk, wv, wo;     // d x d attention projections
        LoraLinearT<S> ffn_in;             // d x d_ff
        LoraLinearT<S> ffn_out;            // d_ff x d
        TensorT<S> ln1_gain, ln1_bias;     // 1 x d
        TensorT<S> ln2_gain, ln2_bias;
    };

    struct ParamRef {
        std::string name;
        TensorT<S>* tensor;
        bool trainable;
        const QuantizedMatrix* quantized; // non-null when this is a q8-stored base
    };

    explicit SentenceEncoderT(EncoderConfig cfg) : cfg_(std::move(cfg)) {
        validate(cfg_);
        cfg_.d_ff = cfg_.resolved_d_ff();
        const std::size_t d = cfg_.d_model, ff = cfg_.d_ff;

        tok_embed = normal_tensor(stream_of(~std::size_t{0}, 0), cfg_.vocab_size, d,
                                  cfg_.train_embeddings);
        pos_embed = normal_tensor(stream_of(~std::size_t{0}, 1), cfg_.max_seq_len, d, false);

        layers.resize(cfg_.n_layers);
        for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
            Layer& l = layers[i];
            l.wq = linear(stream_of(i, 0), d, d, AttachPoint::attn_q);
            l.wk = make_frozen_linear(normal_tensor(stream_of(i, 1), d, d, false),
                                      AttachPoint::attn_q);
            l.wv = linear(stream_of(i, 2), d, d, AttachPoint::attn_v);
            l.wo = make_frozen_linear(normal_tensor(stream_of(i, 3), d, d, false),
                                      AttachPoint::attn_v);
            l.ffn_in = linear(stream_of(i, 4), d, ff, AttachPoint::ffn_in);
            l.ffn_out = linear(stream_of(i, 5), ff, d, AttachPoint::ffn_out);
            l.ln1_gain = TensorT<S>::full(1, d, S(1));
            l.ln1_bias = TensorT<S>::zeros(1, d);
            l.ln2_gain = TensorT<S>::full(1, d, S(1));
            l.ln2_bias = TensorT<S>::zeros(1, d);
        }
        final_ln_gain = TensorT<S>::full(1, d, S(1));
        final_ln_bias = TensorT<S>::zeros(1, d);
        final_proj = linear(stream_of(~std::size_t{0}, 2), d, d, AttachPoint::final_hidden);
    }

    const EncoderConfig& config() const { return cfg_; }

    /// n x d_model sentence embeddings; one graph-recorded forward pass per
    /// sentence, stacked. Safe to call concurrently on a const model.
    TensorT<S> encode(GraphT<S>& g, const TokenBatch& batch) const {
        if (batch.n < 1) throw ShapeError("encode: empty batch");
        if (batch.t > cfg_.max_seq_len) {
            throw ShapeError("encode: sequence length " + std::to_string(batch.t) +
                             " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
        }
        std::vector<TensorT<S>> pooled;
        pooled.reserve(batch.n);
        for (std::size_t row = 0; row < batch.n; ++row) {
            pooled.push_back(encode_sentence(g, batch, row));
        }
        return batch.n == 1 ? pooled[0] : g.stack_rows(pooled);
    }

    std::pair<TensorT<S>, TensorT<S>> siamese_encode_pair(GraphT<S>& g,
                                                          const TokenBatch& premises,
                                                          const TokenBatch& hypotheses) const {
        if (premises.n != hypotheses.n) {
            throw ShapeError("siamese pair: " + std::to_string(premises.n) + " premises vs " +
                             std::to_string(hypotheses.n) + " hypotheses");
        }
        return {encode(g, premises), encode(g, hypotheses)};
    }

    /// Every tensor in the model, canonical order, with trainability flags.
    std::vector<ParamRef> parameters() {
        std::vector<ParamRef> out;
        out.push_back({"tok_embed", &tok_embed, cfg_.train_embeddings, nullptr});
        out.push_back({"pos_embed", &pos_embed, false, nullptr});
        for (std::size_t i = 0; i < layers.size(); ++i) {
            Layer& l = layers[i];
            const std::string p = "layer" + std::to_string(i) + ".";
            push_lora(out, p + "attn.wq", l.wq);
            push_lora(out, p + "attn.wk", l.wk);
            push_lora(out, p + "attn.wv", l.wv);
            push_lora(out, p + "attn.wo", l.wo);
            out.push_back({p + "ln1.gain", &l.ln1_gain, false, nullptr});
            out.push_back({p + "ln1.bias", &l.ln1_bias, false, nullptr});
            push_lora(out, p + "ffn.w_in", l.ffn_in);
            push_lora(out, p + "ffn.w_out", l.ffn_out);
            out.push_back({p + "ln2.gain", &l.ln2_gain, false, nullptr});
            out.push_back({p + "ln2.bias", &l.ln2_bias, false, nullptr});
        }
        out.push_back({"final.ln.gain", &final_ln_gain, false, nullptr});
        out.push_back({"final.ln.bias", &final_ln_bias, false, nullptr});
        push_lora(out, "final.proj", final_proj);
        return out;
    }

    std::vector<LoraLinearT<S>*> lora_layers() {
        std::vector<LoraLinearT<S>*> out;
        for (auto& l : layers) {
            for (auto* lin : {&l.wq, &l.wk, &l.wv, &l.wo, &l.ffn_in, &l.ffn_out}) {
                out.push_back(lin);
            }
        }
        out.push_back(&final_proj);
        return out;
    }

    std::size_t total_params() {
        std::size_t n = 0;
        for (const auto& p : parameters()) n += p.tensor->size();
        return n;
    }
    std::size_t trainable_params() {
        std::size_t n = 0;
        for (const auto& p : parameters()) {
            if (p.trainable) n += p.tensor->size();
        }
        return n;
    }
    /// Trainable scalars over all scalars; integer counts divided at the end.
    double trainable_fraction() {
        return static_cast<double>(trainable_params()) / static_cast<double>(total_params());
    }

    /// FNV-1a over the bytes of every frozen tensor, in canonical order.
    std::uint64_t frozen_checksum() {
        std::uint64_t h = 1469598103934665603ull;
        for (const auto& p : parameters()) {
            if (p.trainable) continue;
            const auto vals = p.tensor->values();
            const auto* bytes = reinterpret_cast<const unsigned char*>(vals.data());
            for (std::size_t i = 0; i < vals.size() * sizeof(S); ++i) {
                h ^= bytes[i];
                h *= 1099511628211ull;
            }
        }
        return h;
    }

    EncoderConfig cfg_;
    TensorT<S> tok_embed; // vocab_size x d
    TensorT<S> pos_embed; // max_seq_len x d
    std::vector<Layer> layers;
    TensorT<S> final_ln_gain, final_ln_bias;
    LoraLinearT<S> final_proj; // d x d, the adapted final hidden projection

private:
    static constexpr S kLnEps = static_cast<S>(1e-5);
    static constexpr S kMaskValue = static_cast<S>(-1e9);

    /// Seed stream ids: fixed function of position so frozen weights do not
    /// depend on which adapters are attached.
    std::uint64_t stream_of(std::size_t layer, std::size_t slot) const {
        if (layer == ~std::size_t{0}) return 1u << 20 | slot; // model-level tensors
        return layer * 16 + slot;
    }
    std::uint64_t adapter_stream_of(std::size_t layer, std::size_t slot) const {
        if (layer == ~std::size_t{0}) return 1u << 21 | slot;
        return 1u << 22 | (layer * 16 + slot);
    }

    TensorT<S> normal_tensor(std::uint64_t stream, std::size_t rows, std::size_t cols,
                             bool trainable) const {
        Rng rng(derive_seed(cfg_.seed, stream));
        std::vector<S> v(rows * cols);
        for (auto& x : v) x = static_cast<S>(rng.normal() * cfg_.init_std);
        return TensorT<S>::from_values(rows, cols, std::move(v), trainable);
    }

    LoraLinearT<S> linear(std::uint64_t stream, std::size_t rows, std::size_t cols,
                          AttachPoint ap) const {
        TensorT<S> base = normal_tensor(stream, rows, cols, false);
        if (!cfg_.attaches(ap)) return make_frozen_linear(std::move(base), ap);
        return init_lora<S>(rows, cols, cfg_.lora_rank,
                            derive_seed(cfg_.seed, stream | 1ull << 40), std::move(base), ap);
    }

    static void push_lora(std::vector<ParamRef>& out, const std::string& name,
                          LoraLinearT<S>& lin) {
        out.push_back({name, &lin.base, false, lin.base_q ? &*lin.base_q : nullptr});
        if (lin.has_adapter()) {
            out.push_back({name + ".lora_down", &lin.w_down, true, nullptr});
            out.push_back({name + ".lora_up", &lin.w_up, true, nullptr});
        }
    }

    TensorT<S> layer_norm(GraphT<S>& g, const TensorT<S>& x, const TensorT<S>& gain,
                          const TensorT<S>& bias) const {
        return g.add_row_bias(g.mul_row(g.layer_norm_rows(x, kLnEps), gain), bias);
    }

    /// T x T additive attention mask: 0 where key j is visible from query i,
    /// -1e9 where j is padding or (causal mode) ahead of i.
    TensorT<S> attention_mask(GraphT<S>& g, const std::vector<std::uint8_t>& mask) const {
        const std::size_t t = mask.size();
        std::vector<S> m(t * t, S(0));
        for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t j = 0; j < t; ++j) {
                const bool visible = mask[j] != 0 && (!cfg_.causal || j <= i);
                if (!visible) m[i * t + j] = kMaskValue;
            }
        }
        return g.constant(t, t, std::move(m));
    }

    TensorT<S> encode_sentence(GraphT<S>& g, const TokenBatch& batch, std::size_t row) const {
        const std::size_t t = batch.t;
        std::vector<int> ids(t);
        std::vector<int> positions(t);
        for (std::size_t j = 0; j < t; ++j) {
            ids[j] = batch.id_at(row, j);
            positions[j] = static_cast<int>(j);
        }
        const auto mask = batch.mask_row(row);

        auto x = g.add(g.gather_rows(tok_embed, ids), g.gather_rows(pos_embed, positions));
        const auto mask_t = attention_mask(g, mask);
        for (const Layer& l : layers) {
            x = g.add(x, attention_block(g, l, x, mask_t));
            x = g.add(x, ffn_block(g, l, x));
        }
        x = layer_norm(g, x, final_ln_gain, final_ln_bias);
        x = lora_forward(g, x, final_proj);
        return g.masked_mean_rows(x, mask);
    }

    TensorT<S> attention_block(GraphT<S>& g, const Layer& l, const TensorT<S>& x,
                               const TensorT<S>& mask_t) const {
        auto h = layer_norm(g, x, l.ln1_gain, l.ln1_bias);
        auto q = lora_forward(g, h, l.wq);
        auto k = lora_forward(g, h, l.wk);
        auto v = lora_forward(g, h, l.wv);
        const std::size_t dh = cfg_.d_model / cfg_.n_heads;
        const S inv_sqrt_dh = S(1) / std::sqrt(static_cast<S>(dh));
        std::vector<TensorT<S>> heads;
        heads.reserve(cfg_.n_heads);
        for (std::size_t hd = 0; hd < cfg_.n_heads; ++hd) {
            const std::size_t c0 = hd * dh, c1 = c0 + dh;
            auto qh = g.slice_cols(q, c0, c1);
            auto kh = g.slice_cols(k, c0, c1);
            auto vh = g.slice_cols(v, c0, c1);
            auto scores = g.add(g.scale(g.matmul_nt(qh, kh), inv_sqrt_dh), mask_t);
            heads.push_back(g.matmul(g.softmax_rows(scores), vh));
        }
        auto ctx = cfg_.n_heads == 1 ? heads[0] : g.concat_cols(heads);
        return lora_forward(g, ctx, l.wo);
    }

    TensorT<S> ffn_block(GraphT<S>& g, const Layer& l, const TensorT<S>& x) const {
        auto h = layer_norm(g, x, l.ln2_gain, l.ln2_bias);
        return lora_forward(g, g.gelu(lora_forward(g, h, l.ffn_in)), l.ffn_out);
    }
};

using SentenceEncoder = SentenceEncoderT<float>;

/// Blockwise-quantize every frozen linear base in place (embeddings and
/// layer-norm parameters stay dense).
inline void quantize_frozen_weights(SentenceEncoderT<float>& model, std::size_t block_size) {
    for (auto* lin : model.lora_layers()) quantize_base(*lin, block_size);
}

} // namespace lacos
