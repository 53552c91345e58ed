#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lacos/errors.hpp"
#include "lacos/quant.hpp"
#include "lacos/rng.hpp"
#include "lacos/tensor.hpp"

namespace lacos {

enum class AttachPoint {
    ffn_in,
    ffn_out,
    final_hidden,
    attn_q,
    attn_v,
};

inline const char* to_string(AttachPoint ap) {
    switch (ap) {
    case AttachPoint::ffn_in: return "ffn_in";
    case AttachPoint::ffn_out: return "ffn_out";
    case AttachPoint::final_hidden: return "final_hidden";
    case AttachPoint::attn_q: return "attn_q";
    case AttachPoint::attn_v: return "attn_v";
    }
    return "?";
}

inline AttachPoint attach_point_from_string(const std::string& s) {
    if (s == "ffn_in") return AttachPoint::ffn_in;
    if (s == "ffn_out") return AttachPoint::ffn_out;
    if (s == "final_hidden") return AttachPoint::final_hidden;
    if (s == "attn_q") return AttachPoint::attn_q;
    if (s == "attn_v") return AttachPoint::attn_v;
    throw ConfigError("unknown attach point '" + s + "'");
}

/// A d x k linear layer with a frozen base weight and an optional trainable
/// low-rank update: y = x*base + scale * (x*w_down)*w_up. The base is kept in
/// dense form for compute; when quantized, base_q holds the storage encoding
/// and base holds its dequantization (frozen weights never change, so the
/// dequantized form is computed once).
template <class S>
struct LoraLinearT {
    TensorT<S> base;                        // d x k, requires_grad = false
    std::optional<QuantizedMatrix> base_q;  // set iff the base is stored quantized
    TensorT<S> w_down;                      // d x r, trainable
    TensorT<S> w_up;                        // r x k, trainable
    std::size_t rank = 0;                   // 0 = no adapter
    S adapter_scale = S(1);
    AttachPoint attach = AttachPoint::ffn_in;

    bool has_adapter() const { return rank > 0; }
    std::size_t d() const { return base.rows(); }
    std::size_t k() const { return base.cols(); }

    std::size_t total_params() const {
        return d() * k() + (has_adapter() ? d() * rank + rank * k() : 0);
    }
    std::size_t trainable_params() const {
        return has_adapter() ? d() * rank + rank * k() : 0;
    }
};

using LoraLinear = LoraLinearT<float>;

template <class S>
LoraLinearT<S> make_frozen_linear(TensorT<S> base, AttachPoint ap) {
    if (base.requires_grad()) throw ConfigError("frozen linear: base must not require gradients");
    LoraLinearT<S> layer;
    layer.base = std::move(base);
    layer.attach = ap;
    return layer;
}

/// True when the configured rank is large enough that the low-rank story is
/// questionable (r > min(d,k)/4); callers surface this as a warning.
inline bool lora_rank_warrants_warning(std::size_t d, std::size_t k, std::size_t r) {
    return 4 * r > std::min(d, k);
}

/// Attach a rank-r adapter over a frozen base. w_down is Gaussian with
/// variance 1/r, w_up starts at zero, so the initial update is exactly zero.
template <class S>
LoraLinearT<S> init_lora(std::size_t d, std::size_t k, std::size_t r, std::uint64_t seed,
                         TensorT<S> base, AttachPoint ap) {
    if (base.rows() != d || base.cols() != k) {
        throw ShapeError("init_lora: base is " + base.shape_str() + ", expected " +
                         std::to_string(d) + "x" + std::to_string(k));
    }
    if (r < 1 || r > std::min(d, k)) {
        throw ConfigError("init_lora: rank " + std::to_string(r) + " out of [1, min(" +
                          std::to_string(d) + ", " + std::to_string(k) + ")]");
    }
    LoraLinearT<S> layer = make_frozen_linear(std::move(base), ap);
    layer.rank = r;
    Rng rng(seed);
    const S stddev = S(1) / std::sqrt(static_cast<S>(r));
    std::vector<S> down(d * r);
    for (auto& v : down) v = static_cast<S>(rng.normal()) * stddev;
    layer.w_down = TensorT<S>::from_values(d, r, std::move(down), true);
    layer.w_up = TensorT<S>::zeros(r, k, true);
    return layer;
}

template <class S>
TensorT<S> lora_forward(GraphT<S>& g, const TensorT<S>& x, const LoraLinearT<S>& layer) {
    if (x.cols() != layer.d()) {
        throw ShapeError("lora_forward: input " + x.shape_str() + " vs base " +
                         layer.base.shape_str());
    }
    TensorT<S> y = g.matmul(x, layer.base);
    if (!layer.has_adapter()) return y;
    TensorT<S> update = g.matmul(g.matmul(x, layer.w_down), layer.w_up);
    if (layer.adapter_scale != S(1)) update = g.scale(update, layer.adapter_scale);
    return g.add(y, update);
}

/// Dense weight-space form of the layer: base + scale * w_down*w_up.
template <class S>
TensorT<S> merge_adapters(const LoraLinearT<S>& layer) {
    std::vector<S> merged(layer.base.values().begin(), layer.base.values().end());
    if (layer.has_adapter()) {
        std::vector<S> update(layer.d() * layer.k(), S(0));
        detail::mm_nn_acc(layer.w_down.values().data(), layer.w_up.values().data(), update.data(),
                          layer.d(), layer.rank, layer.k());
        for (std::size_t i = 0; i < merged.size(); ++i)
            merged[i] += layer.adapter_scale * update[i];
    }
    return TensorT<S>::from_values(layer.d(), layer.k(), std::move(merged));
}

/// Swap the dense base for its blockwise-quantized encoding (the dense tensor
/// is replaced by the dequantized form so compute stays dense).
inline void quantize_base(LoraLinearT<float>& layer, std::size_t block_size) {
    QuantConfig cfg{.block_size = block_size, .codebook = Codebook::linear_symmetric};
    layer.base_q = quantize_blockwise(layer.base, cfg);
    layer.base = dequantize_blockwise(*layer.base_q);
}

} // namespace lacos
