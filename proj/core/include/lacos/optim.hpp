#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "lacos/errors.hpp"
#include "lacos/quant.hpp"
#include "lacos/tensor.hpp"

namespace lacos {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool bias_correction = true;
    bool quantize_state = false;       // store moments blockwise-quantized to 8 bits
    std::size_t state_block_size = 256;
    double grad_clip = 0.0;            // global L2-norm clip; 0 disables
    double weight_decay = 0.0;         // decoupled; 0 disables
};

inline void validate(const AdamConfig& cfg) {
    if (!(cfg.lr > 0)) throw ConfigError("adam: lr must be positive");
    if (cfg.beta1 < 0 || cfg.beta1 >= 1) throw ConfigError("adam: beta1 must be in [0, 1)");
    if (cfg.beta2 < 0 || cfg.beta2 >= 1) throw ConfigError("adam: beta2 must be in [0, 1)");
    if (!(cfg.eps > 0)) throw ConfigError("adam: eps must be positive");
    if (cfg.quantize_state && cfg.state_block_size < 1) {
        throw ConfigError("adam: state_block_size must be >= 1");
    }
    if (cfg.grad_clip < 0) throw ConfigError("adam: grad_clip must be >= 0");
    if (cfg.weight_decay < 0) throw ConfigError("adam: weight_decay must be >= 0");
}

/// Adam over registered trainable tensors. Moment state is either dense (in
/// the parameter's scalar type) or blockwise 8-bit quantized: m on the signed
/// codebook, v on the unsigned one, requantized after every step. Per-element
/// arithmetic runs in double regardless of storage type.
template <class S>
class AdamT {
public:
    struct Slot {
        std::string name;
        TensorT<S> param;
        std::vector<S> m, v;                    // dense storage
        std::optional<QuantizedMatrix> mq, vq;  // quantized storage (float mode only)

        std::vector<S> m_dense() const { return moment_dense(m, mq); }
        std::vector<S> v_dense() const { return moment_dense(v, vq); }

    private:
        static std::vector<S> moment_dense(const std::vector<S>& dense,
                                           const std::optional<QuantizedMatrix>& q) {
            if (!q) return dense;
            auto t = dequantize_blockwise(*q);
            return std::vector<S>(t.values().begin(), t.values().end());
        }
    };

    explicit AdamT(AdamConfig cfg) : cfg_(cfg) {
        validate(cfg_);
        if (cfg_.quantize_state && !std::is_same_v<S, float>) {
            throw ConfigError("adam: quantized state requires float parameters");
        }
    }

    const AdamConfig& config() const { return cfg_; }
    std::uint64_t step_count() const { return t_; }
    void set_step_count(std::uint64_t t) { t_ = t; }

    void add_param(const std::string& name, TensorT<S> param) {
        if (!param.requires_grad()) {
            throw ConfigError("adam: parameter '" + name + "' is frozen");
        }
        for (const auto& s : slots_) {
            if (s.name == name) throw ConfigError("adam: duplicate parameter '" + name + "'");
        }
        Slot slot;
        slot.name = name;
        slot.param = std::move(param);
        const std::size_t sz = slot.param.size();
        if (cfg_.quantize_state) {
            slot.mq = quantize_zero_state(slot.param, Codebook::linear_symmetric);
            slot.vq = quantize_zero_state(slot.param, Codebook::linear_unsigned);
        } else {
            slot.m.assign(sz, S(0));
            slot.v.assign(sz, S(0));
        }
        slots_.push_back(std::move(slot));
    }

    std::size_t slot_count() const { return slots_.size(); }
    const Slot& slot(std::size_t i) const { return slots_[i]; }
    Slot& slot(std::size_t i) { return slots_[i]; }

    Slot* find_slot(const std::string& name) {
        for (auto& s : slots_) {
            if (s.name == name) return &s;
        }
        return nullptr;
    }

    void zero_grad() {
        for (auto& s : slots_) s.param.zero_grad();
    }

    /// One Adam update over every registered parameter. Rejects the whole
    /// step (no partial update, t unchanged) if any gradient is non-finite.
    void step() {
        double sq_norm = 0.0;
        for (const auto& s : slots_) {
            for (const S gs : s.param.grad()) {
                const double gv = static_cast<double>(gs);
                if (!std::isfinite(gv)) {
                    throw NumericError("adam: non-finite gradient in '" + s.name +
                                       "', step rejected");
                }
                sq_norm += gv * gv;
            }
        }
        double clip_factor = 1.0;
        if (cfg_.grad_clip > 0.0) {
            const double norm = std::sqrt(sq_norm);
            if (norm > cfg_.grad_clip) clip_factor = cfg_.grad_clip / norm;
        }

        t_ += 1;
        const double bc1 = cfg_.bias_correction ? 1.0 - std::pow(cfg_.beta1, double(t_)) : 1.0;
        const double bc2 = cfg_.bias_correction ? 1.0 - std::pow(cfg_.beta2, double(t_)) : 1.0;

        for (auto& s : slots_) {
            std::vector<S> m = s.m_dense();
            std::vector<S> v = s.v_dense();
            auto p = s.param.mutable_values();
            const auto grad = s.param.grad();
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double g = static_cast<double>(grad[i]) * clip_factor;
                const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * g;
                const double vi =
                    cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * g * g;
                m[i] = static_cast<S>(mi);
                v[i] = static_cast<S>(vi);
                const double mhat = static_cast<double>(m[i]) / bc1;
                const double vhat = static_cast<double>(v[i]) / bc2;
                double pi = static_cast<double>(p[i]);
                pi -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                if (cfg_.weight_decay > 0.0) pi -= cfg_.lr * cfg_.weight_decay * pi;
                p[i] = static_cast<S>(pi);
            }
            if (cfg_.quantize_state) {
                store_quantized(s, m, v);
            } else {
                s.m = std::move(m);
                s.v = std::move(v);
            }
        }
    }

private:
    AdamConfig cfg_;
    std::uint64_t t_ = 0;
    std::vector<Slot> slots_;

    QuantizedMatrix quantize_zero_state(const TensorT<S>& param, Codebook cb) const {
        auto zero = Tensor::zeros(param.rows(), param.cols());
        return quantize_blockwise(zero, {.block_size = cfg_.state_block_size, .codebook = cb});
    }

    void store_quantized(Slot& s, const std::vector<S>& m, const std::vector<S>& v) {
        if constexpr (std::is_same_v<S, float>) {
            auto mt = Tensor::from_values(s.param.rows(), s.param.cols(), m);
            auto vt = Tensor::from_values(s.param.rows(), s.param.cols(), v);
            s.mq = quantize_blockwise(
                mt, {.block_size = cfg_.state_block_size, .codebook = Codebook::linear_symmetric});
            s.vq = quantize_blockwise(
                vt, {.block_size = cfg_.state_block_size, .codebook = Codebook::linear_unsigned});
        }
    }
};

using Adam = AdamT<float>;

} // namespace lacos
