#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lacos/encoder.hpp"
#include "lacos/optim.hpp"
#include "lacos/quant.hpp"
#include "lacos/vocab.hpp"

namespace lacos {

/// One named tensor: dense f32 values or a q8 block-quantized payload.
struct TensorEntry {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    bool trainable = false;
    std::vector<float> f32;            // set when dtype is "f32"
    std::optional<QuantizedMatrix> q8; // set when dtype is "q8"

    const char* dtype() const { return q8 ? "q8" : "f32"; }
    std::size_t payload_bytes() const;
};

/// In-memory form of the on-disk container: magic "LACS", version u32 LE,
/// header-length u32 LE, JSON header (config, vocabulary, tensor manifest
/// with dtype/shape/offset/length), then the raw tensor payloads.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    EncoderConfig config;
    std::vector<std::string> vocab_tokens; // token with id i+2 at position i
    bool adapter_only = false;
    /// Set on adapter-only snapshots of a model whose frozen bases were
    /// block-quantized: loading re-derives the bases from config.seed and
    /// re-applies quantization at this block size, so the restored model
    /// computes with exactly the weights the adapters were trained against.
    std::optional<std::uint32_t> base_quant_block;
    std::vector<TensorEntry> tensors;

    const TensorEntry* find(const std::string& name) const;
    bool has_quantized_weights() const;
    bool has_optimizer_state() const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Snapshot the model and vocabulary. adapter_only keeps just the trainable
/// tensors; the frozen base is reproducible from config.seed alone.
Checkpoint checkpoint_from_model(SentenceEncoder& model, const Vocabulary& vocab,
                                 bool adapter_only);

struct LoadedModel {
    SentenceEncoder model;
    Vocabulary vocab;
};

/// Rebuild a model from its stored config (fresh seeded weights), then overlay
/// every stored tensor; q8 bases are dequantized for compute and kept as the
/// storage form. Missing or unknown tensors raise CheckpointError.
LoadedModel model_from_checkpoint(const Checkpoint& ckpt);

/// Adam moments and step count as "opt.m.<param>", "opt.v.<param>", "opt.t".
void append_optimizer_state(Checkpoint& ckpt, const Adam& opt);

/// Restores state saved by append_optimizer_state into a configured optimizer
/// with identical slots. Returns false when the checkpoint carries no
/// optimizer state; throws CheckpointError on partial or mismatched state.
bool restore_optimizer_state(const Checkpoint& ckpt, Adam& opt);

} // namespace lacos
