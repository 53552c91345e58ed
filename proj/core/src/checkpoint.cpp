#include "lacos/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <span>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "lacos/errors.hpp"
#include "lacos/lora.hpp"

namespace lacos {

namespace {

using Json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'L', 'A', 'C', 'S'};
constexpr const char* kOptPrefix = "opt.";

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw CheckpointError(std::string("checkpoint: truncated ") + what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

Json config_to_json(const EncoderConfig& c) {
    Json j;
    j["vocab_size"] = c.vocab_size;
    j["d_model"] = c.d_model;
    j["n_layers"] = c.n_layers;
    j["n_heads"] = c.n_heads;
    j["d_ff"] = c.resolved_d_ff();
    j["max_seq_len"] = c.max_seq_len;
    j["lora_rank"] = c.lora_rank;
    Json attach = Json::array();
    for (const auto ap : c.lora_attach) attach.push_back(to_string(ap));
    j["lora_attach"] = attach;
    j["seed"] = c.seed;
    j["causal"] = c.causal;
    j["train_embeddings"] = c.train_embeddings;
    j["init_std"] = c.init_std;
    return j;
}

EncoderConfig config_from_json(const Json& j) {
    EncoderConfig c;
    try {
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.d_model = j.at("d_model").get<std::size_t>();
        c.n_layers = j.at("n_layers").get<std::size_t>();
        c.n_heads = j.at("n_heads").get<std::size_t>();
        c.d_ff = j.at("d_ff").get<std::size_t>();
        c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
        c.lora_rank = j.at("lora_rank").get<std::size_t>();
        c.lora_attach.clear();
        for (const auto& ap : j.at("lora_attach")) {
            c.lora_attach.push_back(attach_point_from_string(ap.get<std::string>()));
        }
        c.seed = j.at("seed").get<std::uint64_t>();
        c.causal = j.at("causal").get<bool>();
        c.train_embeddings = j.at("train_embeddings").get<bool>();
        c.init_std = j.at("init_std").get<double>();
    } catch (const Json::exception& e) {
        throw CheckpointError(std::string("checkpoint: bad config field: ") + e.what());
    }
    return c;
}

/// The canonical name of every adapted linear, in lora_layers() order.
std::vector<std::string> lora_layer_names(const EncoderConfig& cfg) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
        const std::string p = "layer" + std::to_string(i) + ".";
        for (const char* leaf : {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "ffn.w_in",
                                 "ffn.w_out"}) {
            names.push_back(p + leaf);
        }
    }
    names.push_back("final.proj");
    return names;
}

TensorEntry entry_from_values(std::string name, std::size_t rows, std::size_t cols,
                              bool trainable, std::span<const float> values) {
    TensorEntry e;
    e.name = std::move(name);
    e.rows = rows;
    e.cols = cols;
    e.trainable = trainable;
    e.f32.assign(values.begin(), values.end());
    return e;
}

} // namespace

std::size_t TensorEntry::payload_bytes() const {
    return q8 ? serialized_size(*q8) : f32.size() * sizeof(float);
}

const TensorEntry* Checkpoint::find(const std::string& name) const {
    for (const auto& e : tensors) {
        if (e.name == name) return &e;
    }
    return nullptr;
}

bool Checkpoint::has_quantized_weights() const {
    return std::any_of(tensors.begin(), tensors.end(), [](const TensorEntry& e) {
        return e.q8.has_value() && e.name.rfind(kOptPrefix, 0) != 0;
    });
}

bool Checkpoint::has_optimizer_state() const { return find("opt.t") != nullptr; }

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    Json manifest;
    std::size_t offset = 0;
    for (const auto& e : ckpt.tensors) {
        Json m;
        m["dtype"] = e.dtype();
        m["shape"] = {e.rows, e.cols};
        m["offset"] = offset;
        m["length"] = e.payload_bytes();
        m["trainable"] = e.trainable;
        manifest[e.name] = m;
        offset += e.payload_bytes();
    }
    Json header;
    header["config"] = config_to_json(ckpt.config);
    header["vocab"] = ckpt.vocab_tokens;
    header["adapter_only"] = ckpt.adapter_only;
    if (ckpt.base_quant_block) header["base_quant_block"] = *ckpt.base_quant_block;
    header["tensors"] = manifest;
    const std::string header_text = header.dump();

    out.write(kMagic, 4);
    put_u32(out, Checkpoint::kVersion);
    put_u32(out, static_cast<std::uint32_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& e : ckpt.tensors) {
        if (e.q8) {
            write_quantized(out, *e.q8);
        } else {
            out.write(reinterpret_cast<const char*>(e.f32.data()),
                      static_cast<std::streamsize>(e.f32.size() * sizeof(float)));
        }
    }
    if (!out) throw CheckpointError("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw CheckpointError("checkpoint: bad magic bytes (not a LACS file)");
    }
    const std::uint32_t version = get_u32(in, "version");
    if (version != Checkpoint::kVersion) {
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint32_t header_len = get_u32(in, "header length");
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), header_len);
    if (!in) throw CheckpointError("checkpoint: truncated header");
    const auto header = Json::parse(header_text, nullptr, false);
    if (header.is_discarded() || !header.is_object()) {
        throw CheckpointError("checkpoint: header is not valid JSON");
    }

    std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Checkpoint ckpt;
    try {
        ckpt.config = config_from_json(header.at("config"));
        ckpt.vocab_tokens = header.at("vocab").get<std::vector<std::string>>();
        ckpt.adapter_only = header.at("adapter_only").get<bool>();
        if (header.contains("base_quant_block")) {
            ckpt.base_quant_block = header.at("base_quant_block").get<std::uint32_t>();
        }
        for (const auto& [name, m] : header.at("tensors").items()) {
            TensorEntry e;
            e.name = name;
            const auto& shape = m.at("shape");
            if (!shape.is_array() || shape.size() != 2) {
                throw CheckpointError("checkpoint: tensor '" + name + "' has a non-2d shape");
            }
            e.rows = shape[0].get<std::size_t>();
            e.cols = shape[1].get<std::size_t>();
            e.trainable = m.at("trainable").get<bool>();
            const auto offset = m.at("offset").get<std::size_t>();
            const auto length = m.at("length").get<std::size_t>();
            if (offset + length > payload.size()) {
                throw CheckpointError("checkpoint: tensor '" + name +
                                      "' extends past the payload end");
            }
            const auto* bytes = reinterpret_cast<const std::uint8_t*>(payload.data()) + offset;
            const std::string dtype = m.at("dtype").get<std::string>();
            if (dtype == "q8") {
                e.q8 = deserialize_quantized(bytes, length);
                if (e.q8->rows != e.rows || e.q8->cols != e.cols) {
                    throw CheckpointError("checkpoint: tensor '" + name +
                                          "' q8 payload shape mismatch");
                }
            } else if (dtype == "f32") {
                if (length != e.rows * e.cols * sizeof(float)) {
                    throw CheckpointError("checkpoint: tensor '" + name +
                                          "' f32 payload length mismatch");
                }
                e.f32.resize(e.rows * e.cols);
                std::memcpy(e.f32.data(), bytes, length);
            } else {
                throw CheckpointError("checkpoint: tensor '" + name + "' has unknown dtype '" +
                                      dtype + "'");
            }
            ckpt.tensors.push_back(std::move(e));
        }
    } catch (const Json::exception& e) {
        throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
    }
    return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("checkpoint: cannot open '" + path + "' for writing");
    write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("checkpoint: cannot open '" + path + "'");
    return read_checkpoint(in);
}

Checkpoint checkpoint_from_model(SentenceEncoder& model, const Vocabulary& vocab,
                                 bool adapter_only) {
    Checkpoint ckpt;
    ckpt.config = model.config();
    ckpt.vocab_tokens = vocab.tokens;
    ckpt.adapter_only = adapter_only;
    if (adapter_only) {
        for (const auto* lin : model.lora_layers()) {
            if (!lin->base_q) continue;
            const auto block = static_cast<std::uint32_t>(lin->base_q->block_size);
            if (ckpt.base_quant_block && *ckpt.base_quant_block != block) {
                throw CheckpointError(
                    "checkpoint: adapter-only snapshot needs a uniform base block size, got " +
                    std::to_string(*ckpt.base_quant_block) + " and " + std::to_string(block));
            }
            ckpt.base_quant_block = block;
        }
    }
    for (const auto& p : model.parameters()) {
        if (adapter_only && !p.trainable) continue;
        if (p.quantized) {
            TensorEntry e;
            e.name = p.name;
            e.rows = p.tensor->rows();
            e.cols = p.tensor->cols();
            e.trainable = p.trainable;
            e.q8 = *p.quantized;
            ckpt.tensors.push_back(std::move(e));
        } else {
            ckpt.tensors.push_back(entry_from_values(p.name, p.tensor->rows(), p.tensor->cols(),
                                                     p.trainable, p.tensor->values()));
        }
    }
    return ckpt;
}

LoadedModel model_from_checkpoint(const Checkpoint& ckpt) {
    LoadedModel loaded{SentenceEncoder(ckpt.config), vocabulary_from_tokens(ckpt.vocab_tokens)};
    SentenceEncoder& model = loaded.model;
    if (ckpt.adapter_only && ckpt.base_quant_block) {
        quantize_frozen_weights(model, *ckpt.base_quant_block);
    }

    std::unordered_map<std::string, SentenceEncoder::ParamRef> params;
    for (const auto& p : model.parameters()) params.emplace(p.name, p);
    std::unordered_map<std::string, LoraLinearT<float>*> lora_bases;
    {
        const auto names = lora_layer_names(model.config());
        const auto lins = model.lora_layers();
        for (std::size_t i = 0; i < names.size(); ++i) lora_bases.emplace(names[i], lins[i]);
    }

    std::size_t overlaid = 0;
    for (const auto& e : ckpt.tensors) {
        if (e.name.rfind(kOptPrefix, 0) == 0) continue; // optimizer state, restored separately
        const auto it = params.find(e.name);
        if (it == params.end()) {
            throw CheckpointError("checkpoint: tensor '" + e.name + "' has no place in a model");
        }
        TensorT<float>* t = it->second.tensor;
        if (t->rows() != e.rows || t->cols() != e.cols) {
            throw CheckpointError("checkpoint: tensor '" + e.name + "' is " +
                                  std::to_string(e.rows) + "x" + std::to_string(e.cols) +
                                  " but the model expects " + t->shape_str());
        }
        if (e.q8) {
            const auto base_it = lora_bases.find(e.name);
            if (base_it == lora_bases.end()) {
                throw CheckpointError("checkpoint: tensor '" + e.name +
                                      "' is q8 but is not an adapted base weight");
            }
            const Tensor dense = dequantize_blockwise(*e.q8);
            auto dst = t->mutable_values();
            const auto src = dense.values();
            std::copy(src.begin(), src.end(), dst.begin());
            base_it->second->base_q = *e.q8;
        } else {
            auto dst = t->mutable_values();
            if (dst.size() != e.f32.size()) {
                throw CheckpointError("checkpoint: tensor '" + e.name + "' size mismatch");
            }
            std::copy(e.f32.begin(), e.f32.end(), dst.begin());
        }
        ++overlaid;
    }

    // a checkpoint must fully cover what it claims to carry
    for (const auto& [name, p] : params) {
        const bool required = ckpt.adapter_only ? p.trainable : true;
        if (required && ckpt.find(name) == nullptr) {
            throw CheckpointError("checkpoint: missing tensor '" + name + "'");
        }
    }
    (void)overlaid;
    return loaded;
}

void append_optimizer_state(Checkpoint& ckpt, const Adam& opt) {
    for (std::size_t i = 0; i < opt.slot_count(); ++i) {
        const auto& slot = opt.slot(i);
        const std::size_t rows = slot.param.rows(), cols = slot.param.cols();
        if (slot.mq) {
            TensorEntry m;
            m.name = "opt.m." + slot.name;
            m.rows = rows;
            m.cols = cols;
            m.q8 = *slot.mq;
            ckpt.tensors.push_back(std::move(m));
            TensorEntry v;
            v.name = "opt.v." + slot.name;
            v.rows = rows;
            v.cols = cols;
            v.q8 = *slot.vq;
            ckpt.tensors.push_back(std::move(v));
        } else {
            ckpt.tensors.push_back(entry_from_values("opt.m." + slot.name, rows, cols, false,
                                                     {slot.m.data(), slot.m.size()}));
            ckpt.tensors.push_back(entry_from_values("opt.v." + slot.name, rows, cols, false,
                                                     {slot.v.data(), slot.v.size()}));
        }
    }
    const float t = static_cast<float>(opt.step_count());
    ckpt.tensors.push_back(entry_from_values("opt.t", 1, 1, false, {&t, 1}));
}

bool restore_optimizer_state(const Checkpoint& ckpt, Adam& opt) {
    const TensorEntry* t_entry = ckpt.find("opt.t");
    if (t_entry == nullptr) return false;
    if (t_entry->f32.size() != 1) throw CheckpointError("checkpoint: malformed opt.t");

    for (std::size_t i = 0; i < opt.slot_count(); ++i) {
        auto& slot = opt.slot(i);
        const TensorEntry* m = ckpt.find("opt.m." + slot.name);
        const TensorEntry* v = ckpt.find("opt.v." + slot.name);
        if (m == nullptr || v == nullptr) {
            throw CheckpointError("checkpoint: optimizer state for '" + slot.name +
                                  "' is missing");
        }
        const bool want_q8 = slot.mq.has_value();
        if (want_q8 != m->q8.has_value() || want_q8 != v->q8.has_value()) {
            throw CheckpointError("checkpoint: optimizer state mode mismatch for '" + slot.name +
                                  "'");
        }
        if (m->rows != slot.param.rows() || m->cols != slot.param.cols() ||
            v->rows != slot.param.rows() || v->cols != slot.param.cols()) {
            throw CheckpointError("checkpoint: optimizer state shape mismatch for '" + slot.name +
                                  "'");
        }
        if (want_q8) {
            slot.mq = *m->q8;
            slot.vq = *v->q8;
        } else {
            slot.m = m->f32;
            slot.v = v->f32;
        }
    }
    opt.set_step_count(static_cast<std::uint64_t>(t_entry->f32[0]));
    return true;
}

} // namespace lacos
