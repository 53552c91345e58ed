#include "lacos/quant.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include "lacos/errors.hpp"

namespace lacos {

namespace {

constexpr char kMagic[4] = {'L', 'Q', '8', '\0'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderSize = 32;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

float get_f32(const std::uint8_t* p) {
    const std::uint32_t bits = get_u32(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

float round_half_away_from_zero(float x) {
    return std::round(x); // std::round ties away from zero by definition
}

} // namespace

QuantizedMatrix quantize_blockwise(const Tensor& w, const QuantConfig& cfg) {
    if (cfg.block_size < 1) throw ConfigError("quantize: block_size must be >= 1");
    const std::size_t total = w.size();
    const std::size_t bsz = cfg.block_size;
    const std::size_t nblocks = (total + bsz - 1) / bsz;

    QuantizedMatrix q;
    q.rows = w.rows();
    q.cols = w.cols();
    q.block_size = bsz;
    q.codebook = cfg.codebook;
    q.codes.assign(total, 0);
    q.absmax.assign(nblocks, 0.0f);

    const float* x = w.values().data();
    for (std::size_t b = 0; b < nblocks; ++b) {
        const std::size_t lo = b * bsz;
        const std::size_t hi = std::min(lo + bsz, total);
        float amax = 0.0f;
        for (std::size_t i = lo; i < hi; ++i) {
            const float v = x[i];
            if (cfg.codebook == Codebook::linear_unsigned && v < 0.0f) {
                throw NumericError("quantize: negative value in unsigned codebook at element " +
                                   std::to_string(i));
            }
            amax = std::max(amax, std::fabs(v));
        }
        q.absmax[b] = amax;
        if (amax == 0.0f) continue; // codes already zero
        if (cfg.codebook == Codebook::linear_symmetric) {
            for (std::size_t i = lo; i < hi; ++i) {
                float c = round_half_away_from_zero(x[i] / amax * 127.0f);
                c = std::min(std::max(c, -127.0f), 127.0f);
                q.codes[i] = static_cast<std::int8_t>(c);
            }
        } else {
            for (std::size_t i = lo; i < hi; ++i) {
                float c = std::round(x[i] / amax * 255.0f);
                c = std::min(std::max(c, 0.0f), 255.0f);
                const auto u = static_cast<std::uint8_t>(c);
                q.codes[i] = static_cast<std::int8_t>(u);
            }
        }
    }
    return q;
}

Tensor dequantize_blockwise(const QuantizedMatrix& q) {
    const std::size_t total = q.size();
    if (q.codes.size() != total) throw ShapeError("dequantize: codes length mismatch");
    if (q.block_size < 1) throw ShapeError("dequantize: block_size must be >= 1");
    if (q.absmax.size() != q.block_count()) throw ShapeError("dequantize: absmax length mismatch");
    std::vector<float> out(total);
    const std::size_t bsz = q.block_size;
    if (q.codebook == Codebook::linear_symmetric) {
        for (std::size_t i = 0; i < total; ++i) {
            out[i] = static_cast<float>(q.codes[i]) / 127.0f * q.absmax[i / bsz];
        }
    } else {
        for (std::size_t i = 0; i < total; ++i) {
            const auto u = static_cast<std::uint8_t>(q.codes[i]);
            out[i] = static_cast<float>(u) / 255.0f * q.absmax[i / bsz];
        }
    }
    return Tensor::from_values(q.rows, q.cols, std::move(out));
}

std::size_t serialized_size(const QuantizedMatrix& q) {
    return kHeaderSize + q.size() + 4 * q.block_count();
}

std::vector<std::uint8_t> serialize_quantized(const QuantizedMatrix& q) {
    std::vector<std::uint8_t> out;
    out.reserve(serialized_size(q));
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(q.rows));
    put_u32(out, static_cast<std::uint32_t>(q.cols));
    put_u32(out, static_cast<std::uint32_t>(q.block_size));
    out.push_back(static_cast<std::uint8_t>(q.codebook));
    out.insert(out.end(), 11, 0);
    for (const std::int8_t c : q.codes) out.push_back(static_cast<std::uint8_t>(c));
    for (const float a : q.absmax) put_f32(out, a);
    return out;
}

QuantizedMatrix deserialize_quantized(const std::uint8_t* data, std::size_t len) {
    if (len < kHeaderSize) throw CheckpointError("quantized blob: truncated header");
    if (std::memcmp(data, kMagic, 4) != 0) throw CheckpointError("quantized blob: bad magic");
    const std::uint32_t version = get_u32(data + 4);
    if (version != kVersion) {
        throw CheckpointError("quantized blob: unsupported version " + std::to_string(version));
    }
    QuantizedMatrix q;
    q.rows = get_u32(data + 8);
    q.cols = get_u32(data + 12);
    q.block_size = get_u32(data + 16);
    const std::uint8_t cb = data[20];
    if (cb > 1) throw CheckpointError("quantized blob: unknown codebook tag");
    q.codebook = static_cast<Codebook>(cb);
    if (q.block_size < 1) throw CheckpointError("quantized blob: zero block size");
    const std::size_t total = q.size();
    const std::size_t nblocks = q.block_count();
    if (len != kHeaderSize + total + 4 * nblocks) {
        throw CheckpointError("quantized blob: length " + std::to_string(len) + ", expected " +
                              std::to_string(kHeaderSize + total + 4 * nblocks));
    }
    q.codes.resize(total);
    std::memcpy(q.codes.data(), data + kHeaderSize, total);
    q.absmax.resize(nblocks);
    for (std::size_t b = 0; b < nblocks; ++b) {
        q.absmax[b] = get_f32(data + kHeaderSize + total + 4 * b);
        if (!(q.absmax[b] >= 0.0f)) throw CheckpointError("quantized blob: negative absmax");
    }
    return q;
}

void write_quantized(std::ostream& out, const QuantizedMatrix& q) {
    const auto bytes = serialize_quantized(q);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("quantized blob: write failed");
}

QuantizedMatrix read_quantized(std::istream& in) {
    std::uint8_t header[kHeaderSize];
    in.read(reinterpret_cast<char*>(header), kHeaderSize);
    if (in.gcount() != static_cast<std::streamsize>(kHeaderSize)) {
        throw CheckpointError("quantized blob: truncated header");
    }
    const std::size_t rows = get_u32(header + 8);
    const std::size_t cols = get_u32(header + 12);
    const std::size_t bsz = get_u32(header + 16);
    if (bsz < 1) throw CheckpointError("quantized blob: zero block size");
    const std::size_t total = rows * cols;
    const std::size_t nblocks = (total + bsz - 1) / bsz;
    std::vector<std::uint8_t> rest(total + 4 * nblocks);
    in.read(reinterpret_cast<char*>(rest.data()), static_cast<std::streamsize>(rest.size()));
    if (in.gcount() != static_cast<std::streamsize>(rest.size())) {
        throw CheckpointError("quantized blob: truncated payload");
    }
    std::vector<std::uint8_t> whole(header, header + kHeaderSize);
    whole.insert(whole.end(), rest.begin(), rest.end());
    return deserialize_quantized(whole.data(), whole.size());
}

Tensor quantized_matmul(Graph& g, const Tensor& x, const QuantizedMatrix& q) {
    if (x.cols() != q.rows) {
        throw ShapeError("quantized_matmul: inner dimensions mismatch: " + x.shape_str() + " vs " +
                         std::to_string(q.rows) + "x" + std::to_string(q.cols));
    }
    return g.matmul(x, dequantize_blockwise(q));
}

} // namespace lacos
