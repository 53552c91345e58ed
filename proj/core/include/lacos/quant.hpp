#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "lacos/tensor.hpp"

namespace lacos {

enum class Codebook : std::uint8_t {
    linear_symmetric = 0, // signed, for weights
    linear_unsigned = 1,  // for nonnegative optimizer state
};

struct QuantConfig {
    std::size_t block_size = 64;
    Codebook codebook = Codebook::linear_symmetric;
};

/// Blockwise 8-bit encoding of a dense matrix. Blocks run over the row-major
/// flattened element order; the last block may be shorter and carries its own
/// absmax. Unsigned-codebook codes occupy the same i8 storage reinterpreted
/// as u8.
struct QuantizedMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t block_size = 0;
    Codebook codebook = Codebook::linear_symmetric;
    std::vector<std::int8_t> codes;  // one per element
    std::vector<float> absmax;       // one per block

    std::size_t size() const { return rows * cols; }
    std::size_t block_count() const {
        return block_size == 0 ? 0 : (size() + block_size - 1) / block_size;
    }
};

QuantizedMatrix quantize_blockwise(const Tensor& w, const QuantConfig& cfg);
Tensor dequantize_blockwise(const QuantizedMatrix& q);

/// Exact byte count of the on-disk encoding: 32-byte header + one code byte
/// per element + one f32 per block.
std::size_t serialized_size(const QuantizedMatrix& q);

void write_quantized(std::ostream& out, const QuantizedMatrix& q);
QuantizedMatrix read_quantized(std::istream& in);

std::vector<std::uint8_t> serialize_quantized(const QuantizedMatrix& q);
QuantizedMatrix deserialize_quantized(const std::uint8_t* data, std::size_t len);

/// matmul(x, dequantize(q)); bitwise-identical to composing the two calls.
Tensor quantized_matmul(Graph& g, const Tensor& x, const QuantizedMatrix& q);

} // namespace lacos
