// File: checkpoint.h
// Description: "ADRW" parameter container
//
// Layout (little-endian):
//   "ADRW" | version u32 = 1 | layer count u32 |
//   per layer: rows u32, cols u32, weights f64[rows*cols] row-major,
//              biases f64[rows], activation tag u8

#pragma once

#include <string>

#include "adrbc/binary_io.h"
#include "adrbc/nn.h"

namespace adrbc::checkpoint {

inline constexpr char kMagic[] = "ADRW";
inline constexpr std::uint32_t kParamsVersion = 1;
inline constexpr std::uint32_t kEstimatorVersion = 2;

/// Layer-count prefixed block shared by the params and estimator containers.
void write_mlp_block(io::ByteWriter& out, const nn::MlpParams& params);
nn::MlpParams read_mlp_block(io::ByteReader& in);

std::vector<char> encode_params(const nn::MlpParams& params);
nn::MlpParams decode_params(std::vector<char> bytes);

void save_params(const nn::MlpParams& params, const std::string& path);
nn::MlpParams load_params(const std::string& path);

}  // namespace adrbc::checkpoint
