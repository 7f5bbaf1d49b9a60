#include "adrbc/checkpoint.h"

#include <fstream>
#include <iterator>

namespace adrbc {
namespace io {

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path + " for reading");
  }
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path + " for writing");
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write failed for " + path);
  }
}

}  // namespace io

namespace checkpoint {

void write_mlp_block(io::ByteWriter& out, const nn::MlpParams& params) {
  out.u32(static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& layer : params.layers) {
    out.u32(static_cast<std::uint32_t>(layer.weight.rows()));
    out.u32(static_cast<std::uint32_t>(layer.weight.cols()));
    for (Index r = 0; r < layer.weight.rows(); ++r) {
      for (Index c = 0; c < layer.weight.cols(); ++c) {
        out.f64(layer.weight(r, c));
      }
    }
    for (Index r = 0; r < layer.bias.size(); ++r) {
      out.f64(layer.bias[r]);
    }
    out.u8(static_cast<std::uint8_t>(layer.activation));
  }
}

nn::MlpParams read_mlp_block(io::ByteReader& in) {
  nn::MlpParams params;
  const std::uint32_t count = in.u32("layer count");
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t start = in.offset();
    const std::uint32_t rows = in.u32("layer rows");
    const std::uint32_t cols = in.u32("layer cols");
    if (rows == 0 || cols == 0) {
      throw FormatError("layer with zero dimension", start);
    }
    if (!params.layers.empty() && params.layers.back().weight.rows() != cols) {
      throw FormatError("layer dims do not chain", start);
    }
    nn::Layer layer;
    layer.weight.resize(rows, cols);
    layer.bias.resize(rows);
    for (Index r = 0; r < rows; ++r) {
      for (Index c = 0; c < cols; ++c) {
        layer.weight(r, c) = in.f64("weights");
      }
    }
    for (Index r = 0; r < rows; ++r) {
      layer.bias[r] = in.f64("biases");
    }
    const std::size_t tag_offset = in.offset();
    const std::uint8_t tag = in.u8("activation tag");
    if (tag > 2) {
      throw FormatError("unknown activation tag " + std::to_string(tag), tag_offset);
    }
    layer.activation = static_cast<nn::Activation>(tag);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

std::vector<char> encode_params(const nn::MlpParams& params) {
  io::ByteWriter out;
  out.magic("ADRW");
  out.u32(kParamsVersion);
  write_mlp_block(out, params);
  return out.bytes();
}

nn::MlpParams decode_params(std::vector<char> bytes) {
  io::ByteReader in(std::move(bytes));
  in.expect_magic("ADRW");
  const std::size_t version_offset = in.offset();
  const std::uint32_t version = in.u32("version");
  if (version != kParamsVersion) {
    throw FormatError("unsupported ADRW params version " + std::to_string(version), version_offset);
  }
  nn::MlpParams params = read_mlp_block(in);
  if (!in.at_end()) {
    throw FormatError("trailing bytes after parameter block", in.offset());
  }
  return params;
}

void save_params(const nn::MlpParams& params, const std::string& path) {
  io::write_file(path, encode_params(params));
}

nn::MlpParams load_params(const std::string& path) {
  return decode_params(io::read_file(path));
}

}  // namespace checkpoint
}  // namespace adrbc
