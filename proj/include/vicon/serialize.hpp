#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vicon/tensor.hpp"

namespace vicon {

std::string sha256_hex(const uint8_t* data, size_t len);
std::string sha256_hex(const std::vector<uint8_t>& data);

void write_binary_file(const std::filesystem::path& path, const std::vector<uint8_t>& bytes);
std::vector<uint8_t> read_binary_file(const std::filesystem::path& path);

inline constexpr uint32_t kTensorFileVersion = 1;

/// Versioned container of named float32 tensors with a JSON header.
/// Layout: magic "VICN", u32 version, u64 header length + JSON bytes,
/// u64 tensor count, then per tensor: name, dims, byte length, raw
/// little-endian float32 data.
struct TensorFile {
    nlohmann::json header;
    std::map<std::string, Tensor<float>> tensors;
};

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path);

}  // namespace vicon
