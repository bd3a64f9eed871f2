#pragma once

#include "lota/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace lota {

// Tensor container layout:
//   u64 LE header length H
//   H bytes of JSON: {"<name>":{"data_offsets":[b,e],"dtype":"F32","shape":[...]},...}
//     keys sorted, no whitespace, offsets relative to the payload
//   payload: tensors concatenated in name order, little-endian, no padding

enum class DType { F32, U8 };

const char * dtype_name(DType dtype);
size_t dtype_size(DType dtype);

struct RawTensor {
    DType dtype = DType::F32;
    Shape shape;
    std::vector<uint8_t> bytes;
};

using RawTensorMap = std::map<std::string, RawTensor>;

std::vector<uint8_t> serialize_container(const RawTensorMap & tensors);

// Validates header length, JSON structure, duplicate names, dtype, offsets
// (contiguous, in name order, matching shape) and total payload size.
RawTensorMap parse_container(std::span<const uint8_t> bytes);

std::vector<uint8_t> read_file(const std::filesystem::path & path);
void write_file(const std::filesystem::path & path, std::span<const uint8_t> bytes);
void write_text_file(const std::filesystem::path & path, const std::string & text);

std::vector<uint8_t> serialize_checkpoint(const ParameterMap & pm);

// Rejects non-F32 tensors and non-finite values.
ParameterMap parse_checkpoint(std::span<const uint8_t> bytes);

void save_checkpoint(const ParameterMap & pm, const std::filesystem::path & path);
ParameterMap load_checkpoint(const std::filesystem::path & path);

} // namespace lota
