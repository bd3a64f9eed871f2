#pragma once

#include "lota/sparsity.hpp"
#include "lota/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace lota {

// One parameter group of a sparse adapter. Stored indices are gap coded, one
// byte per index in the common case:
//   - the first gap is the first index itself, later gaps are index - previous
//   - bytes 0x00..0xFE are literal gap values
//   - 0xFF adds 255 to the pending gap and continues with the next byte
struct AdapterRecord {
    std::string name;
    uint64_t numel = 0;          // n
    uint64_t stored = 0;         // c
    std::vector<uint8_t> gaps;
    std::vector<float> values;   // c values in index order

    bool operator==(const AdapterRecord &) const = default;
};

struct SparseAdapter {
    MapDigest base_digest;
    std::vector<AdapterRecord> records;  // sorted by name
    double declared_sparsity = 0.0;

    uint64_t total_elements() const;
    uint64_t stored_count() const;

    bool operator==(const SparseAdapter &) const = default;
};

inline constexpr uint16_t kAdapterVersion = 1;

void append_gap(std::vector<uint8_t> & out, uint64_t gap);

// Expands a record's gap stream, validating that exactly `stored` indices come
// out, strictly increasing and below `numel`.
std::vector<uint64_t> decode_indices(const AdapterRecord & record);

// Stores every exactly-nonzero element; zeros are never written.
SparseAdapter encode(const TaskVector & tv);

// Reconstructs flat tensors of shape [n].
TaskVector decode(const SparseAdapter & adapter);

// Reconstructs tensors with the shapes of `reference`, which must carry the
// same names and element counts.
TaskVector decode(const SparseAdapter & adapter, const ParameterMap & reference);

// base + decode(adapter), touching only stored positions.
ParameterMap apply_adapter(const ParameterMap & base, const SparseAdapter & adapter, bool check_digest);

struct CompressionReport {
    uint64_t total_elements = 0;
    uint64_t stored_count = 0;
    uint64_t encoded_bytes = 0;
    double ideal_ratio = std::numeric_limits<double>::infinity();  // 32n / 40c
    double measured_ratio = 0.0;                                     // 32n / encoded bits
    uint64_t payload_bits = 0;   // value bits + gap-stream bits
    uint64_t overhead_bits = 0;  // everything else in the file
};

CompressionReport compression_report(const SparseAdapter & adapter);

// File layout, all little-endian, no padding:
//   "LTA1" | u16 version | 32-byte base digest | u32 tensor count
//   per tensor: u16 name length | name | u64 n | u64 c | u64 gap bytes | gaps | c x f32
std::vector<uint8_t> serialize_adapter(const SparseAdapter & adapter);
SparseAdapter parse_adapter(std::span<const uint8_t> bytes);

bool is_adapter_file(std::span<const uint8_t> bytes);

void save_adapter(const SparseAdapter & adapter, const std::filesystem::path & path);
SparseAdapter load_adapter(const std::filesystem::path & path);

} // namespace lota
