#pragma once

#include "lota/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lota {

// Elementwise delta between a fine-tuned and a base model.
struct TaskVector {
    ParameterMap delta;
    MapDigest base_digest;

    // Number of exactly-nonzero elements.
    size_t nnz() const;
};

struct MaskTensor {
    Shape shape;
    std::vector<uint8_t> keep;  // 0 or 1

    bool operator==(const MaskTensor &) const = default;
};

// Per-parameter boolean selection; true marks a trainable / kept coordinate.
struct SparsityMask {
    std::map<std::string, MaskTensor> entries;
    double declared_sparsity = 0.0;

    size_t total_size() const;
    size_t kept_count() const;
    double measured_sparsity() const;

    // Equality of the kept sets (declared_sparsity is ignored).
    bool same_selection(const SparsityMask & other) const;

    static SparsityMask all(const ParameterMap & keyspace, bool keep);
};

struct OverlapStats {
    size_t intersection_count = 0;
    size_t union_count = 0;
    double jaccard = 1.0;
};

// k = round((1 - s) * n), rounding half up.
size_t kept_count_for(double sparsity, size_t total);

bool aligned(const SparsityMask & mask, const ParameterMap & keyspace);
bool aligned(const SparsityMask & a, const SparsityMask & b);

TaskVector compute_task_vector(const ParameterMap & finetuned, const ParameterMap & base);

// Keeps the k = round((1 - s) * n) largest-magnitude entries over the global
// concatenation of all tensors (name order, then flat index). Equal
// magnitudes are resolved in favour of the earlier position in that order.
SparsityMask sparsify(const TaskVector & tv, double sparsity);

// As sparsify, but ranks only positions selected by `allowed`; k is still
// computed against the full element count. Throws ValidationError tagged
// "insufficient_positions" when k exceeds the allowed count.
SparsityMask sparsify_within(const TaskVector & tv, double sparsity, const SparsityMask & allowed);

// Top-k by magnitude with the same ordering rules as sparsify. The returned
// mask's declared sparsity is the measured one.
SparsityMask top_k_mask(const ParameterMap & values, size_t k, const SparsityMask * allowed = nullptr);

TaskVector apply_mask(const TaskVector & tv, const SparsityMask & mask);
ParameterMap apply_mask(const ParameterMap & values, const SparsityMask & mask);

SparsityMask mask_union(const SparsityMask & a, const SparsityMask & b);
SparsityMask mask_intersection(const SparsityMask & a, const SparsityMask & b);
SparsityMask mask_complement(const SparsityMask & a);

OverlapStats overlap_stats(const SparsityMask & a, const SparsityMask & b);

// Uniformly samples k = round((1 - s) * n) kept positions among those not
// kept by `forbidden`.
SparsityMask random_mask(const ParameterMap & keyspace, double sparsity, uint64_t seed,
                         const SparsityMask * forbidden = nullptr);

// Positions where the values are exactly nonzero.
SparsityMask nonzero_mask(const ParameterMap & values);

// Mask files reuse the checkpoint container with U8 tensors; the sidecar
// "<path>.json" carries {"declared_sparsity", "seed"?, "source"}.
struct MaskFileInfo {
    std::string source;
    std::optional<uint64_t> seed;
};

std::vector<uint8_t> serialize_mask(const SparsityMask & mask);
SparsityMask parse_mask(std::span<const uint8_t> bytes, double declared_sparsity);
std::string mask_sidecar_json(const SparsityMask & mask, const MaskFileInfo & info);

void save_mask(const SparsityMask & mask, const std::filesystem::path & path, const MaskFileInfo & info);
SparsityMask load_mask(const std::filesystem::path & path, MaskFileInfo * info = nullptr);

} // namespace lota
