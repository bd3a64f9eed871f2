#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace lota {

using Shape = std::vector<int64_t>;

// Product of dimensions; rejects non-positive dimensions. An empty shape is a
// scalar with one element.
size_t shape_numel(const Shape & shape);

std::string shape_to_string(const Shape & shape);

// Dense row-major float32 tensor.
struct Tensor {
    Shape shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(Shape shape, std::vector<float> data);

    static Tensor zeros(Shape shape);

    size_t numel() const { return data.size(); }

    bool operator==(const Tensor & other) const;
};

// True iff every bit of both tensors is identical (distinguishes -0.0 / 0.0).
bool bitwise_equal(const Tensor & a, const Tensor & b);

// Named, lexicographically ordered collection of tensors. Holds a full model
// state or anything shaped like one (gradients, deltas, optimizer moments).
class ParameterMap {
public:
    using Entries = std::map<std::string, Tensor>;
    using const_iterator = Entries::const_iterator;
    using iterator = Entries::iterator;

    ParameterMap() = default;

    // Throws ValidationError on empty or duplicate names.
    void insert(const std::string & name, Tensor tensor);

    bool contains(const std::string & name) const { return entries_.count(name) != 0; }
    const Tensor & at(const std::string & name) const;
    Tensor & at(const std::string & name);

    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    // Total element count across all tensors.
    size_t total_size() const;

    const_iterator begin() const { return entries_.begin(); }
    const_iterator end() const { return entries_.end(); }
    iterator begin() { return entries_.begin(); }
    iterator end() { return entries_.end(); }

    // Throws NonFiniteError naming the first offending tensor.
    void require_finite(const std::string & context) const;

    bool operator==(const ParameterMap & other) const = default;

private:
    Entries entries_;
};

bool bitwise_equal(const ParameterMap & a, const ParameterMap & b);

// Same name set and per-name shapes.
bool aligned(const ParameterMap & a, const ParameterMap & b);
void require_aligned(const ParameterMap & a, const ParameterMap & b, const std::string & context);

ParameterMap zeros_like(const ParameterMap & pm);

// Per element: sum_i coeffs[i] * maps[i], accumulated in double in map order
// and rounded once to float. Throws on misalignment or a non-finite result.
ParameterMap linear_combine(std::span<const double> coeffs, std::span<const ParameterMap> maps);

struct MapDigest {
    std::array<uint8_t, 32> bytes{};

    std::string hex() const;
    static MapDigest from_hex(const std::string & hex);

    bool operator==(const MapDigest &) const = default;
};

MapDigest sha256(std::span<const uint8_t> bytes);

// SHA-256 of the canonical checkpoint serialization.
MapDigest digest(const ParameterMap & pm);

} // namespace lota
