#include "lota/tensor.hpp"

#include "lota/checkpoint.hpp"
#include "lota/errors.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstring>
#include <memory>
#include <sstream>

namespace lota {

size_t shape_numel(const Shape & shape) {
    size_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) {
            throw ValidationError("invalid_shape", "non-positive dimension in shape " + shape_to_string(shape));
        }
        n *= static_cast<size_t>(d);
    }
    return n;
}

std::string shape_to_string(const Shape & shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape_, std::vector<float> data_) : shape(std::move(shape_)), data(std::move(data_)) {
    const size_t n = shape_numel(shape);
    if (n != data.size()) {
        throw ValidationError("invalid_shape", "tensor data length " + std::to_string(data.size()) +
                                                   " does not match shape " + shape_to_string(shape));
    }
}

Tensor Tensor::zeros(Shape shape) {
    const size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<float>(n, 0.0f));
}

bool Tensor::operator==(const Tensor & other) const {
    return shape == other.shape && data == other.data;
}

bool bitwise_equal(const Tensor & a, const Tensor & b) {
    return a.shape == b.shape && a.data.size() == b.data.size() &&
           (a.data.empty() || std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
}

void ParameterMap::insert(const std::string & name, Tensor tensor) {
    if (name.empty()) {
        throw ValidationError("invalid_name", "parameter name must be non-empty");
    }
    auto [it, inserted] = entries_.emplace(name, std::move(tensor));
    if (!inserted) {
        throw ValidationError("duplicate_name", "duplicate parameter name '" + name + "'");
    }
}

const Tensor & ParameterMap::at(const std::string & name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw AlignmentError("no parameter named '" + name + "'");
    }
    return it->second;
}

Tensor & ParameterMap::at(const std::string & name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw AlignmentError("no parameter named '" + name + "'");
    }
    return it->second;
}

size_t ParameterMap::total_size() const {
    size_t n = 0;
    for (const auto & [name, t] : entries_) n += t.numel();
    return n;
}

void ParameterMap::require_finite(const std::string & context) const {
    for (const auto & [name, t] : entries_) {
        for (float v : t.data) {
            if (!std::isfinite(v)) {
                throw NonFiniteError(context + ": non-finite value in '" + name + "'");
            }
        }
    }
}

bool bitwise_equal(const ParameterMap & a, const ParameterMap & b) {
    if (a.size() != b.size()) return false;
    auto ib = b.begin();
    for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib) {
        if (ia->first != ib->first || !bitwise_equal(ia->second, ib->second)) return false;
    }
    return true;
}

bool aligned(const ParameterMap & a, const ParameterMap & b) {
    if (a.size() != b.size()) return false;
    auto ib = b.begin();
    for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib) {
        if (ia->first != ib->first || ia->second.shape != ib->second.shape) return false;
    }
    return true;
}

void require_aligned(const ParameterMap & a, const ParameterMap & b, const std::string & context) {
    if (aligned(a, b)) return;
    std::string detail;
    for (const auto & [name, t] : a) {
        if (!b.contains(name)) {
            detail = "'" + name + "' missing from second operand";
            break;
        }
        if (b.at(name).shape != t.shape) {
            detail = "'" + name + "' shape " + shape_to_string(t.shape) + " vs " + shape_to_string(b.at(name).shape);
            break;
        }
    }
    if (detail.empty()) {
        for (const auto & [name, t] : b) {
            if (!a.contains(name)) {
                detail = "'" + name + "' missing from first operand";
                break;
            }
        }
    }
    throw AlignmentError(context + ": maps are not aligned (" + detail + ")");
}

ParameterMap zeros_like(const ParameterMap & pm) {
    ParameterMap out;
    for (const auto & [name, t] : pm) out.insert(name, Tensor::zeros(t.shape));
    return out;
}

ParameterMap linear_combine(std::span<const double> coeffs, std::span<const ParameterMap> maps) {
    if (coeffs.size() != maps.size()) {
        throw ValidationError("invalid_argument", "linear_combine: " + std::to_string(coeffs.size()) +
                                                      " coefficients for " + std::to_string(maps.size()) + " maps");
    }
    if (maps.empty()) {
        throw ValidationError("invalid_argument", "linear_combine: no maps given");
    }
    for (size_t i = 1; i < maps.size(); ++i) require_aligned(maps[0], maps[i], "linear_combine");

    ParameterMap out = zeros_like(maps[0]);
    for (auto & [name, t] : out) {
        std::vector<const float *> src(maps.size());
        for (size_t i = 0; i < maps.size(); ++i) src[i] = maps[i].at(name).data.data();
        for (size_t e = 0; e < t.data.size(); ++e) {
            double acc = 0.0;
            for (size_t i = 0; i < maps.size(); ++i) acc += coeffs[i] * static_cast<double>(src[i][e]);
            t.data[e] = static_cast<float>(acc);
        }
    }
    out.require_finite("linear_combine");
    return out;
}

std::string MapDigest::hex() const {
    static const char * digits = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (uint8_t b : bytes) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xF]);
    }
    return s;
}

MapDigest MapDigest::from_hex(const std::string & hex) {
    if (hex.size() != 64) {
        throw ValidationError("invalid_digest", "digest hex must have 64 characters");
    }
    auto nibble = [&](char c) -> uint8_t {
        if (c >= '0' && c <= '9') return static_cast<uint8_t>(c - '0');
        if (c >= 'a' && c <= 'f') return static_cast<uint8_t>(c - 'a' + 10);
        if (c >= 'A' && c <= 'F') return static_cast<uint8_t>(c - 'A' + 10);
        throw ValidationError("invalid_digest", "invalid hex character in digest");
    };
    MapDigest d;
    for (size_t i = 0; i < 32; ++i) d.bytes[i] = static_cast<uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
    return d;
}

MapDigest sha256(std::span<const uint8_t> bytes) {
    MapDigest d;
    unsigned int len = 0;
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), d.bytes.data(), &len) != 1 || len != d.bytes.size()) {
        throw RuntimeFailure("digest", "SHA-256 computation failed");
    }
    return d;
}

MapDigest digest(const ParameterMap & pm) {
    return sha256(serialize_checkpoint(pm));
}

} // namespace lota
