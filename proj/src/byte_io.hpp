#pragma once

#include "lota/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

namespace lota::detail {

template <typename T>
void append_le(std::vector<uint8_t> & out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    uint8_t buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    const size_t at = out.size();
    out.resize(at + sizeof(T));
    std::memcpy(out.data() + at, buf, sizeof(T));
}

inline void append_floats_le(std::vector<uint8_t> & out, std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
        const size_t at = out.size();
        out.resize(at + values.size_bytes());
        if (!values.empty()) std::memcpy(out.data() + at, values.data(), values.size_bytes());
    } else {
        for (float v : values) append_le(out, v);
    }
}

// Bounds-checked little-endian reader; running past the end raises a
// FormatError tagged "truncated".
class ByteReader {
public:
    ByteReader(std::span<const uint8_t> bytes, std::string context) : bytes_(bytes), context_(std::move(context)) {}

    template <typename T>
    T read_le() {
        static_assert(std::is_trivially_copyable_v<T>);
        require(sizeof(T));
        uint8_t buf[sizeof(T)];
        std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) {
            for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
        }
        pos_ += sizeof(T);
        T value;
        std::memcpy(&value, buf, sizeof(T));
        return value;
    }

    std::span<const uint8_t> read_bytes(size_t n) {
        require(n);
        auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    void read_floats_le(std::span<float> out) {
        require(out.size_bytes());
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
            pos_ += out.size_bytes();
        } else {
            for (float & v : out) v = read_le<float>();
        }
    }

    size_t position() const { return pos_; }
    size_t remaining() const { return bytes_.size() - pos_; }

private:
    void require(size_t n) const {
        if (n > remaining()) {
            throw FormatError("truncated", context_ + ": truncated (need " + std::to_string(n) + " bytes at offset " +
                                               std::to_string(pos_) + ", " + std::to_string(remaining()) +
                                               " remaining)");
        }
    }

    std::span<const uint8_t> bytes_;
    std::string context_;
    size_t pos_ = 0;
};

} // namespace lota::detail
