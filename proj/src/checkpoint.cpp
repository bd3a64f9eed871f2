#include "lota/checkpoint.hpp"

#include "byte_io.hpp"
#include "lota/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

namespace lota {

using json = nlohmann::json;

const char * dtype_name(DType dtype) {
    switch (dtype) {
        case DType::F32: return "F32";
        case DType::U8: return "U8";
    }
    return "?";
}

size_t dtype_size(DType dtype) {
    switch (dtype) {
        case DType::F32: return 4;
        case DType::U8: return 1;
    }
    return 0;
}

static DType parse_dtype(const std::string & s) {
    if (s == "F32") return DType::F32;
    if (s == "U8") return DType::U8;
    throw FormatError("malformed_header", "unsupported dtype '" + s + "'");
}

std::vector<uint8_t> serialize_container(const RawTensorMap & tensors) {
    json header = json::object();
    uint64_t offset = 0;
    for (const auto & [name, t] : tensors) {
        const size_t expected = shape_numel(t.shape) * dtype_size(t.dtype);
        if (t.bytes.size() != expected) {
            throw ValidationError("invalid_shape", "tensor '" + name + "' byte size does not match its shape");
        }
        header[name] = {
            {"dtype", dtype_name(t.dtype)},
            {"shape", t.shape},
            {"data_offsets", {offset, offset + t.bytes.size()}},
        };
        offset += t.bytes.size();
    }
    const std::string text = header.dump();

    std::vector<uint8_t> out;
    out.reserve(8 + text.size() + offset);
    detail::append_le<uint64_t>(out, text.size());
    out.resize(8 + text.size());
    std::memcpy(out.data() + 8, text.data(), text.size());
    for (const auto & [name, t] : tensors) out.insert(out.end(), t.bytes.begin(), t.bytes.end());
    return out;
}

RawTensorMap parse_container(std::span<const uint8_t> bytes) {
    detail::ByteReader reader(bytes, "container");
    const uint64_t header_len = reader.read_le<uint64_t>();
    if (header_len > reader.remaining()) {
        throw FormatError("truncated", "container: header length " + std::to_string(header_len) +
                                           " exceeds file size " + std::to_string(bytes.size()));
    }
    const auto header_bytes = reader.read_bytes(static_cast<size_t>(header_len));

    // nlohmann keeps the last value for repeated keys, so duplicates are
    // caught while parsing.
    std::set<std::string> seen;
    std::string duplicate;
    json::parser_callback_t on_event = [&](int depth, json::parse_event_t event, json & parsed) {
        if (event == json::parse_event_t::key && depth == 1) {
            const auto & key = parsed.get_ref<const std::string &>();
            if (!seen.insert(key).second && duplicate.empty()) duplicate = key;
        }
        return true;
    };
    json header;
    try {
        header = json::parse(header_bytes.begin(), header_bytes.end(), on_event);
    } catch (const json::exception & e) {
        throw FormatError("malformed_header", std::string("container: invalid header JSON: ") + e.what());
    }
    if (!duplicate.empty()) {
        throw FormatError("duplicate_name", "container: duplicate tensor name '" + duplicate + "'");
    }
    if (!header.is_object()) {
        throw FormatError("malformed_header", "container: header is not a JSON object");
    }

    RawTensorMap out;
    const auto payload = bytes.subspan(reader.position());
    uint64_t expected_offset = 0;
    for (const auto & [name, entry] : header.items()) {
        if (name.empty()) throw FormatError("malformed_header", "container: empty tensor name");
        RawTensor t;
        try {
            if (!entry.is_object() || entry.size() != 3) throw FormatError("malformed_header", "bad entry layout");
            t.dtype = parse_dtype(entry.at("dtype").get<std::string>());
            t.shape = entry.at("shape").get<Shape>();
            const auto offsets = entry.at("data_offsets").get<std::vector<uint64_t>>();
            if (offsets.size() != 2) throw FormatError("malformed_header", "data_offsets must have two entries");
            const uint64_t nbytes = shape_numel(t.shape) * dtype_size(t.dtype);
            if (offsets[0] != expected_offset || offsets[1] < offsets[0] || offsets[1] - offsets[0] != nbytes) {
                throw FormatError("malformed_header", "data_offsets inconsistent with shape or ordering");
            }
            if (offsets[1] > payload.size()) {
                throw FormatError("truncated", "payload ends before tensor data");
            }
            t.bytes.assign(payload.begin() + static_cast<ptrdiff_t>(offsets[0]),
                           payload.begin() + static_cast<ptrdiff_t>(offsets[1]));
            expected_offset = offsets[1];
        } catch (const FormatError & e) {
            throw FormatError(e.kind(), "container: tensor '" + name + "': " + e.what());
        } catch (const ValidationError & e) {
            throw FormatError("malformed_header", "container: tensor '" + name + "': " + e.what());
        } catch (const json::exception & e) {
            throw FormatError("malformed_header", "container: tensor '" + name + "': " + e.what());
        }
        out.emplace(name, std::move(t));
    }
    if (expected_offset != payload.size()) {
        throw FormatError("malformed_header", "container: " + std::to_string(payload.size() - expected_offset) +
                                                  " trailing payload bytes");
    }
    return out;
}

std::vector<uint8_t> read_file(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("error reading '" + path.string() + "'");
    return bytes;
}

void write_file(const std::filesystem::path & path, std::span<const uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("error writing '" + path.string() + "'");
}

void write_text_file(const std::filesystem::path & path, const std::string & text) {
    write_file(path, std::span(reinterpret_cast<const uint8_t *>(text.data()), text.size()));
}

std::vector<uint8_t> serialize_checkpoint(const ParameterMap & pm) {
    RawTensorMap raw;
    for (const auto & [name, t] : pm) {
        RawTensor r;
        r.dtype = DType::F32;
        r.shape = t.shape;
        r.bytes.reserve(t.data.size() * 4);
        detail::append_floats_le(r.bytes, t.data);
        raw.emplace(name, std::move(r));
    }
    return serialize_container(raw);
}

ParameterMap parse_checkpoint(std::span<const uint8_t> bytes) {
    RawTensorMap raw = parse_container(bytes);
    ParameterMap pm;
    for (auto & [name, r] : raw) {
        if (r.dtype != DType::F32) {
            throw FormatError("malformed_header", "checkpoint: tensor '" + name + "' has dtype " +
                                                      dtype_name(r.dtype) + ", expected F32");
        }
        std::vector<float> data(r.bytes.size() / 4);
        detail::ByteReader reader(r.bytes, "checkpoint");
        reader.read_floats_le(data);
        for (float v : data) {
            if (!std::isfinite(v)) throw FormatError("non_finite", "checkpoint: non-finite value in '" + name + "'");
        }
        pm.insert(name, Tensor(r.shape, std::move(data)));
    }
    return pm;
}

void save_checkpoint(const ParameterMap & pm, const std::filesystem::path & path) {
    write_file(path, serialize_checkpoint(pm));
}

ParameterMap load_checkpoint(const std::filesystem::path & path) {
    return parse_checkpoint(read_file(path));
}

} // namespace lota
