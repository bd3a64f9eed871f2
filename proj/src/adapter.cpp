#include "lota/adapter.hpp"

#include "byte_io.hpp"
#include "lota/checkpoint.hpp"
#include "lota/errors.hpp"

#include <cmath>
#include <cstring>

namespace lota {

static constexpr char kMagic[4] = {'L', 'T', 'A', '1'};
static constexpr uint8_t kContinuation = 0xFF;

uint64_t SparseAdapter::total_elements() const {
    uint64_t n = 0;
    for (const auto & r : records) n += r.numel;
    return n;
}

uint64_t SparseAdapter::stored_count() const {
    uint64_t c = 0;
    for (const auto & r : records) c += r.stored;
    return c;
}

void append_gap(std::vector<uint8_t> & out, uint64_t gap) {
    while (gap >= kContinuation) {
        out.push_back(kContinuation);
        gap -= kContinuation;
    }
    out.push_back(static_cast<uint8_t>(gap));
}

std::vector<uint64_t> decode_indices(const AdapterRecord & record) {
    std::vector<uint64_t> indices;
    indices.reserve(record.stored);
    uint64_t pending = 0;
    uint64_t previous = 0;
    bool in_gap = false;
    for (uint8_t b : record.gaps) {
        if (b == kContinuation) {
            pending += kContinuation;
            in_gap = true;
            continue;
        }
        const uint64_t gap = pending + b;
        pending = 0;
        in_gap = false;
        if (!indices.empty() && gap == 0) {
            throw FormatError("malformed_gaps", "adapter: tensor '" + record.name + "' repeats an index");
        }
        const uint64_t index = indices.empty() ? gap : previous + gap;
        if (index >= record.numel) {
            throw FormatError("malformed_gaps", "adapter: tensor '" + record.name + "' index " +
                                                    std::to_string(index) + " >= n=" + std::to_string(record.numel));
        }
        if (indices.size() == record.stored) {
            throw FormatError("malformed_gaps", "adapter: tensor '" + record.name + "' gap stream holds more than c=" +
                                                    std::to_string(record.stored) + " indices");
        }
        indices.push_back(index);
        previous = index;
    }
    if (in_gap) {
        throw FormatError("malformed_gaps", "adapter: tensor '" + record.name + "' gap stream ends mid-continuation");
    }
    if (indices.size() != record.stored) {
        throw FormatError("malformed_gaps", "adapter: tensor '" + record.name + "' gap stream holds " +
                                                std::to_string(indices.size()) + " indices, expected " +
                                                std::to_string(record.stored));
    }
    return indices;
}

SparseAdapter encode(const TaskVector & tv) {
    SparseAdapter adapter;
    adapter.base_digest = tv.base_digest;
    for (const auto & [name, t] : tv.delta) {
        AdapterRecord r;
        r.name = name;
        r.numel = t.numel();
        uint64_t previous = 0;
        for (size_t i = 0; i < t.numel(); ++i) {
            if (t.data[i] == 0.0f) continue;
            append_gap(r.gaps, r.values.empty() ? i : i - previous);
            r.values.push_back(t.data[i]);
            previous = i;
        }
        r.stored = r.values.size();
        adapter.records.push_back(std::move(r));
    }
    const uint64_t n = adapter.total_elements();
    adapter.declared_sparsity = n ? 1.0 - static_cast<double>(adapter.stored_count()) / static_cast<double>(n) : 0.0;
    return adapter;
}

static Tensor decode_record(const AdapterRecord & r, Shape shape) {
    if (r.values.size() != r.stored) {
        throw FormatError("truncated", "adapter: tensor '" + r.name + "' has " + std::to_string(r.values.size()) +
                                           " values, expected " + std::to_string(r.stored));
    }
    const auto indices = decode_indices(r);
    Tensor t = Tensor::zeros(std::move(shape));
    for (size_t j = 0; j < indices.size(); ++j) t.data[indices[j]] = r.values[j];
    return t;
}

TaskVector decode(const SparseAdapter & adapter) {
    TaskVector tv;
    tv.base_digest = adapter.base_digest;
    for (const auto & r : adapter.records) {
        tv.delta.insert(r.name, decode_record(r, Shape{static_cast<int64_t>(r.numel)}));
    }
    return tv;
}

static void require_adapter_aligned(const SparseAdapter & adapter, const ParameterMap & reference, const char * context) {
    bool ok = adapter.records.size() == reference.size();
    if (ok) {
        auto it = reference.begin();
        for (const auto & r : adapter.records) {
            if (r.name != it->first || r.numel != it->second.numel()) {
                ok = false;
                break;
            }
            ++it;
        }
    }
    if (!ok) throw AlignmentError(std::string(context) + ": adapter tensors do not match the reference model");
}

TaskVector decode(const SparseAdapter & adapter, const ParameterMap & reference) {
    require_adapter_aligned(adapter, reference, "decode");
    TaskVector tv;
    tv.base_digest = adapter.base_digest;
    for (const auto & r : adapter.records) tv.delta.insert(r.name, decode_record(r, reference.at(r.name).shape));
    return tv;
}

ParameterMap apply_adapter(const ParameterMap & base, const SparseAdapter & adapter, bool check_digest) {
    require_adapter_aligned(adapter, base, "apply_adapter");
    if (check_digest) {
        const MapDigest d = digest(base);
        if (!(d == adapter.base_digest)) {
            throw DigestMismatch("apply_adapter: base digest " + d.hex() + " does not match adapter base digest " +
                                 adapter.base_digest.hex());
        }
    }
    ParameterMap out = base;
    for (const auto & r : adapter.records) {
        if (r.values.size() != r.stored) throw FormatError("truncated", "adapter: value stream shorter than c");
        const auto indices = decode_indices(r);
        auto & data = out.at(r.name).data;
        for (size_t j = 0; j < indices.size(); ++j) data[indices[j]] += r.values[j];
    }
    out.require_finite("apply_adapter");
    return out;
}

std::vector<uint8_t> serialize_adapter(const SparseAdapter & adapter) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    detail::append_le<uint16_t>(out, kAdapterVersion);
    out.insert(out.end(), adapter.base_digest.bytes.begin(), adapter.base_digest.bytes.end());
    detail::append_le<uint32_t>(out, static_cast<uint32_t>(adapter.records.size()));
    for (const auto & r : adapter.records) {
        if (r.name.size() > UINT16_MAX) throw ValidationError("invalid_name", "adapter: tensor name too long");
        detail::append_le<uint16_t>(out, static_cast<uint16_t>(r.name.size()));
        out.insert(out.end(), r.name.begin(), r.name.end());
        detail::append_le<uint64_t>(out, r.numel);
        detail::append_le<uint64_t>(out, r.stored);
        detail::append_le<uint64_t>(out, r.gaps.size());
        out.insert(out.end(), r.gaps.begin(), r.gaps.end());
        detail::append_floats_le(out, r.values);
    }
    return out;
}

bool is_adapter_file(std::span<const uint8_t> bytes) {
    return bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) == 0;
}

SparseAdapter parse_adapter(std::span<const uint8_t> bytes) {
    detail::ByteReader reader(bytes, "adapter");
    const auto magic = reader.read_bytes(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad_magic", "adapter: missing LTA1 magic");
    const uint16_t version = reader.read_le<uint16_t>();
    if (version != kAdapterVersion) {
        throw FormatError("unsupported_version", "adapter: unsupported version " + std::to_string(version));
    }
    SparseAdapter adapter;
    const auto d = reader.read_bytes(32);
    std::memcpy(adapter.base_digest.bytes.data(), d.data(), 32);
    const uint32_t count = reader.read_le<uint32_t>();
    for (uint32_t i = 0; i < count; ++i) {
        AdapterRecord r;
        const uint16_t name_len = reader.read_le<uint16_t>();
        const auto name = reader.read_bytes(name_len);
        r.name.assign(name.begin(), name.end());
        if (r.name.empty()) throw FormatError("malformed_record", "adapter: empty tensor name");
        if (!adapter.records.empty() && !(adapter.records.back().name < r.name)) {
            throw FormatError("malformed_record", "adapter: tensor names not strictly increasing at '" + r.name + "'");
        }
        r.numel = reader.read_le<uint64_t>();
        r.stored = reader.read_le<uint64_t>();
        if (r.numel == 0 || r.stored > r.numel) {
            throw FormatError("malformed_record", "adapter: tensor '" + r.name + "' has invalid n/c");
        }
        const uint64_t gap_len = reader.read_le<uint64_t>();
        if (gap_len > reader.remaining()) throw FormatError("truncated", "adapter: truncated gap stream");
        const auto gaps = reader.read_bytes(static_cast<size_t>(gap_len));
        r.gaps.assign(gaps.begin(), gaps.end());
        if (r.stored * 4 > reader.remaining()) {
            throw FormatError("truncated", "adapter: tensor '" + r.name + "' truncated values");
        }
        r.values.resize(r.stored);
        reader.read_floats_le(r.values);
        for (float v : r.values) {
            if (!std::isfinite(v)) throw FormatError("non_finite", "adapter: non-finite value in '" + r.name + "'");
        }
        decode_indices(r);
        adapter.records.push_back(std::move(r));
    }
    if (reader.remaining() != 0) throw FormatError("malformed_record", "adapter: trailing bytes after last tensor");
    const uint64_t n = adapter.total_elements();
    adapter.declared_sparsity = n ? 1.0 - static_cast<double>(adapter.stored_count()) / static_cast<double>(n) : 0.0;
    return adapter;
}

CompressionReport compression_report(const SparseAdapter & adapter) {
    CompressionReport rep;
    rep.total_elements = adapter.total_elements();
    rep.stored_count = adapter.stored_count();
    rep.encoded_bytes = serialize_adapter(adapter).size();
    uint64_t gap_bytes = 0;
    for (const auto & r : adapter.records) gap_bytes += r.gaps.size();
    rep.payload_bits = 32 * rep.stored_count + 8 * gap_bytes;
    rep.overhead_bits = 8 * rep.encoded_bytes - rep.payload_bits;
    const double dense_bits = 32.0 * static_cast<double>(rep.total_elements);
    if (rep.stored_count > 0) rep.ideal_ratio = dense_bits / (40.0 * static_cast<double>(rep.stored_count));
    rep.measured_ratio = dense_bits / (8.0 * static_cast<double>(rep.encoded_bytes));
    return rep;
}

void save_adapter(const SparseAdapter & adapter, const std::filesystem::path & path) {
    write_file(path, serialize_adapter(adapter));
}

SparseAdapter load_adapter(const std::filesystem::path & path) {
    return parse_adapter(read_file(path));
}

} // namespace lota
