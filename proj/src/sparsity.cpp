#include "lota/sparsity.hpp"

#include "lota/checkpoint.hpp"
#include "lota/errors.hpp"
#include "lota/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace lota {

using json = nlohmann::json;

size_t TaskVector::nnz() const {
    size_t n = 0;
    for (const auto & [name, t] : delta) {
        for (float v : t.data) n += (v != 0.0f);
    }
    return n;
}

size_t SparsityMask::total_size() const {
    size_t n = 0;
    for (const auto & [name, m] : entries) n += m.keep.size();
    return n;
}

size_t SparsityMask::kept_count() const {
    size_t n = 0;
    for (const auto & [name, m] : entries) {
        for (uint8_t k : m.keep) n += (k != 0);
    }
    return n;
}

double SparsityMask::measured_sparsity() const {
    const size_t n = total_size();
    if (n == 0) return 0.0;
    return 1.0 - static_cast<double>(kept_count()) / static_cast<double>(n);
}

bool SparsityMask::same_selection(const SparsityMask & other) const {
    return entries == other.entries;
}

SparsityMask SparsityMask::all(const ParameterMap & keyspace, bool keep) {
    SparsityMask m;
    for (const auto & [name, t] : keyspace) {
        m.entries.emplace(name, MaskTensor{t.shape, std::vector<uint8_t>(t.numel(), keep ? 1 : 0)});
    }
    m.declared_sparsity = keep ? 0.0 : (keyspace.total_size() ? 1.0 : 0.0);
    return m;
}

static void check_sparsity(double s, const char * context) {
    if (!(s >= 0.0 && s <= 1.0)) {
        throw ValidationError("invalid_argument", std::string(context) + ": sparsity must lie in [0, 1], got " +
                                                      std::to_string(s));
    }
}

size_t kept_count_for(double sparsity, size_t total) {
    check_sparsity(sparsity, "kept_count_for");
    const double k = std::floor((1.0 - sparsity) * static_cast<double>(total) + 0.5);
    return std::min(total, static_cast<size_t>(std::max(0.0, k)));
}

bool aligned(const SparsityMask & mask, const ParameterMap & keyspace) {
    if (mask.entries.size() != keyspace.size()) return false;
    auto it = keyspace.begin();
    for (const auto & [name, m] : mask.entries) {
        if (name != it->first || m.shape != it->second.shape || m.keep.size() != it->second.numel()) return false;
        ++it;
    }
    return true;
}

bool aligned(const SparsityMask & a, const SparsityMask & b) {
    if (a.entries.size() != b.entries.size()) return false;
    auto ib = b.entries.begin();
    for (const auto & [name, m] : a.entries) {
        if (name != ib->first || m.shape != ib->second.shape) return false;
        ++ib;
    }
    return true;
}

static void require_mask_aligned(const SparsityMask & a, const SparsityMask & b, const char * context) {
    if (!aligned(a, b)) throw AlignmentError(std::string(context) + ": masks are not aligned");
}

static void require_mask_aligned(const SparsityMask & m, const ParameterMap & pm, const char * context) {
    if (!aligned(m, pm)) throw AlignmentError(std::string(context) + ": mask is not aligned with parameters");
}

TaskVector compute_task_vector(const ParameterMap & finetuned, const ParameterMap & base) {
    require_aligned(finetuned, base, "compute_task_vector");
    TaskVector tv;
    tv.base_digest = digest(base);
    for (const auto & [name, f] : finetuned) {
        const auto & b = base.at(name);
        std::vector<float> d(f.numel());
        for (size_t i = 0; i < d.size(); ++i) d[i] = f.data[i] - b.data[i];
        tv.delta.insert(name, Tensor(f.shape, std::move(d)));
    }
    tv.delta.require_finite("compute_task_vector");
    return tv;
}

SparsityMask top_k_mask(const ParameterMap & values, size_t k, const SparsityMask * allowed) {
    if (allowed) require_mask_aligned(*allowed, values, "top_k_mask");

    struct Candidate {
        float magnitude;
        size_t position;
    };
    std::vector<Candidate> candidates;
    candidates.reserve(allowed ? allowed->kept_count() : values.total_size());
    size_t offset = 0;
    for (const auto & [name, t] : values) {
        const uint8_t * ok = allowed ? allowed->entries.at(name).keep.data() : nullptr;
        for (size_t i = 0; i < t.numel(); ++i) {
            if (!ok || ok[i]) candidates.push_back({std::fabs(t.data[i]), offset + i});
        }
        offset += t.numel();
    }
    if (k > candidates.size()) {
        throw ValidationError("insufficient_positions", "top_k_mask: cannot keep " + std::to_string(k) + " of " +
                                                            std::to_string(candidates.size()) + " allowed positions");
    }

    // Larger magnitude first; equal magnitudes by global position.
    auto before = [](const Candidate & a, const Candidate & b) {
        if (a.magnitude != b.magnitude) return a.magnitude > b.magnitude;
        return a.position < b.position;
    };
    if (k < candidates.size()) {
        std::nth_element(candidates.begin(), candidates.begin() + static_cast<ptrdiff_t>(k), candidates.end(), before);
    }

    std::vector<uint8_t> flat(values.total_size(), 0);
    for (size_t i = 0; i < k; ++i) flat[candidates[i].position] = 1;

    SparsityMask mask;
    offset = 0;
    for (const auto & [name, t] : values) {
        MaskTensor m{t.shape, std::vector<uint8_t>(flat.begin() + static_cast<ptrdiff_t>(offset),
                                                   flat.begin() + static_cast<ptrdiff_t>(offset + t.numel()))};
        mask.entries.emplace(name, std::move(m));
        offset += t.numel();
    }
    mask.declared_sparsity = mask.measured_sparsity();
    return mask;
}

SparsityMask sparsify(const TaskVector & tv, double sparsity) {
    check_sparsity(sparsity, "sparsify");
    SparsityMask m = top_k_mask(tv.delta, kept_count_for(sparsity, tv.delta.total_size()));
    m.declared_sparsity = sparsity;
    return m;
}

SparsityMask sparsify_within(const TaskVector & tv, double sparsity, const SparsityMask & allowed) {
    check_sparsity(sparsity, "sparsify_within");
    SparsityMask m = top_k_mask(tv.delta, kept_count_for(sparsity, tv.delta.total_size()), &allowed);
    m.declared_sparsity = sparsity;
    return m;
}

ParameterMap apply_mask(const ParameterMap & values, const SparsityMask & mask) {
    require_mask_aligned(mask, values, "apply_mask");
    ParameterMap out;
    for (const auto & [name, t] : values) {
        const auto & keep = mask.entries.at(name).keep;
        std::vector<float> d(t.numel());
        for (size_t i = 0; i < d.size(); ++i) d[i] = keep[i] ? t.data[i] : 0.0f;
        out.insert(name, Tensor(t.shape, std::move(d)));
    }
    return out;
}

TaskVector apply_mask(const TaskVector & tv, const SparsityMask & mask) {
    return TaskVector{apply_mask(tv.delta, mask), tv.base_digest};
}

template <typename Op>
static SparsityMask combine(const SparsityMask & a, const SparsityMask & b, Op op, const char * context) {
    require_mask_aligned(a, b, context);
    SparsityMask out;
    for (const auto & [name, ma] : a.entries) {
        const auto & mb = b.entries.at(name);
        MaskTensor m{ma.shape, std::vector<uint8_t>(ma.keep.size())};
        for (size_t i = 0; i < m.keep.size(); ++i) m.keep[i] = op(ma.keep[i] != 0, mb.keep[i] != 0) ? 1 : 0;
        out.entries.emplace(name, std::move(m));
    }
    out.declared_sparsity = out.measured_sparsity();
    return out;
}

SparsityMask mask_union(const SparsityMask & a, const SparsityMask & b) {
    return combine(a, b, [](bool x, bool y) { return x || y; }, "mask_union");
}

SparsityMask mask_intersection(const SparsityMask & a, const SparsityMask & b) {
    return combine(a, b, [](bool x, bool y) { return x && y; }, "mask_intersection");
}

SparsityMask mask_complement(const SparsityMask & a) {
    SparsityMask out;
    for (const auto & [name, m] : a.entries) {
        MaskTensor c{m.shape, std::vector<uint8_t>(m.keep.size())};
        for (size_t i = 0; i < c.keep.size(); ++i) c.keep[i] = m.keep[i] ? 0 : 1;
        out.entries.emplace(name, std::move(c));
    }
    out.declared_sparsity = out.measured_sparsity();
    return out;
}

OverlapStats overlap_stats(const SparsityMask & a, const SparsityMask & b) {
    require_mask_aligned(a, b, "overlap_stats");
    OverlapStats s;
    for (const auto & [name, ma] : a.entries) {
        const auto & mb = b.entries.at(name).keep;
        for (size_t i = 0; i < ma.keep.size(); ++i) {
            s.intersection_count += (ma.keep[i] && mb[i]);
            s.union_count += (ma.keep[i] || mb[i]);
        }
    }
    // Two empty selections are identical.
    s.jaccard = s.union_count ? static_cast<double>(s.intersection_count) / static_cast<double>(s.union_count) : 1.0;
    return s;
}

SparsityMask random_mask(const ParameterMap & keyspace, double sparsity, uint64_t seed, const SparsityMask * forbidden) {
    check_sparsity(sparsity, "random_mask");
    if (forbidden) require_mask_aligned(*forbidden, keyspace, "random_mask");
    const size_t n = keyspace.total_size();
    const size_t k = kept_count_for(sparsity, n);

    std::vector<size_t> allowed;
    allowed.reserve(n);
    size_t offset = 0;
    for (const auto & [name, t] : keyspace) {
        const uint8_t * no = forbidden ? forbidden->entries.at(name).keep.data() : nullptr;
        for (size_t i = 0; i < t.numel(); ++i) {
            if (!no || !no[i]) allowed.push_back(offset + i);
        }
        offset += t.numel();
    }
    if (k > allowed.size()) {
        throw ValidationError("insufficient_positions", "random_mask: cannot keep " + std::to_string(k) + " of " +
                                                            std::to_string(allowed.size()) + " allowed positions");
    }

    // Partial Fisher-Yates: the first k slots end up a uniform k-subset.
    Rng rng(seed);
    for (size_t i = 0; i < k; ++i) {
        const size_t j = i + static_cast<size_t>(rng.uniform_index(allowed.size() - i));
        std::swap(allowed[i], allowed[j]);
    }
    std::vector<uint8_t> flat(n, 0);
    for (size_t i = 0; i < k; ++i) flat[allowed[i]] = 1;

    SparsityMask mask;
    offset = 0;
    for (const auto & [name, t] : keyspace) {
        mask.entries.emplace(name, MaskTensor{t.shape, std::vector<uint8_t>(flat.begin() + static_cast<ptrdiff_t>(offset),
                                                                           flat.begin() + static_cast<ptrdiff_t>(offset + t.numel()))});
        offset += t.numel();
    }
    mask.declared_sparsity = sparsity;
    return mask;
}

SparsityMask nonzero_mask(const ParameterMap & values) {
    SparsityMask mask;
    for (const auto & [name, t] : values) {
        MaskTensor m{t.shape, std::vector<uint8_t>(t.numel())};
        for (size_t i = 0; i < t.numel(); ++i) m.keep[i] = t.data[i] != 0.0f ? 1 : 0;
        mask.entries.emplace(name, std::move(m));
    }
    mask.declared_sparsity = mask.measured_sparsity();
    return mask;
}

std::vector<uint8_t> serialize_mask(const SparsityMask & mask) {
    RawTensorMap raw;
    for (const auto & [name, m] : mask.entries) {
        raw.emplace(name, RawTensor{DType::U8, m.shape, m.keep});
    }
    return serialize_container(raw);
}

SparsityMask parse_mask(std::span<const uint8_t> bytes, double declared_sparsity) {
    RawTensorMap raw = parse_container(bytes);
    SparsityMask mask;
    for (auto & [name, r] : raw) {
        if (r.dtype != DType::U8) {
            throw FormatError("malformed_header", "mask: tensor '" + name + "' has dtype " + dtype_name(r.dtype) +
                                                      ", expected U8");
        }
        for (uint8_t b : r.bytes) {
            if (b > 1) throw FormatError("malformed_payload", "mask: tensor '" + name + "' holds a byte other than 0/1");
        }
        mask.entries.emplace(name, MaskTensor{r.shape, std::move(r.bytes)});
    }
    mask.declared_sparsity = declared_sparsity;
    return mask;
}

std::string mask_sidecar_json(const SparsityMask & mask, const MaskFileInfo & info) {
    json j = {{"declared_sparsity", mask.declared_sparsity}, {"source", info.source}};
    if (info.seed) j["seed"] = *info.seed;
    return j.dump(2) + "\n";
}

static std::filesystem::path sidecar_path(const std::filesystem::path & path) {
    return std::filesystem::path(path.string() + ".json");
}

void save_mask(const SparsityMask & mask, const std::filesystem::path & path, const MaskFileInfo & info) {
    write_file(path, serialize_mask(mask));
    write_text_file(sidecar_path(path), mask_sidecar_json(mask, info));
}

SparsityMask load_mask(const std::filesystem::path & path, MaskFileInfo * info) {
    const auto bytes = read_file(path);
    double declared = -1.0;
    const auto side = sidecar_path(path);
    if (std::filesystem::exists(side)) {
        const auto text = read_file(side);
        json j;
        try {
            j = json::parse(text.begin(), text.end());
            declared = j.at("declared_sparsity").get<double>();
            if (info) {
                info->source = j.value("source", "");
                if (j.contains("seed")) info->seed = j.at("seed").get<uint64_t>();
            }
        } catch (const json::exception & e) {
            throw FormatError("malformed_sidecar", "mask sidecar '" + side.string() + "': " + e.what());
        }
    }
    SparsityMask mask = parse_mask(bytes, 0.0);
    mask.declared_sparsity = declared >= 0.0 ? declared : mask.measured_sparsity();
    return mask;
}

} // namespace lota
