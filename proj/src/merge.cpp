#include "lota/merge.hpp"

#include "lota/errors.hpp"

#include <algorithm>
#include <cmath>

namespace lota {

using json = nlohmann::json;

json to_json(const MergeSpec & spec) {
    json tasks = json::array();
    for (const auto & t : spec.tasks) {
        tasks.push_back({{"source", t.source}, {"trim_keep_fraction", t.trim_keep_fraction}, {"weight", t.weight}});
    }
    return {{"base_digest", spec.base_digest.hex()},
            {"tasks", tasks},
            {"elect_signs", spec.elect_signs},
            {"lambda", spec.lambda}};
}

MergeSpec merge_spec_from_json(const json & j) {
    MergeSpec spec;
    try {
        if (j.contains("base_digest") && !j.at("base_digest").is_null()) {
            spec.base_digest = MapDigest::from_hex(j.at("base_digest").get<std::string>());
        }
        spec.elect_signs = j.value("elect_signs", true);
        spec.lambda = j.value("lambda", 1.0);
        for (const auto & t : j.at("tasks")) {
            MergeTaskEntry e;
            e.source = t.value("source", "");
            e.trim_keep_fraction = t.value("trim_keep_fraction", 1.0);
            e.weight = t.value("weight", 1.0);
            spec.tasks.push_back(std::move(e));
        }
    } catch (const json::exception & e) {
        throw ValidationError("invalid_config", std::string("merge spec: ") + e.what());
    }
    return spec;
}

static void require_shared_base(const ParameterMap & base, std::span<const TaskVector> tvs, const char * context) {
    if (tvs.empty()) throw ValidationError("invalid_argument", std::string(context) + ": no task vectors");
    const MapDigest d = digest(base);
    for (size_t i = 0; i < tvs.size(); ++i) {
        if (!(tvs[i].base_digest == d)) {
            throw DigestMismatch(std::string(context) + ": task vector " + std::to_string(i) +
                                 " was computed against a different base (" + tvs[i].base_digest.hex() + ")");
        }
        require_aligned(base, tvs[i].delta, context);
    }
}

static void check_fraction(double f, const char * context) {
    if (!(f > 0.0 && f <= 1.0)) {
        throw ValidationError("invalid_argument", std::string(context) + ": keep fraction must lie in (0, 1]");
    }
}

ParameterMap task_arithmetic_merge(const ParameterMap & base, std::span<const TaskVector> tvs,
                                   std::span<const double> weights, double lambda) {
    require_shared_base(base, tvs, "task_arithmetic_merge");
    if (weights.size() != tvs.size()) {
        throw ValidationError("invalid_argument", "task_arithmetic_merge: one weight per task vector required");
    }
    ParameterMap out = base;
    for (auto & [name, t] : out) {
        for (size_t e = 0; e < t.numel(); ++e) {
            double sum = 0.0;
            for (size_t i = 0; i < tvs.size(); ++i) sum += weights[i] * static_cast<double>(tvs[i].delta.at(name).data[e]);
            if (sum != 0.0) t.data[e] = static_cast<float>(static_cast<double>(t.data[e]) + lambda * sum);
        }
    }
    out.require_finite("task_arithmetic_merge");
    return out;
}

ParameterMap ties_merge(const ParameterMap & base, std::span<const TaskVector> tvs,
                        std::span<const double> keep_fractions, double lambda) {
    require_shared_base(base, tvs, "ties_merge");
    if (keep_fractions.size() != tvs.size()) {
        throw ValidationError("invalid_argument", "ties_merge: one keep fraction per task vector required");
    }
    const size_t n = base.total_size();
    std::vector<ParameterMap> trimmed;
    trimmed.reserve(tvs.size());
    for (size_t i = 0; i < tvs.size(); ++i) {
        check_fraction(keep_fractions[i], "ties_merge");
        if (keep_fractions[i] == 1.0) {
            trimmed.push_back(tvs[i].delta);
        } else {
            const size_t k = static_cast<size_t>(std::floor(keep_fractions[i] * static_cast<double>(n) + 0.5));
            trimmed.push_back(apply_mask(tvs[i].delta, top_k_mask(tvs[i].delta, k)));
        }
    }

    ParameterMap out = base;
    std::vector<double> kept;
    for (auto & [name, t] : out) {
        std::vector<const float *> src(trimmed.size());
        for (size_t i = 0; i < trimmed.size(); ++i) src[i] = trimmed[i].at(name).data.data();
        for (size_t e = 0; e < t.numel(); ++e) {
            kept.clear();
            for (const float * s : src) {
                if (s[e] != 0.0f) kept.push_back(s[e]);
            }
            if (kept.empty()) continue;
            // Sorted so the result does not depend on task order.
            std::sort(kept.begin(), kept.end());
            double sum = 0.0;
            for (double v : kept) sum += v;
            if (sum == 0.0) continue;
            double agree = 0.0;
            size_t count = 0;
            for (double v : kept) {
                if ((v > 0.0) == (sum > 0.0)) {
                    agree += v;
                    ++count;
                }
            }
            const float merged = static_cast<float>(agree / static_cast<double>(count));
            t.data[e] = static_cast<float>(static_cast<double>(t.data[e]) + lambda * static_cast<double>(merged));
        }
    }
    out.require_finite("ties_merge");
    return out;
}

ParameterMap merge_lota(const ParameterMap & base, std::span<const SparseAdapter> adapters, double lambda) {
    std::vector<TaskVector> tvs;
    tvs.reserve(adapters.size());
    for (const auto & a : adapters) tvs.push_back(decode(a, base));
    const std::vector<double> ones(tvs.size(), 1.0);
    return ties_merge(base, tvs, ones, lambda);
}

ParameterMap merge(const ParameterMap & base, std::span<const TaskVector> tvs, const MergeSpec & spec) {
    if (spec.tasks.size() != tvs.size()) {
        throw ValidationError("invalid_argument", "merge: spec lists " + std::to_string(spec.tasks.size()) +
                                                      " tasks for " + std::to_string(tvs.size()) + " task vectors");
    }
    std::vector<TaskVector> scaled;
    std::vector<double> fractions;
    std::vector<double> weights;
    for (size_t i = 0; i < tvs.size(); ++i) {
        fractions.push_back(spec.tasks[i].trim_keep_fraction);
        weights.push_back(spec.tasks[i].weight);
        if (spec.elect_signs && spec.tasks[i].weight != 1.0) {
            const double c[1] = {spec.tasks[i].weight};
            scaled.push_back(TaskVector{linear_combine(c, std::span(&tvs[i].delta, 1)), tvs[i].base_digest});
        } else {
            scaled.push_back(tvs[i]);
        }
    }
    if (spec.elect_signs) return ties_merge(base, scaled, fractions, spec.lambda);

    std::vector<TaskVector> trimmed;
    const size_t n = base.total_size();
    for (size_t i = 0; i < tvs.size(); ++i) {
        check_fraction(fractions[i], "merge");
        const size_t k = static_cast<size_t>(std::floor(fractions[i] * static_cast<double>(n) + 0.5));
        trimmed.push_back(TaskVector{apply_mask(tvs[i].delta, top_k_mask(tvs[i].delta, k)), tvs[i].base_digest});
    }
    return task_arithmetic_merge(base, trimmed, weights, spec.lambda);
}

json to_json(const GridSearchResult & result) {
    json table = json::array();
    for (const auto & cell : result.table) {
        table.push_back({{"keep_fractions", cell.keep_fractions}, {"score", cell.score}});
    }
    return {{"best", to_json(result.best)}, {"best_index", result.best_index}, {"table", table}};
}

GridSearchResult merge_grid_search(const ParameterMap & base, std::span<const TaskVector> tvs,
                                   const std::vector<std::vector<double>> & grids, const MergeObjective & objective,
                                   double lambda) {
    if (grids.size() != tvs.size()) {
        throw ValidationError("invalid_argument", "merge_grid_search: one grid per task vector required");
    }
    size_t cells = 1;
    for (const auto & g : grids) {
        if (g.empty()) throw ValidationError("invalid_argument", "merge_grid_search: empty grid");
        for (double f : g) check_fraction(f, "merge_grid_search");
        cells *= g.size();
    }

    GridSearchResult result;
    result.table.reserve(cells);
    for (size_t c = 0; c < cells; ++c) {
        std::vector<double> fractions(grids.size());
        size_t rem = c;
        for (size_t i = grids.size(); i-- > 0;) {
            fractions[i] = grids[i][rem % grids[i].size()];
            rem /= grids[i].size();
        }
        GridCell cell;
        cell.keep_fractions = fractions;
        cell.score = objective(ties_merge(base, tvs, fractions, lambda));
        if (c == 0 || cell.score > result.table[result.best_index].score) result.best_index = c;
        result.table.push_back(std::move(cell));
    }

    result.best.base_digest = tvs.front().base_digest;
    result.best.elect_signs = true;
    result.best.lambda = lambda;
    for (double f : result.table[result.best_index].keep_fractions) {
        result.best.tasks.push_back(MergeTaskEntry{"", f, 1.0});
    }
    return result;
}

GridSearchResult merge_grid_search(const ParameterMap & base, std::span<const TaskVector> tvs,
                                   const std::vector<double> & grid, const MergeObjective & objective, double lambda) {
    return merge_grid_search(base, tvs, std::vector<std::vector<double>>(tvs.size(), grid), objective, lambda);
}

} // namespace lota
