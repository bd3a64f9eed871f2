#pragma once

#include "lota/adapter.hpp"
#include "lota/sparsity.hpp"
#include "lota/tensor.hpp"

#include <json.hpp>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace lota {

struct MergeTaskEntry {
    std::string source;              // path or label, informational
    double trim_keep_fraction = 1.0; // (0, 1]
    double weight = 1.0;
};

struct MergeSpec {
    MapDigest base_digest;
    std::vector<MergeTaskEntry> tasks;
    bool elect_signs = true;
    double lambda = 1.0;
};

nlohmann::json to_json(const MergeSpec & spec);
MergeSpec merge_spec_from_json(const nlohmann::json & j);

// base + lambda * sum_i weights[i] * tvs[i]
ParameterMap task_arithmetic_merge(const ParameterMap & base, std::span<const TaskVector> tvs,
                                   std::span<const double> weights, double lambda = 1.0);

// Per task, keep the round(f_i n) largest magnitudes (global threshold, same
// ordering rules as sparsify). Per coordinate, the elected sign is the sign
// of the sum of kept values; the merged delta is the mean of kept values of
// that sign, or 0 when nothing is kept or the sum is exactly 0. The merged
// delta is rounded to float before being scaled and added to the base.
ParameterMap ties_merge(const ParameterMap & base, std::span<const TaskVector> tvs,
                        std::span<const double> keep_fractions, double lambda = 1.0);

// TIES without trimming over inherently sparse adapters.
ParameterMap merge_lota(const ParameterMap & base, std::span<const SparseAdapter> adapters, double lambda = 1.0);

// Executes a MergeSpec: with elect_signs, ties_merge over weight-scaled task
// vectors; without, trimmed task arithmetic.
ParameterMap merge(const ParameterMap & base, std::span<const TaskVector> tvs, const MergeSpec & spec);

struct GridCell {
    std::vector<double> keep_fractions;
    double score = 0.0;
};

struct GridSearchResult {
    MergeSpec best;
    size_t best_index = 0;
    std::vector<GridCell> table;  // row-major, first task varies slowest
};

nlohmann::json to_json(const GridSearchResult & result);

using MergeObjective = std::function<double(const ParameterMap & merged)>;

// Evaluates ties_merge on every cell of the Cartesian product of per-task
// grids and keeps the first cell with the highest score.
GridSearchResult merge_grid_search(const ParameterMap & base, std::span<const TaskVector> tvs,
                                   const std::vector<std::vector<double>> & grids, const MergeObjective & objective,
                                   double lambda = 1.0);

// Same grid for every task.
GridSearchResult merge_grid_search(const ParameterMap & base, std::span<const TaskVector> tvs,
                                   const std::vector<double> & grid, const MergeObjective & objective,
                                   double lambda = 1.0);

} // namespace lota
