#pragma once

#include "lota/model.hpp"
#include "lota/tasks.hpp"
#include "lota/train.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace lota {

// Accuracy for classification; the negated training loss (mean squared L2
// error per row) for regression. Higher is better in both cases.
double evaluate(const ToyModel & model, const Dataset & data);

const char * utility_metric_name(const ModelSpec & spec);

nlohmann::json to_json(const ModelSpec & spec);
ModelSpec model_spec_from_json(const nlohmann::json & j);

// ---------------------------------------------------------------- reports

struct ReportRow {
    uint64_t seed = 0;
    std::string method;
    std::string task;
    std::map<std::string, double> values;
};

struct ReportCheck {
    std::string name;
    bool passed = false;
    // A failed assertion invalidates the experiment (nonzero exit in the CLI);
    // other checks record directional trends.
    bool assertion = false;
    nlohmann::json detail;
};

struct SeedFailure {
    uint64_t seed = 0;
    std::string kind;
    std::string message;
};

struct MetricsReport {
    std::string experiment;
    std::string metric;
    nlohmann::json spec;
    std::vector<uint64_t> seeds;
    std::vector<ReportRow> rows;
    std::vector<ReportCheck> checks;
    std::vector<SeedFailure> failures;
    double wall_time_seconds = 0.0;  // not part of to_json

    bool assertions_passed() const;
    const ReportCheck * check(const std::string & name) const;
    // Values of `field` over the rows matching (method, task), in seed order.
    std::vector<double> column(const std::string & method, const std::string & task, const std::string & field) const;
    const ReportRow * row(uint64_t seed, const std::string & method, const std::string & task) const;
};

struct SummaryStat {
    double mean = 0.0;
    double std_error = 0.0;  // sample standard deviation / sqrt(n); 0 when n < 2
    size_t n = 0;
};

SummaryStat summarize(const std::vector<double> & values);

// Deterministic: rows in seed order, summary grouped by (method, task, field).
nlohmann::json to_json(const MetricsReport & report);
// One line per row: seed,method,task,<sorted union of value fields>.
std::string to_csv(const MetricsReport & report);

// ---------------------------------------------------------------- specs

// Shared by every experiment. Per seed r the base model is initialised with
// model_init_seed + r, every task seed is offset by r and the training seed
// is train.seed + r.
struct ExperimentCommon {
    ModelSpec model;
    uint64_t model_init_seed = 7;
    TrainConfig train;
    std::vector<uint64_t> seeds{0, 1, 2, 3, 4};
    size_t threads = 1;
};

enum class SequentialMethod { FftFft, LotaFft, FftLota, LotaLotto, FftFftMixed };
const char * sequential_method_name(SequentialMethod m);
SequentialMethod parse_sequential_method(const std::string & s);

struct SequentialSpec {
    ExperimentCommon common;
    SyntheticTaskSpec task_a;
    std::vector<SyntheticTaskSpec> tasks_b;
    std::vector<SequentialMethod> methods{SequentialMethod::FftFft, SequentialMethod::LotaFft, SequentialMethod::FftLota,
                                          SequentialMethod::LotaLotto, SequentialMethod::FftFftMixed};
    double sparsity = 0.9;
    double mix_fraction = 0.5;
    double interference_threshold = 0.10;
    double task_b_tolerance = 0.03;
};

struct SparsityAblationSpec {
    ExperimentCommon common;
    SyntheticTaskSpec task;
    std::vector<double> sparsities{0.0, 0.25, 0.5, 0.75, 0.9, 0.99};
    std::vector<double> iterative_schedule{0.9, 0.99};
    double plateau_tolerance = 0.02;
    double plateau_max_sparsity = 0.9;
};

struct CalibrationAblationSpec {
    ExperimentCommon common;
    std::variant<SyntheticTaskSpec, PlantedTaskSpec> task;
    double sparsity = 0.9;
    std::vector<double> fractions{1.0, 0.1, 0.01, 0.0};
};

enum class AdaptMethod { Fft, Lota };

struct MergingSpec {
    ExperimentCommon common;
    std::vector<SyntheticTaskSpec> tasks;
    // One method per task, e.g. {Lota, Fft} is "LoTA+FFT".
    std::vector<std::vector<AdaptMethod>> combos;
    double sparsity = 0.9;
    std::vector<double> grid{0.1, 0.2, 0.3};
    double lambda = 1.0;
};

std::string combo_name(const std::vector<AdaptMethod> & combo);

nlohmann::json to_json(const SequentialSpec & spec);
nlohmann::json to_json(const SparsityAblationSpec & spec);
nlohmann::json to_json(const CalibrationAblationSpec & spec);
nlohmann::json to_json(const MergingSpec & spec);

SequentialSpec sequential_spec_from_json(const nlohmann::json & j);
SparsityAblationSpec sparsity_spec_from_json(const nlohmann::json & j);
CalibrationAblationSpec calibration_spec_from_json(const nlohmann::json & j);
MergingSpec merging_spec_from_json(const nlohmann::json & j);

// ---------------------------------------------------------------- experiments

// Rows: "Baseline:FFT" / "Baseline:LoTA" single-task runs per task, then per
// (method, task B): utility_a, drop_a (vs. the method's own Task-A model),
// utility_b, drop_b (vs. FFT on B from the base).
MetricsReport run_sequential_experiment(const SequentialSpec & spec);

// Rows: "FFT" and "LoTA[s=..]" per sparsity with k, utility and relative
// change vs. FFT; "LoTA*[s=..]" for the iterative schedule.
MetricsReport run_sparsity_ablation(const SparsityAblationSpec & spec);

// Rows: "LoTA[f=..]" per calibration fraction with utility and relative drop
// vs. the fraction-1.0 row; fraction 0 uses a random mask.
MetricsReport run_calibration_ablation(const CalibrationAblationSpec & spec);

// Rows: single-task baselines, then per method combination the merged
// model's per-task utilities, drops vs. each task's own model, the task
// average and the number of grid cells evaluated.
MetricsReport run_merging_experiment(const MergingSpec & spec);

// Dispatches on j["experiment"] in {"sequential", "sparsity", "calibration",
// "merging"}. threads_override > 0 replaces the spec's thread count.
MetricsReport run_experiment(const nlohmann::json & j, size_t threads_override = 0);

} // namespace lota
