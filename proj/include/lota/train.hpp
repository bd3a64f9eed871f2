#pragma once

#include "lota/adapter.hpp"
#include "lota/errors.hpp"
#include "lota/model.hpp"
#include "lota/optim.hpp"
#include "lota/sparsity.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace lota {

struct TrainConfig {
    double learning_rate = 1e-3;
    double rmsprop_decay = 0.99;
    double rmsprop_epsilon = 1e-8;
    size_t batch_size = 32;
    size_t epochs = 1;              // sparse-training / plain training budget
    size_t calibration_epochs = 1;  // mask-calibration budget
    size_t max_steps = 0;           // optional cap on optimizer steps per run, 0 = none
    double clip_group_norm = 1.0;
    uint64_t seed = 0;
    std::optional<SparsityMask> mask;

    void validate() const;
    RmsPropConfig optimizer() const { return {learning_rate, rmsprop_decay, rmsprop_epsilon}; }
};

// Mask is summarized (kept count and declared sparsity), not embedded.
nlohmann::json to_json(const TrainConfig & config);
TrainConfig train_config_from_json(const nlohmann::json & j);

struct RunRecord {
    std::string phase;
    nlohmann::json config;
    MapDigest initial_digest;
    MapDigest final_digest;
    std::vector<double> epoch_loss;
    uint64_t steps = 0;
    bool diverged = false;
    double wall_time_seconds = 0.0;
};

// Wall time is only written when asked for, so records stay byte-stable.
nlohmann::json to_json(const RunRecord & record, bool include_timing = false);

class DivergenceError : public RuntimeFailure {
public:
    DivergenceError(const std::string & message, RunRecord partial)
        : RuntimeFailure("divergence", message), partial_(std::move(partial)) {}

    const RunRecord & partial_record() const { return partial_; }

private:
    RunRecord partial_;
};

struct TrainResult {
    ParameterMap params;
    RunRecord record;
};

// Per-epoch shuffle seeded with seed XOR epoch, contiguous batches. When a
// mask is set, gradients are clipped per group, then masked, and mask-false
// coordinates are never written.
TrainResult train(const ToyModel & model, const Dataset & data, const TrainConfig & config,
                  size_t epochs, const std::string & phase = "train");
TrainResult train(const ToyModel & model, const Dataset & data, const TrainConfig & config);

struct LotaResult {
    SparseAdapter adapter;
    SparsityMask mask;
    ParameterMap w_final;
    std::optional<RunRecord> calibration;
    RunRecord adaptation;
};

// ceil(fraction * n) with a small tolerance against representation error.
size_t calibration_rows(double fraction, size_t n);

// Mask calibration on a copy of the base (first ceil(f |D|) rows,
// calibration_epochs), mask extraction by global magnitude, then sparse
// training from the base for `epochs`. A fraction of 0 uses a random mask
// seeded with config.seed.
LotaResult run_lota(const ToyModel & base, const Dataset & data, double sparsity, const TrainConfig & config,
                double calibration_fraction = 1.0);

struct IterativeLotaResult {
    LotaResult final;
    std::vector<SparsityMask> stage_masks;
    std::vector<ParameterMap> stage_weights;
};

// Stage 0 is LoTA with full-data calibration; stage j calibrates from the
// task vector of stage j - 1's sparse model, ranking only positions kept by
// the previous mask.
IterativeLotaResult iterative_lota(const ToyModel & base, const Dataset & data, const std::vector<double> & schedule,
                                   const TrainConfig & config);

struct LottoResult {
    std::vector<SparsityMask> task_masks;        // m_i^S
    std::vector<SparsityMask> constraint_trace;  // C before task 0, after task 0, ...
    std::vector<SparseAdapter> adapters;         // task i relative to its start weights
    std::vector<ParameterMap> stage_weights;     // w_i^F
    std::vector<RunRecord> records;
    ParameterMap w_final;
};

struct LottoOptions {
    // Initial constraint set. When absent and `base` is given, the nonzero
    // positions of start - base are used; otherwise the set starts empty.
    std::optional<SparsityMask> constraint;
    const ParameterMap * base = nullptr;
};

// For each task: train on the complement of the constraint set for
// calibration_epochs, extract m_i^S inside that complement, retrain from the
// task's start weights with m_i^S for `epochs`, then add m_i^S to the set.
// Throws ValidationError "constraint_exhausted" when the complement cannot
// hold round((1 - s) n) positions.
LottoResult lotto(const ToyModel & start, const std::vector<Dataset> & datasets, double sparsity,
                  const TrainConfig & config, const LottoOptions & options = {});

// Task B plus round(mix_fraction |B|) rows of task A (sampled with
// config.seed), trained as one FFT run.
Dataset mixed_dataset(const Dataset & dataset_b, const Dataset & dataset_a, double mix_fraction, uint64_t seed);
TrainResult mixed_data_fft(const ToyModel & start, const Dataset & dataset_b, const Dataset & dataset_a,
                           double mix_fraction, const TrainConfig & config);

} // namespace lota
