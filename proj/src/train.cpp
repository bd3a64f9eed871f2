#include "lota/train.hpp"

#include "lota/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace lota {

using json = nlohmann::json;

void TrainConfig::validate() const {
    auto fail = [](const std::string & what) { throw ValidationError("invalid_config", "train config: " + what); };
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
    if (!(rmsprop_decay > 0.0 && rmsprop_decay < 1.0)) fail("rmsprop_decay must lie in (0, 1)");
    if (!(rmsprop_epsilon > 0.0)) fail("rmsprop_epsilon must be > 0");
    if (batch_size == 0) fail("batch_size must be positive");
    if (!(clip_group_norm > 0.0)) fail("clip_group_norm must be > 0");
}

json to_json(const TrainConfig & c) {
    json j = {
        {"learning_rate", c.learning_rate},
        {"rmsprop_decay", c.rmsprop_decay},
        {"rmsprop_epsilon", c.rmsprop_epsilon},
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"calibration_epochs", c.calibration_epochs},
        {"max_steps", c.max_steps},
        {"clip_group_norm", c.clip_group_norm},
        {"seed", c.seed},
    };
    if (c.mask) {
        j["mask"] = {{"kept_count", c.mask->kept_count()},
                     {"total", c.mask->total_size()},
                     {"declared_sparsity", c.mask->declared_sparsity}};
    } else {
        j["mask"] = nullptr;
    }
    return j;
}

TrainConfig train_config_from_json(const json & j) {
    static const char * known[] = {"learning_rate", "rmsprop_decay", "rmsprop_epsilon", "batch_size",
                                   "epochs", "calibration_epochs", "max_steps", "clip_group_norm",
                                   "seed", "mask"};
    if (!j.is_object()) throw ValidationError("invalid_config", "train config must be a JSON object");
    for (const auto & [key, value] : j.items()) {
        if (std::find_if(std::begin(known), std::end(known), [&](const char * k) { return key == k; }) == std::end(known)) {
            throw ValidationError("invalid_config", "train config: unknown key '" + key + "'");
        }
    }
    TrainConfig c;
    try {
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.rmsprop_decay = j.value("rmsprop_decay", c.rmsprop_decay);
        c.rmsprop_epsilon = j.value("rmsprop_epsilon", c.rmsprop_epsilon);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.calibration_epochs = j.value("calibration_epochs", c.calibration_epochs);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.clip_group_norm = j.value("clip_group_norm", c.clip_group_norm);
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception & e) {
        throw ValidationError("invalid_config", std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

json to_json(const RunRecord & r, bool include_timing) {
    json j = {
        {"phase", r.phase},
        {"config", r.config},
        {"initial_digest", r.initial_digest.hex()},
        {"final_digest", r.final_digest.hex()},
        {"epoch_loss", r.epoch_loss},
        {"steps", r.steps},
        {"diverged", r.diverged},
    };
    if (include_timing) j["wall_time_seconds"] = r.wall_time_seconds;
    return j;
}

TrainResult train(const ToyModel & model, const Dataset & data, const TrainConfig & config, size_t epochs,
                  const std::string & phase) {
    config.validate();
    data.validate();
    require_compatible(model, data);
    if (data.size() == 0) throw ValidationError("invalid_dataset", "train: empty dataset");
    const SparsityMask * mask = config.mask ? &*config.mask : nullptr;
    if (mask && !aligned(*mask, model.params())) {
        throw AlignmentError("train: mask is not aligned with model parameters");
    }

    const auto t0 = std::chrono::steady_clock::now();
    const ModelSpec & spec = model.spec();
    ParameterMap w = model.params();
    OptimizerState state = OptimizerState::zeros_like(w);
    const RmsPropConfig opt = config.optimizer();

    RunRecord record;
    record.phase = phase;
    record.config = to_json(config);
    record.config["epochs_run"] = epochs;
    record.initial_digest = digest(w);

    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    const size_t n = data.size();
    std::vector<size_t> order(n);
    bool capped = false;
    for (size_t epoch = 0; epoch < epochs && !capped; ++epoch) {
        std::iota(order.begin(), order.end(), size_t{0});
        Rng rng(config.seed ^ static_cast<uint64_t>(epoch));
        rng.shuffle(order);

        double loss_sum = 0.0;
        size_t batches = 0;
        for (size_t begin = 0; begin < n; begin += config.batch_size) {
            const size_t end = std::min(n, begin + config.batch_size);
            LossAndGrads lg;
            try {
                lg = forward_backward(spec, w, data, std::span(order).subspan(begin, end - begin));
            } catch (const NonFiniteError & e) {
                record.diverged = true;
                record.final_digest = digest(w);
                record.wall_time_seconds = elapsed();
                throw DivergenceError(phase + ": training diverged at step " + std::to_string(record.steps) + " (" +
                                          e.what() + ")",
                                      record);
            }
            clip_group_norm(lg.grads, config.clip_group_norm);
            if (mask) lg.grads = apply_mask(lg.grads, *mask);
            try {
                rmsprop_step(w, lg.grads, state, opt, mask);
            } catch (const NonFiniteError & e) {
                record.diverged = true;
                record.final_digest = digest(w);
                record.wall_time_seconds = elapsed();
                throw DivergenceError(phase + ": " + e.what(), record);
            }
            loss_sum += lg.loss;
            ++batches;
            ++record.steps;
            if (config.max_steps && record.steps >= config.max_steps) {
                capped = true;
                break;
            }
        }
        record.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    }

    record.final_digest = digest(w);
    record.wall_time_seconds = elapsed();
    return {std::move(w), std::move(record)};
}

TrainResult train(const ToyModel & model, const Dataset & data, const TrainConfig & config) {
    return train(model, data, config, config.epochs, "train");
}

size_t calibration_rows(double fraction, size_t n) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw ValidationError("invalid_argument", "calibration fraction must lie in [0, 1]");
    }
    const double rows = std::ceil(fraction * static_cast<double>(n) - 1e-9);
    return std::min(n, static_cast<size_t>(std::max(0.0, rows)));
}

static TrainConfig without_mask(const TrainConfig & config) {
    TrainConfig c = config;
    c.mask.reset();
    return c;
}

static TrainConfig with_mask(const TrainConfig & config, SparsityMask mask) {
    TrainConfig c = config;
    c.mask = std::move(mask);
    return c;
}

static SparseAdapter masked_adapter(const ParameterMap & finetuned, const ParameterMap & base, const SparsityMask & mask) {
    SparseAdapter adapter = encode(apply_mask(compute_task_vector(finetuned, base), mask));
    adapter.declared_sparsity = mask.declared_sparsity;
    return adapter;
}

LotaResult run_lota(const ToyModel & base, const Dataset & data, double sparsity, const TrainConfig & config,
                double calibration_fraction) {
    if (config.mask) throw ValidationError("invalid_config", "lota: config must not carry a mask");
    const size_t cal_rows = calibration_rows(calibration_fraction, data.size());

    LotaResult result;
    if (calibration_fraction == 0.0) {
        result.mask = random_mask(base.params(), sparsity, config.seed);
    } else {
        TrainResult cal = train(base, data.head(cal_rows), without_mask(config), config.calibration_epochs, "calibration");
        result.mask = sparsify(compute_task_vector(cal.params, base.params()), sparsity);
        result.calibration = std::move(cal.record);
    }

    TrainResult adapted = train(base, data, with_mask(config, result.mask), config.epochs, "sparse_adaptation");
    result.adapter = masked_adapter(adapted.params, base.params(), result.mask);
    result.w_final = std::move(adapted.params);
    result.adaptation = std::move(adapted.record);
    return result;
}

IterativeLotaResult iterative_lota(const ToyModel & base, const Dataset & data, const std::vector<double> & schedule,
                                   const TrainConfig & config) {
    if (schedule.empty()) throw ValidationError("invalid_argument", "iterative_lota: empty sparsity schedule");
    for (size_t i = 0; i < schedule.size(); ++i) {
        if (!(schedule[i] >= 0.0 && schedule[i] < 1.0)) {
            throw ValidationError("invalid_argument", "iterative_lota: schedule entries must lie in [0, 1)");
        }
        if (i && !(schedule[i] > schedule[i - 1])) {
            throw ValidationError("invalid_argument", "iterative_lota: schedule must be strictly increasing");
        }
    }

    IterativeLotaResult out;
    out.final = run_lota(base, data, schedule[0], config, 1.0);
    out.stage_masks.push_back(out.final.mask);
    out.stage_weights.push_back(out.final.w_final);

    for (size_t j = 1; j < schedule.size(); ++j) {
        const LotaResult & prev = out.final;
        SparsityMask mask = sparsify_within(compute_task_vector(prev.w_final, base.params()), schedule[j], prev.mask);
        TrainResult adapted = train(base, data, with_mask(config, mask), config.epochs,
                                    "sparse_adaptation_stage" + std::to_string(j));
        LotaResult next;
        next.calibration = prev.adaptation;
        next.adaptation = std::move(adapted.record);
        next.adapter = masked_adapter(adapted.params, base.params(), mask);
        next.mask = std::move(mask);
        next.w_final = std::move(adapted.params);
        out.final = std::move(next);
        out.stage_masks.push_back(out.final.mask);
        out.stage_weights.push_back(out.final.w_final);
    }
    return out;
}

LottoResult lotto(const ToyModel & start, const std::vector<Dataset> & datasets, double sparsity,
                  const TrainConfig & config, const LottoOptions & options) {
    if (datasets.empty()) throw ValidationError("invalid_argument", "lotto: no datasets given");
    if (!(sparsity >= 0.0 && sparsity < 1.0)) throw ValidationError("invalid_argument", "lotto: sparsity must lie in [0, 1)");
    if (config.mask) throw ValidationError("invalid_config", "lotto: config must not carry a mask");

    SparsityMask constraint;
    if (options.constraint) {
        constraint = *options.constraint;
        if (!aligned(constraint, start.params())) throw AlignmentError("lotto: constraint mask is not aligned");
    } else if (options.base) {
        constraint = nonzero_mask(compute_task_vector(start.params(), *options.base).delta);
    } else {
        constraint = SparsityMask::all(start.params(), false);
    }

    LottoResult out;
    out.constraint_trace.push_back(constraint);
    ParameterMap w = start.params();
    const size_t n = w.total_size();
    const size_t k = kept_count_for(sparsity, n);

    for (size_t i = 0; i < datasets.size(); ++i) {
        const size_t free_positions = n - constraint.kept_count();
        if (k > free_positions) {
            throw ValidationError("constraint_exhausted", "lotto: constraint set exhausted before task " + std::to_string(i) +
                                                              " (need " + std::to_string(k) + " free positions, " +
                                                              std::to_string(free_positions) + " left)");
        }
        const ToyModel current = start.with_params(w);
        const SparsityMask trainable = mask_complement(constraint);

        TrainResult constrained = train(current, datasets[i], with_mask(config, trainable), config.calibration_epochs,
                                        "constraint_phase_task" + std::to_string(i));
        SparsityMask task_mask = sparsify_within(compute_task_vector(constrained.params, w), sparsity, trainable);

        TrainResult sparse = train(current, datasets[i], with_mask(config, task_mask), config.epochs,
                                   "sparse_phase_task" + std::to_string(i));
        out.adapters.push_back(masked_adapter(sparse.params, w, task_mask));
        out.records.push_back(std::move(constrained.record));
        out.records.push_back(std::move(sparse.record));

        constraint = mask_union(constraint, task_mask);
        out.constraint_trace.push_back(constraint);
        out.task_masks.push_back(std::move(task_mask));
        w = std::move(sparse.params);
        out.stage_weights.push_back(w);
    }
    out.w_final = std::move(w);
    return out;
}

Dataset mixed_dataset(const Dataset & dataset_b, const Dataset & dataset_a, double mix_fraction, uint64_t seed) {
    if (!(mix_fraction >= 0.0 && mix_fraction <= 1.0)) {
        throw ValidationError("invalid_argument", "mixed_data_fft: mix fraction must lie in [0, 1]");
    }
    const size_t m = static_cast<size_t>(std::floor(mix_fraction * static_cast<double>(dataset_b.size()) + 0.5));
    if (m > dataset_a.size()) {
        throw ValidationError("invalid_argument", "mixed_data_fft: task A has fewer than " + std::to_string(m) + " rows");
    }
    if (m == 0) return dataset_b;
    std::vector<size_t> rows(dataset_a.size());
    std::iota(rows.begin(), rows.end(), size_t{0});
    Rng rng(seed);
    for (size_t i = 0; i < m; ++i) {
        std::swap(rows[i], rows[i + static_cast<size_t>(rng.uniform_index(rows.size() - i))]);
    }
    rows.resize(m);
    return concat(dataset_b, dataset_a.subset(rows), dataset_b.task_id + "+mix(" + dataset_a.task_id + ")");
}

TrainResult mixed_data_fft(const ToyModel & start, const Dataset & dataset_b, const Dataset & dataset_a,
                           double mix_fraction, const TrainConfig & config) {
    return train(start, mixed_dataset(dataset_b, dataset_a, mix_fraction, config.seed), without_mask(config),
                 config.epochs, "mixed_fft");
}

} // namespace lota
