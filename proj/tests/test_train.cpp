#include "lota/errors.hpp"
#include "lota/harness.hpp"
#include "lota/tasks.hpp"
#include "lota/train.hpp"

#include <gtest/gtest.h>

#include <cstring>

using namespace lota;

namespace {

ModelSpec small_spec() {
    ModelSpec spec;
    spec.widths = {16, 32, 4};
    return spec;
}

SyntheticTaskSpec clusters(uint64_t seed, size_t offset = 0) {
    SyntheticTaskSpec t;
    t.task_id = "clusters" + std::to_string(offset);
    t.subspace_offset = offset;
    t.subspace_dim = 8;
    t.clusters_per_class = 2;
    t.noise = 0.5;
    t.n_train = 256;
    t.n_val = 64;
    t.n_test = 256;
    t.seed = seed;
    return t;
}

TrainConfig config(uint64_t seed = 0) {
    TrainConfig c;
    c.learning_rate = 0.01;
    c.batch_size = 32;
    c.epochs = 4;
    c.calibration_epochs = 4;
    c.seed = seed;
    return c;
}

// Every coordinate where `mask` is false holds the same bits in a and b.
bool frozen_outside(const ParameterMap & a, const ParameterMap & b, const SparsityMask & mask) {
    for (const auto & [name, t] : a) {
        const auto & keep = mask.entries.at(name).keep;
        const auto & other = b.at(name).data;
        for (size_t i = 0; i < t.data.size(); ++i) {
            if (!keep[i] && std::memcmp(&t.data[i], &other[i], sizeof(float)) != 0) return false;
        }
    }
    return true;
}

} // namespace

TEST(TrainConfig, JsonRoundTripAndValidation) {
    TrainConfig c = config(9);
    c.max_steps = 17;
    const TrainConfig back = train_config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_THROW(train_config_from_json(nlohmann::json{{"learning_rate", -1.0}}), ValidationError);
    EXPECT_THROW(train_config_from_json(nlohmann::json{{"lr", 0.1}}), ValidationError);
    EXPECT_THROW(train_config_from_json(nlohmann::json{{"batch_size", 0}}), ValidationError);
}

TEST(Train, DeterministicGivenSeed) {
    const ToyModel m = ToyModel::initialize(small_spec(), 1);
    const TaskData d = generate_task(clusters(3));
    const TrainResult a = train(m, d.train, config(5));
    const TrainResult b = train(m, d.train, config(5));
    EXPECT_TRUE(bitwise_equal(a.params, b.params));
    EXPECT_EQ(a.record.final_digest, b.record.final_digest);
    EXPECT_EQ(a.record.epoch_loss, b.record.epoch_loss);
    EXPECT_FALSE(bitwise_equal(a.params, train(m, d.train, config(6)).params));
    EXPECT_EQ(a.record.steps, 4u * 8u);
    EXPECT_EQ(a.record.initial_digest, digest(m.params()));
}

TEST(Train, MaxStepsCapsRun) {
    const ToyModel m = ToyModel::initialize(small_spec(), 1);
    const TaskData d = generate_task(clusters(3));
    TrainConfig c = config();
    c.max_steps = 5;
    EXPECT_EQ(train(m, d.train, c).record.steps, 5u);
}

TEST(Train, AllTrueMaskEqualsNoMask) {
    const ToyModel m = ToyModel::initialize(small_spec(), 1);
    const TaskData d = generate_task(clusters(3));
    TrainConfig masked = config();
    masked.mask = SparsityMask::all(m.params(), true);
    EXPECT_TRUE(bitwise_equal(train(m, d.train, masked).params, train(m, d.train, config()).params));
}

TEST(Train, AllFalseMaskFreezesEverything) {
    const ToyModel m = ToyModel::initialize(small_spec(), 1);
    const TaskData d = generate_task(clusters(3));
    TrainConfig masked = config();
    masked.mask = SparsityMask::all(m.params(), false);
    EXPECT_TRUE(bitwise_equal(train(m, d.train, masked).params, m.params()));
}

TEST(Train, SparseMaskFreezesAndMatchesDenseLoss) {
    // Same model and budget as the shipped experiment configs.
    ModelSpec spec;
    spec.widths = {16, 128, 128, 4};
    const ToyModel m = ToyModel::initialize(spec, 7);
    SyntheticTaskSpec t = clusters(100);
    t.n_train = SyntheticTaskSpec{}.n_train;
    const TaskData d = generate_task(t);
    TrainConfig c = config();
    c.epochs = 10;
    c.calibration_epochs = 10;
    const TrainResult dense = train(m, d.train, c);
    const LotaResult sparse = run_lota(m, d.train, 0.9, c);
    EXPECT_TRUE(frozen_outside(sparse.w_final, m.params(), sparse.mask));
    const double dense_loss = dataset_loss(m.with_params(dense.params), d.train);
    const double sparse_loss = dataset_loss(m.with_params(sparse.w_final), d.train);
    EXPECT_LE(std::fabs(sparse_loss - dense_loss), 0.02 * dense_loss)
        << "dense " << dense_loss << " sparse " << sparse_loss;
}

TEST(Train, RejectsMisalignedMask) {
    const ToyModel m = ToyModel::initialize(small_spec(), 1);
    const TaskData d = generate_task(clusters(3));
    ModelSpec other = small_spec();
    other.widths = {16, 8, 4};
    TrainConfig c = config();
    c.mask = SparsityMask::all(parameter_layout(other), true);
    EXPECT_THROW(train(m, d.train, c), AlignmentError);
}

TEST(Train, HugeLearningRateDiverges) {
    const ToyModel m = ToyModel::initialize(small_spec(), 1);
    const TaskData d = generate_task(clusters(3));
    TrainConfig c = config();
    c.learning_rate = 1e38;
    try {
        train(m, d.train, c);
        FAIL() << "expected divergence";
    } catch (const DivergenceError & e) {
        EXPECT_EQ(e.kind(), "divergence");
        EXPECT_TRUE(e.partial_record().diverged);
    }
}

TEST(Lota, ZeroSparsityEqualsFft) {
    const ToyModel m = ToyModel::initialize(small_spec(), 2);
    const TaskData d = generate_task(clusters(4));
    const LotaResult r = run_lota(m, d.train, 0.0, config());
    EXPECT_TRUE(bitwise_equal(r.w_final, train(m, d.train, config()).params));
    EXPECT_EQ(r.mask.kept_count(), m.params().total_size());
}

TEST(Lota, FrozenCoordinatesEqualBase) {
    const ToyModel m = ToyModel::initialize(small_spec(), 2);
    const TaskData d = generate_task(clusters(4));
    const LotaResult r = run_lota(m, d.train, 0.75, config());
    EXPECT_TRUE(frozen_outside(r.w_final, m.params(), r.mask));
    EXPECT_EQ(r.mask.kept_count(), kept_count_for(0.75, m.params().total_size()));
    // The adapter applied to the base reproduces the final weights.
    EXPECT_TRUE(bitwise_equal(decode(r.adapter, m.params()).delta,
                              apply_mask(compute_task_vector(r.w_final, m.params()), r.mask).delta));
    ASSERT_TRUE(r.calibration.has_value());
    EXPECT_EQ(r.calibration->initial_digest, digest(m.params()));
}

TEST(Lota, ZeroCalibrationFractionUsesRandomMask) {
    const ToyModel m = ToyModel::initialize(small_spec(), 2);
    const TaskData d = generate_task(clusters(4));
    const TrainConfig c = config(11);
    const LotaResult r = run_lota(m, d.train, 0.9, c, 0.0);
    EXPECT_TRUE(r.mask.same_selection(random_mask(m.params(), 0.9, 11)));
    EXPECT_FALSE(r.calibration.has_value());
}

TEST(Lota, CalibrationUsesLeadingRows) {
    EXPECT_EQ(calibration_rows(1.0, 256), 256u);
    EXPECT_EQ(calibration_rows(0.1, 256), 26u);
    EXPECT_EQ(calibration_rows(0.01, 256), 3u);
    EXPECT_EQ(calibration_rows(0.1, 8190), 819u);
    EXPECT_EQ(calibration_rows(0.0, 256), 0u);
    EXPECT_THROW(calibration_rows(1.5, 10), ValidationError);
}

TEST(IterativeLota, SingleStageEqualsLota) {
    const ToyModel m = ToyModel::initialize(small_spec(), 3);
    const TaskData d = generate_task(clusters(5));
    const IterativeLotaResult it = iterative_lota(m, d.train, {0.9}, config());
    const LotaResult direct = run_lota(m, d.train, 0.9, config());
    EXPECT_TRUE(bitwise_equal(it.final.w_final, direct.w_final));
    EXPECT_TRUE(it.final.mask.same_selection(direct.mask));
}

TEST(IterativeLota, FinalMaskNestedInFirstStage) {
    const ToyModel m = ToyModel::initialize(small_spec(), 3);
    const TaskData d = generate_task(clusters(5));
    const IterativeLotaResult it = iterative_lota(m, d.train, {0.9, 0.99}, config());
    ASSERT_EQ(it.stage_masks.size(), 2u);
    EXPECT_EQ(overlap_stats(it.stage_masks[0], it.stage_masks[1]).intersection_count, it.stage_masks[1].kept_count());
    EXPECT_TRUE(frozen_outside(it.final.w_final, m.params(), it.final.mask));
    EXPECT_THROW(iterative_lota(m, d.train, {0.99, 0.9}, config()), ValidationError);
}

TEST(IterativeLota, BeatsDirectAtHighSparsityOnMostSeeds) {
    int wins = 0;
    for (uint64_t seed = 0; seed < 5; ++seed) {
        const ToyModel m = ToyModel::initialize(small_spec(), 10 + seed);
        const TaskData d = generate_task(clusters(20 + seed));
        TrainConfig c = config(seed);
        c.epochs = 6;
        c.calibration_epochs = 6;
        const IterativeLotaResult it = iterative_lota(m, d.train, {0.9, 0.99}, c);
        const LotaResult direct = run_lota(m, d.train, 0.99, c);
        const double li = dataset_loss(m.with_params(it.final.w_final), d.train);
        const double ld = dataset_loss(m.with_params(direct.w_final), d.train);
        if (li <= ld) ++wins;
    }
    EXPECT_GE(wins, 4);
}

TEST(Lotto, SingleTaskEqualsLota) {
    const ToyModel m = ToyModel::initialize(small_spec(), 4);
    const TaskData d = generate_task(clusters(6));
    const LottoResult lt = lotto(m, {d.train}, 0.9, config());
    const LotaResult la = run_lota(m, d.train, 0.9, config());
    EXPECT_TRUE(bitwise_equal(lt.w_final, la.w_final));
    EXPECT_TRUE(lt.task_masks[0].same_selection(la.mask));
    EXPECT_EQ(lt.adapters[0], la.adapter);
}

TEST(Lotto, ThreeTasksDisjointAndFrozen) {
    const ToyModel m = ToyModel::initialize(small_spec(), 4);
    const std::vector<Dataset> data{generate_task(clusters(6, 0)).train, generate_task(clusters(7, 8)).train,
                                    generate_task(clusters(8, 4)).train};
    const LottoResult lt = lotto(m, data, 0.9, config());
    ASSERT_EQ(lt.task_masks.size(), 3u);
    for (size_t i = 0; i < 3; ++i) {
        for (size_t j = i + 1; j < 3; ++j) {
            EXPECT_EQ(overlap_stats(lt.task_masks[i], lt.task_masks[j]).intersection_count, 0u);
        }
        EXPECT_EQ(overlap_stats(lt.task_masks[i], lt.constraint_trace[i]).intersection_count, 0u);
    }
    // Task 0's coordinates survive tasks 1 and 2 bit for bit; every stage
    // only moves its own mask.
    const SparsityMask others = mask_complement(lt.task_masks[0]);
    EXPECT_TRUE(frozen_outside(lt.w_final, lt.stage_weights[0], others));
    EXPECT_TRUE(frozen_outside(lt.stage_weights[1], lt.stage_weights[0], lt.task_masks[1]));
    EXPECT_TRUE(frozen_outside(lt.stage_weights[2], lt.stage_weights[1], lt.task_masks[2]));
    EXPECT_EQ(lt.constraint_trace.back().kept_count(), 3 * kept_count_for(0.9, m.params().total_size()));
}

TEST(Lotto, ConstraintFromBaseDelta) {
    const ToyModel base = ToyModel::initialize(small_spec(), 4);
    const TaskData a = generate_task(clusters(6, 0));
    const LotaResult first = run_lota(base, a.train, 0.9, config());
    LottoOptions opts;
    opts.base = &base.params();
    const LottoResult lt = lotto(base.with_params(first.w_final), {generate_task(clusters(7, 8)).train}, 0.9, config(),
                                 opts);
    EXPECT_TRUE(lt.constraint_trace[0].same_selection(nonzero_mask(compute_task_vector(first.w_final, base.params()).delta)));
    EXPECT_EQ(overlap_stats(lt.task_masks[0], first.mask).intersection_count, 0u);
    EXPECT_TRUE(frozen_outside(lt.w_final, first.w_final, lt.task_masks[0]));
}

TEST(Lotto, ConstraintExhausted) {
    const ToyModel m = ToyModel::initialize(small_spec(), 4);
    const TaskData d = generate_task(clusters(6));
    try {
        lotto(m, {d.train, d.train}, 0.4, config());
        FAIL() << "expected constraint_exhausted";
    } catch (const ValidationError & e) {
        EXPECT_EQ(e.kind(), "constraint_exhausted");
    }
}

TEST(Mixed, ZeroFractionEqualsPlainFft) {
    const ToyModel m = ToyModel::initialize(small_spec(), 5);
    const TaskData a = generate_task(clusters(6, 0));
    const TaskData b = generate_task(clusters(7, 8));
    EXPECT_TRUE(bitwise_equal(mixed_data_fft(m, b.train, a.train, 0.0, config()).params,
                              train(m, b.train, config()).params));
}

TEST(Mixed, FullFractionDoublesTrainingSet) {
    const TaskData a = generate_task(clusters(6, 0));
    const TaskData b = generate_task(clusters(7, 8));
    const Dataset mixed = mixed_dataset(b.train, a.train, 1.0, 3);
    EXPECT_EQ(mixed.size(), 2 * b.train.size());
    EXPECT_EQ(mixed_dataset(b.train, a.train, 0.5, 3).size(), b.train.size() + b.train.size() / 2);
    EXPECT_THROW(mixed_dataset(b.train, a.train.head(10), 1.0, 3), ValidationError);
}

TEST(Mixed, RetainsTaskAAtLeastAsWellOnMostSeeds) {
    int wins = 0;
    for (uint64_t seed = 0; seed < 5; ++seed) {
        const ToyModel base = ToyModel::initialize(small_spec(), 30 + seed);
        const TaskData a = generate_task(clusters(40 + seed, 0));
        const TaskData b = generate_task(clusters(50 + seed, 8));
        const TrainConfig c = config(seed);
        const ToyModel after_a = base.with_params(train(base, a.train, c).params);
        const double plain = evaluate(after_a.with_params(train(after_a, b.train, c).params), a.test);
        const double mixed = evaluate(after_a.with_params(mixed_data_fft(after_a, b.train, a.train, 0.5, c).params), a.test);
        if (mixed >= plain) ++wins;
    }
    EXPECT_GE(wins, 4);
}
