#include "lota/errors.hpp"
#include "lota/harness.hpp"
#include "lota/merge.hpp"
#include "lota/rng.hpp"
#include "lota/tasks.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

using namespace lota;
using json = nlohmann::json;

namespace {

// A linear model whose output is constant: class 0 always wins.
ToyModel constant_class0(size_t input_dim, size_t classes) {
    ModelSpec spec;
    spec.widths = {static_cast<int64_t>(input_dim), static_cast<int64_t>(classes)};
    ParameterMap p = parameter_layout(spec);
    p = zeros_like(p);
    p.at("layer0.bias").data[0] = 1.0f;
    return ToyModel(spec, p);
}

Dataset labelled(const std::vector<int32_t> & labels, size_t dim) {
    Dataset d;
    d.task_id = "fixed";
    d.input_dim = dim;
    d.inputs.assign(labels.size() * dim, 0.5f);
    d.labels = labels;
    return d;
}

json small_common() {
    return {{"model", {{"widths", {16, 32, 4}}, {"activation", "tanh"}, {"head", "softmax_cross_entropy"}, {"init_seed", 3}}},
            {"train", {{"learning_rate", 0.01}, {"batch_size", 32}, {"epochs", 3}, {"calibration_epochs", 3}, {"seed", 0}}},
            {"seeds", {0, 1}}};
}

json clusters_json(const std::string & id, size_t offset, uint64_t seed) {
    return {{"task_id", id}, {"generator", "gaussian_clusters"}, {"input_dim", 16}, {"output_dim", 4},
            {"subspace_offset", offset}, {"subspace_dim", 8}, {"clusters_per_class", 2}, {"noise", 0.5},
            {"n_train", 256}, {"n_val", 64}, {"n_test", 128}, {"seed", seed}};
}

json with(json base, const json & extra) {
    for (const auto & [k, v] : extra.items()) base[k] = v;
    return base;
}

} // namespace

TEST(Evaluate, ConstantPredictor) {
    const ToyModel m = constant_class0(3, 2);
    EXPECT_DOUBLE_EQ(evaluate(m, labelled({0, 0, 0, 0}, 3)), 1.0);
    EXPECT_DOUBLE_EQ(evaluate(m, labelled({0, 1, 0, 1}, 3)), 0.5);
}

TEST(Evaluate, BalancedRandomSetNearHalf) {
    SyntheticTaskSpec t;
    t.generator = TaskGenerator::GaussianClusters;
    t.output_dim = 2;
    t.n_test = 2000;
    t.seed = 8;
    const TaskData d = generate_task(t);
    const double acc = evaluate(constant_class0(16, 2), d.test);
    EXPECT_NEAR(acc, 0.5, 4.0 * std::sqrt(0.25 / 2000.0));
}

TEST(Evaluate, PerfectTeacherHasZeroError) {
    ModelSpec spec;
    spec.widths = {4, 6, 2};
    spec.head = Head::MeanSquaredError;
    const ToyModel teacher = ToyModel::initialize(spec, 9);
    Dataset d;
    d.task_id = "teacher";
    d.input_dim = 4;
    d.target_dim = 2;
    Rng rng(1);
    for (int r = 0; r < 20; ++r) {
        std::vector<float> x(4);
        for (float & v : x) v = static_cast<float>(rng.normal());
        d.inputs.insert(d.inputs.end(), x.begin(), x.end());
        for (double y : teacher.forward(x)) d.targets.push_back(static_cast<float>(y));
    }
    // Targets are rounded to float, so the error is at rounding level.
    EXPECT_NEAR(evaluate(teacher, d), 0.0, 1e-12);
    EXPECT_STREQ(utility_metric_name(spec), "neg_mse");
}

TEST(Evaluate, InvariantUnderRowPermutation) {
    SyntheticTaskSpec t;
    t.seed = 3;
    const TaskData d = generate_task(t);
    ModelSpec spec;
    spec.widths = {16, 8, 4};
    const ToyModel m = ToyModel::initialize(spec, 2);
    std::vector<size_t> rows(d.test.size());
    std::iota(rows.begin(), rows.end(), 0);
    Rng rng(4);
    rng.shuffle(rows);
    EXPECT_DOUBLE_EQ(evaluate(m, d.test), evaluate(m, d.test.subset(rows)));
}

TEST(Tasks, DeterministicAndDisjoint) {
    for (TaskGenerator g : {TaskGenerator::GaussianClusters, TaskGenerator::RandomTeacher, TaskGenerator::ParitySlice}) {
        SyntheticTaskSpec t;
        t.generator = g;
        t.seed = 17;
        if (g == TaskGenerator::ParitySlice) {
            t.subspace_dim = 12;
            t.noise = 0.0;
        }
        const TaskData a = generate_task(t);
        const TaskData b = generate_task(t);
        EXPECT_EQ(a.train.inputs, b.train.inputs);
        EXPECT_EQ(a.test.inputs, b.test.inputs);
        std::set<std::vector<float>> train_rows;
        for (size_t r = 0; r < a.train.size(); ++r) train_rows.insert({a.train.row(r).begin(), a.train.row(r).end()});
        for (size_t r = 0; r < a.test.size(); ++r) {
            EXPECT_EQ(train_rows.count({a.test.row(r).begin(), a.test.row(r).end()}), 0u);
        }
        EXPECT_EQ(a.train.size(), t.n_train);
        EXPECT_EQ(a.test.size(), t.n_test);
    }
}

TEST(Tasks, SubspaceOutsideIsZero) {
    SyntheticTaskSpec t;
    t.subspace_offset = 8;
    t.subspace_dim = 4;
    const TaskData d = generate_task(t);
    for (size_t r = 0; r < d.train.size(); ++r) {
        const auto row = d.train.row(r);
        for (size_t i = 0; i < 16; ++i) {
            if (i < 8 || i >= 12) {
                ASSERT_EQ(row[i], 0.0f);
            }
        }
    }
}

TEST(Tasks, FreshModelFitsEachTask) {
    ModelSpec spec;
    spec.widths = {16, 64, 4};
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 10;
    const SyntheticTaskSpec clusters = task_spec_from_json(clusters_json("A", 0, 100));
    SyntheticTaskSpec parity = task_spec_from_json(
        {{"task_id", "C"}, {"generator", "parity_slice"}, {"input_dim", 16}, {"output_dim", 4}, {"subspace_offset", 6},
         {"subspace_dim", 10}, {"parity_bits", 2}, {"noise", 0.0}, {"n_test", 256}, {"seed", 200}});
    for (const auto & t : {clusters, parity}) {
        const TaskData d = generate_task(t);
        const ToyModel base = ToyModel::initialize(spec, 1);
        const double acc = evaluate(base.with_params(train(base, d.train, cfg).params), d.test);
        EXPECT_GE(acc, 0.85) << t.task_id;
    }
}

TEST(Tasks, PlantedSupportHasRequestedDensity) {
    ModelSpec spec;
    spec.widths = {16, 16, 4};
    spec.head = Head::MeanSquaredError;
    const ToyModel base = ToyModel::initialize(spec, 1);
    PlantedTaskSpec p;
    p.density = 0.05;
    p.n_train = 64;
    p.n_val = 16;
    p.n_test = 16;
    p.seed = 4;
    const PlantedTask t = generate_planted_task(base, p);
    EXPECT_EQ(t.support.kept_count(), kept_count_for(0.95, base.params().total_size()));
    EXPECT_EQ(t.data.train.size(), 64u);
    EXPECT_EQ(t.data.train.target_dim, 4u);
    ModelSpec cls = spec;
    cls.head = Head::SoftmaxCrossEntropy;
    EXPECT_THROW(generate_planted_task(ToyModel::initialize(cls, 1), p), ValidationError);
}

TEST(TaskSpec, JsonRoundTripRejectsUnknownKeys) {
    const SyntheticTaskSpec t = task_spec_from_json(clusters_json("A", 0, 5));
    EXPECT_EQ(to_json(task_spec_from_json(to_json(t))), to_json(t));
    EXPECT_THROW(task_spec_from_json(with(clusters_json("A", 0, 5), {{"bogus", 1}})), ValidationError);
    EXPECT_THROW(task_spec_from_json(with(clusters_json("A", 0, 5), {{"generator", "nope"}})), ValidationError);
}

TEST(Summary, MeanAndStandardError) {
    const SummaryStat s = summarize({1.0, 2.0, 3.0, 4.0});
    EXPECT_DOUBLE_EQ(s.mean, 2.5);
    EXPECT_NEAR(s.std_error, std::sqrt(5.0 / 3.0) / 2.0, 1e-15);
    EXPECT_EQ(summarize({7.0}).std_error, 0.0);
    EXPECT_EQ(summarize({}).n, 0u);
}

TEST(Experiment, SequentialReportShape) {
    const json spec = with(small_common(), {{"experiment", "sequential"},
                                            {"task_a", clusters_json("A", 0, 100)},
                                            {"tasks_b", {clusters_json("B", 8, 200)}},
                                            {"interference_threshold", 0.0}});
    const MetricsReport r = run_experiment(spec);
    EXPECT_EQ(r.experiment, "sequential");
    EXPECT_EQ(r.metric, "accuracy");
    EXPECT_TRUE(r.failures.empty());
    ASSERT_NE(r.check("lotto_freezes_task_a"), nullptr);
    EXPECT_TRUE(r.check("lotto_freezes_task_a")->passed);
    EXPECT_TRUE(r.assertions_passed());
    for (const char * m : {"FFT->FFT", "LoTA->FFT", "FFT->LoTA", "LoTA->LoTTO", "FFT->FFT(Mixed)"}) {
        EXPECT_EQ(r.column(m, "B", "drop_a").size(), 2u) << m;
    }
    EXPECT_EQ(r.column("Baseline:FFT", "A", "utility").size(), 2u);
    EXPECT_EQ(r.column("Baseline:LoTA", "B", "utility").size(), 2u);
    // drop_b is measured against the FFT-on-B baseline of the same seed.
    for (uint64_t seed : {0u, 1u}) {
        const ReportRow * base_b = r.row(seed, "Baseline:FFT", "B");
        const ReportRow * row = r.row(seed, "LoTA->LoTTO", "B");
        ASSERT_TRUE(base_b && row);
        EXPECT_DOUBLE_EQ(row->values.at("drop_b"), base_b->values.at("utility") - row->values.at("utility_b"));
    }
    // Deterministic report, independent of the thread count.
    EXPECT_EQ(to_json(run_experiment(spec, 2)).dump(), to_json(r).dump());
}

TEST(Experiment, FailedPreconditionIsAnAssertion) {
    const json spec = with(small_common(), {{"experiment", "sequential"},
                                            {"task_a", clusters_json("A", 0, 100)},
                                            {"tasks_b", {clusters_json("B", 8, 200)}},
                                            {"methods", {"FFT->FFT"}},
                                            {"interference_threshold", 2.0}});
    const MetricsReport r = run_experiment(spec);
    ASSERT_NE(r.check("interference_precondition[B]"), nullptr);
    EXPECT_FALSE(r.check("interference_precondition[B]")->passed);
    EXPECT_FALSE(r.assertions_passed());
}

TEST(Experiment, SparsityZeroMatchesFftAndKFollowsRounding) {
    const json spec = with(small_common(), {{"experiment", "sparsity"},
                                            {"task", clusters_json("A", 0, 100)},
                                            {"sparsities", {0.0, 0.5, 0.9, 0.99}},
                                            {"iterative_schedule", {0.9, 0.99}}});
    const MetricsReport r = run_experiment(spec);
    ASSERT_NE(r.check("s0_matches_fft"), nullptr);
    EXPECT_TRUE(r.check("s0_matches_fft")->passed);
    EXPECT_EQ(r.column("LoTA[s=0]", "A", "utility"), r.column("FFT", "A", "utility"));
    const double n = r.column("FFT", "A", "k").front();
    for (double k : r.column("LoTA[s=0.9]", "A", "k")) {
        EXPECT_EQ(k, static_cast<double>(kept_count_for(0.9, static_cast<size_t>(n))));
    }
    EXPECT_EQ(r.column("LoTA*[s=0.99]", "A", "utility").size(), 2u);
    EXPECT_NE(r.check("iterative_beats_direct"), nullptr);
    EXPECT_NE(r.check("plateau"), nullptr);
}

TEST(Experiment, CalibrationReferenceRowHasZeroDrop) {
    const json spec = with(small_common(), {{"experiment", "calibration"},
                                            {"task", clusters_json("A", 0, 100)},
                                            {"fractions", {1.0, 0.1, 0.0}}});
    const MetricsReport r = run_experiment(spec);
    for (double d : r.column("LoTA[f=1]", "A", "drop")) EXPECT_EQ(d, 0.0);
    EXPECT_EQ(r.column("LoTA[f=0]", "A", "calibration_rows"), (std::vector<double>{0.0, 0.0}));
    EXPECT_EQ(r.column("LoTA[f=0.1]", "A", "calibration_rows"), (std::vector<double>{26.0, 26.0}));
    EXPECT_NE(r.check("drop_ordering"), nullptr);
}

TEST(Experiment, MergingLotaNeedsOneCell) {
    json c = clusters_json("C", 8, 300);
    const json spec = with(small_common(), {{"experiment", "merging"},
                                            {"tasks", {clusters_json("A", 0, 100), c}},
                                            {"combos", {"FFT+FFT", "LoTA+LoTA"}}});
    const MetricsReport r = run_experiment(spec);
    EXPECT_EQ(r.column("LoTA+LoTA", "all", "cells"), (std::vector<double>{1.0, 1.0}));
    EXPECT_EQ(r.column("FFT+FFT", "all", "cells"), (std::vector<double>{9.0, 9.0}));
    ASSERT_NE(r.check("lota_merge_without_search"), nullptr);
    EXPECT_TRUE(r.check("lota_merge_without_search")->passed);
    const std::string csv = to_csv(r);
    EXPECT_EQ(csv.substr(0, csv.find('\n')).rfind("seed,method,task", 0), 0u);
}

TEST(Experiment, SelfMergeKeepsUtility) {
    SyntheticTaskSpec t = task_spec_from_json(clusters_json("A", 0, 100));
    const TaskData d = generate_task(t);
    ModelSpec spec;
    spec.widths = {16, 32, 4};
    const ToyModel base = ToyModel::initialize(spec, 1);
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 3;
    const LotaResult l = run_lota(base, d.train, 0.9, cfg);
    const std::vector<SparseAdapter> twice{l.adapter, l.adapter};
    EXPECT_DOUBLE_EQ(evaluate(base.with_params(merge_lota(base.params(), twice)), d.test),
                     evaluate(base.with_params(l.w_final), d.test));
}

TEST(Experiment, RejectsBadSpecs) {
    EXPECT_THROW(run_experiment(json{{"experiment", "unknown"}}), ValidationError);
    EXPECT_THROW(run_experiment(json::object()), ValidationError);
    EXPECT_THROW(run_experiment(with(small_common(), {{"experiment", "sequential"}})), ValidationError);
    EXPECT_THROW(run_experiment(with(small_common(), {{"experiment", "sparsity"}, {"task", clusters_json("A", 0, 1)},
                                                      {"extra", true}})),
                 ValidationError);
    EXPECT_THROW(run_experiment(with(small_common(), {{"experiment", "merging"},
                                                      {"tasks", {clusters_json("A", 0, 1)}}})),
                 ValidationError);
}

TEST(Experiment, SpecJsonRoundTrips) {
    const json seq = with(small_common(), {{"experiment", "sequential"},
                                           {"task_a", clusters_json("A", 0, 100)},
                                           {"tasks_b", {clusters_json("B", 8, 200)}}});
    const SequentialSpec s = sequential_spec_from_json(seq);
    EXPECT_EQ(to_json(sequential_spec_from_json(to_json(s))), to_json(s));
    EXPECT_EQ(parse_sequential_method("LoTA→LoTTO"), SequentialMethod::LotaLotto);
    EXPECT_STREQ(sequential_method_name(SequentialMethod::FftFftMixed), "FFT->FFT(Mixed)");
    EXPECT_EQ(combo_name({AdaptMethod::Lota, AdaptMethod::Fft}), "LoTA+FFT");
}
