#include "lota/adapter.hpp"
#include "lota/errors.hpp"
#include "lota/merge.hpp"
#include "lota/rng.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <cmath>

using namespace lota;

namespace {

ParameterMap flat(std::vector<float> values) {
    ParameterMap pm;
    const auto n = static_cast<int64_t>(values.size());
    pm.insert("w", Tensor({n}, std::move(values)));
    return pm;
}

ParameterMap random_dense(Rng & rng, const ParameterMap & like) {
    ParameterMap pm = zeros_like(like);
    for (auto & [name, t] : pm) {
        for (float & v : t.data) v = static_cast<float>(rng.normal());
    }
    return pm;
}

ParameterMap sparse_like(Rng & rng, const ParameterMap & like, double density) {
    ParameterMap pm = zeros_like(like);
    for (auto & [name, t] : pm) {
        for (float & v : t.data) {
            if (rng.uniform01() < density) v = static_cast<float>(rng.normal());
        }
    }
    return pm;
}

TaskVector tv_for(const ParameterMap & base, ParameterMap delta) {
    return TaskVector{std::move(delta), digest(base)};
}

void expect_bitwise(const std::vector<float> & got, const std::vector<float> & want) {
    ASSERT_EQ(got.size(), want.size());
    for (size_t i = 0; i < got.size(); ++i) {
        ASSERT_EQ(std::bit_cast<uint32_t>(got[i]), std::bit_cast<uint32_t>(want[i])) << "coordinate " << i;
    }
}

} // namespace

TEST(TaskArithmetic, SingleVectorEqualsApply) {
    Rng rng(50);
    const ParameterMap base = random_dense(rng, oracle::random_sparse_map(rng, 0.0));
    const TaskVector tv = tv_for(base, sparse_like(rng, base, 0.2));
    const std::vector<double> w{1.0};
    EXPECT_TRUE(bitwise_equal(task_arithmetic_merge(base, std::span(&tv, 1), w),
                              apply_adapter(base, encode(tv), true)));
}

TEST(TaskArithmetic, OppositeVectorsCancel) {
    Rng rng(51);
    const ParameterMap base = random_dense(rng, oracle::random_sparse_map(rng, 0.0));
    const ParameterMap delta = random_dense(rng, base);
    const std::vector<double> neg{-1.0};
    const std::vector<TaskVector> tvs{tv_for(base, delta),
                                      tv_for(base, linear_combine(neg, std::span(&delta, 1)))};
    EXPECT_TRUE(bitwise_equal(task_arithmetic_merge(base, tvs, std::vector<double>{1.0, 1.0}), base));
}

TEST(TaskArithmetic, DisjointSupports) {
    const ParameterMap base = flat({1.0f, 2.0f, 3.0f, 4.0f});
    const std::vector<TaskVector> tvs{tv_for(base, flat({0.5f, 0.0f, 0.0f, 0.0f})),
                                      tv_for(base, flat({0.0f, 0.0f, -0.25f, 0.0f}))};
    EXPECT_EQ(task_arithmetic_merge(base, tvs, std::vector<double>{1.0, 1.0}).at("w").data,
              (std::vector<float>{1.5f, 2.0f, 2.75f, 4.0f}));
}

TEST(TaskArithmetic, RejectsForeignBase) {
    const ParameterMap base = flat({1.0f, 2.0f});
    const TaskVector tv{flat({0.5f, 0.0f}), digest(flat({0.0f, 0.0f}))};
    EXPECT_THROW(task_arithmetic_merge(base, std::span(&tv, 1), std::vector<double>{1.0}), DigestMismatch);
}

TEST(Ties, ElectedSignMean) {
    const ParameterMap base = flat({0.0f});
    const std::vector<TaskVector> tvs{tv_for(base, flat({0.4f})), tv_for(base, flat({-0.1f}))};
    EXPECT_EQ(ties_merge(base, tvs, std::vector<double>{1.0, 1.0}).at("w").data[0], 0.4f);
}

TEST(Ties, ExactSignTieLeavesBase) {
    const ParameterMap base = flat({0.5f});
    const std::vector<TaskVector> tvs{tv_for(base, flat({0.3f})), tv_for(base, flat({-0.3f}))};
    EXPECT_EQ(ties_merge(base, tvs, std::vector<double>{1.0, 1.0}).at("w").data[0], 0.5f);
}

TEST(Ties, SingleTaskEqualsTaskArithmeticAndApply) {
    Rng rng(52);
    for (int trial = 0; trial < 20; ++trial) {
        const ParameterMap base = random_dense(rng, oracle::random_sparse_map(rng, 0.0));
        const TaskVector tv = tv_for(base, sparse_like(rng, base, 0.3));
        const ParameterMap ties = ties_merge(base, std::span(&tv, 1), std::vector<double>{1.0});
        EXPECT_TRUE(bitwise_equal(ties, task_arithmetic_merge(base, std::span(&tv, 1), std::vector<double>{1.0})));
        EXPECT_TRUE(bitwise_equal(ties, apply_adapter(base, encode(tv), true)));
    }
}

TEST(Ties, SupportWithinUnionOfTrimmedSupports) {
    Rng rng(53);
    for (int trial = 0; trial < 30; ++trial) {
        const ParameterMap space = oracle::random_sparse_map(rng, 0.0);
        const ParameterMap base = zeros_like(space);
        std::vector<TaskVector> tvs;
        std::vector<double> fractions;
        SparsityMask support = SparsityMask::all(base, false);
        for (int t = 0; t < 3; ++t) {
            tvs.push_back(tv_for(base, sparse_like(rng, base, 0.5)));
            fractions.push_back(0.1 + 0.9 * rng.uniform01());
            const auto k = static_cast<size_t>(std::floor(fractions.back() * static_cast<double>(base.total_size()) + 0.5));
            support = mask_union(support, mask_intersection(top_k_mask(tvs.back().delta, k), nonzero_mask(tvs.back().delta)));
        }
        const ParameterMap out = ties_merge(base, tvs, fractions);
        const SparsityMask changed = nonzero_mask(out);
        EXPECT_EQ(overlap_stats(changed, support).intersection_count, changed.kept_count());
    }
}

TEST(Ties, ExhaustiveSmallInstancesMatchBruteForce) {
    const float grid[] = {-0.2f, -0.1f, 0.0f, 0.1f, 0.2f};
    const double fractions[] = {1.0 / 3.0, 0.5, 1.0};
    size_t instances = 0;
    for (size_t n = 1; n <= 3; ++n) {
        std::vector<float> base_values(n);
        for (size_t i = 0; i < n; ++i) base_values[i] = 0.25f * static_cast<float>(i) - 0.3f;
        const ParameterMap base = flat(base_values);
        size_t total = 1;
        for (size_t i = 0; i < 2 * n; ++i) total *= 5;
        for (size_t code = 0; code < total; ++code) {
            std::vector<float> a(n), b(n);
            size_t c = code;
            for (size_t i = 0; i < n; ++i, c /= 5) a[i] = grid[c % 5];
            for (size_t i = 0; i < n; ++i, c /= 5) b[i] = grid[c % 5];
            const std::vector<TaskVector> tvs{tv_for(base, flat(a)), tv_for(base, flat(b))};
            for (double fa : fractions) {
                for (double fb : fractions) {
                    const std::vector<double> f{fa, fb};
                    const auto got = ties_merge(base, tvs, f).at("w").data;
                    expect_bitwise(got, oracle::ties(base_values, {a, b}, f, 1.0));
                    ++instances;
                }
            }
        }
    }
    EXPECT_EQ(instances, 9u * (25 + 625 + 15625));
}

TEST(Ties, RandomFiveCoordinateInstancesMatchBruteForce) {
    Rng rng(54);
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<float> base_values(5), a(5), b(5);
        for (size_t i = 0; i < 5; ++i) {
            base_values[i] = static_cast<float>(rng.normal());
            a[i] = rng.uniform01() < 0.2 ? 0.0f : static_cast<float>(rng.normal());
            b[i] = rng.uniform01() < 0.2 ? 0.0f : static_cast<float>(rng.normal());
        }
        const ParameterMap base = flat(base_values);
        const std::vector<TaskVector> tvs{tv_for(base, flat(a)), tv_for(base, flat(b))};
        const std::vector<double> f{0.2 + 0.8 * rng.uniform01(), 0.2 + 0.8 * rng.uniform01()};
        const double lambda = 0.5 + rng.uniform01();
        expect_bitwise(ties_merge(base, tvs, f, lambda).at("w").data, oracle::ties(base_values, {a, b}, f, lambda));
    }
}

TEST(Ties, RejectsBadFractions) {
    const ParameterMap base = flat({0.0f});
    const std::vector<TaskVector> tvs{tv_for(base, flat({0.4f}))};
    EXPECT_THROW(ties_merge(base, tvs, std::vector<double>{0.0}), ValidationError);
    EXPECT_THROW(ties_merge(base, tvs, std::vector<double>{1.5}), ValidationError);
    EXPECT_THROW(ties_merge(base, tvs, std::vector<double>{1.0, 1.0}), ValidationError);
}

TEST(MergeLota, DisjointSupportsEqualApplyingBoth) {
    Rng rng(55);
    const ParameterMap base = random_dense(rng, oracle::random_sparse_map(rng, 0.0, 3, 400));
    const SparsityMask ma = random_mask(base, 0.9, 1);
    const SparsityMask mb = random_mask(base, 0.9, 2, &ma);
    const SparseAdapter a = encode(apply_mask(tv_for(base, random_dense(rng, base)), ma));
    const SparseAdapter b = encode(apply_mask(tv_for(base, random_dense(rng, base)), mb));
    const std::vector<SparseAdapter> both{a, b};
    const ParameterMap merged = merge_lota(base, both);
    const ParameterMap sequential = apply_adapter(apply_adapter(base, a, true), b, false);
    EXPECT_TRUE(bitwise_equal(merged, sequential));
}

TEST(MergeLota, SameAdapterTwiceIsIdempotent) {
    Rng rng(56);
    const ParameterMap base = random_dense(rng, oracle::random_sparse_map(rng, 0.0));
    const SparseAdapter a = encode(apply_mask(tv_for(base, random_dense(rng, base)), random_mask(base, 0.8, 3)));
    const std::vector<SparseAdapter> twice{a, a};
    EXPECT_TRUE(bitwise_equal(merge_lota(base, twice), apply_adapter(base, a, true)));
}

TEST(MergeLota, OppositeSignsCancelToBase) {
    const ParameterMap base = flat({1.0f, 2.0f});
    const std::vector<SparseAdapter> ads{encode(tv_for(base, flat({0.3f, 0.0f}))),
                                         encode(tv_for(base, flat({-0.3f, 0.0f})))};
    EXPECT_TRUE(bitwise_equal(merge_lota(base, ads), base));
}

TEST(MergeLota, PermutationInvariant) {
    Rng rng(57);
    const ParameterMap base = random_dense(rng, oracle::random_sparse_map(rng, 0.0, 3, 300));
    std::vector<SparseAdapter> ads;
    for (uint64_t i = 0; i < 4; ++i) {
        ads.push_back(encode(apply_mask(tv_for(base, random_dense(rng, base)), random_mask(base, 0.5, 10 + i))));
    }
    const ParameterMap ref = merge_lota(base, ads);
    std::vector<size_t> order{0, 1, 2, 3};
    while (std::next_permutation(order.begin(), order.end())) {
        std::vector<SparseAdapter> perm;
        for (size_t i : order) perm.push_back(ads[i]);
        ASSERT_TRUE(bitwise_equal(merge_lota(base, perm), ref));
    }
}

TEST(GridSearch, NineCellsAndBestScore) {
    const ParameterMap base = flat({0.0f, 0.0f, 0.0f, 0.0f});
    const std::vector<TaskVector> tvs{tv_for(base, flat({0.4f, -0.3f, 0.2f, 0.1f})),
                                      tv_for(base, flat({-0.1f, 0.2f, 0.3f, 0.4f}))};
    size_t calls = 0;
    const auto r = merge_grid_search(
        base, tvs, std::vector<double>{0.1, 0.2, 0.3},
        [&](const ParameterMap & m) {
            ++calls;
            return static_cast<double>(m.at("w").data[3]);
        });
    EXPECT_EQ(calls, 9u);
    EXPECT_EQ(r.table.size(), 9u);
    // Row-major with the first task varying slowest.
    EXPECT_EQ(r.table[1].keep_fractions, (std::vector<double>{0.1, 0.2}));
    EXPECT_EQ(r.table[3].keep_fractions, (std::vector<double>{0.2, 0.1}));
    double best = r.table[0].score;
    for (const auto & cell : r.table) best = std::max(best, cell.score);
    EXPECT_EQ(r.table[r.best_index].score, best);
    EXPECT_EQ(r.best.tasks.size(), 2u);
    EXPECT_EQ(r.best.tasks[0].trim_keep_fraction, r.table[r.best_index].keep_fractions[0]);
    EXPECT_EQ(r.best.base_digest, digest(base));
}

TEST(GridSearch, ConstantObjectivePicksFirstCell) {
    const ParameterMap base = flat({0.0f, 0.0f});
    const std::vector<TaskVector> tvs{tv_for(base, flat({0.4f, -0.3f})), tv_for(base, flat({-0.1f, 0.2f}))};
    const auto r = merge_grid_search(base, tvs, std::vector<double>{0.1, 0.2, 0.3},
                                     [](const ParameterMap &) { return 1.0; });
    EXPECT_EQ(r.best_index, 0u);
    const auto single = merge_grid_search(base, tvs, std::vector<double>{0.5},
                                          [](const ParameterMap &) { return -3.0; });
    EXPECT_EQ(single.table.size(), 1u);
    EXPECT_EQ(single.best_index, 0u);
}

TEST(MergeSpec, JsonRoundTripAndExecution) {
    const ParameterMap base = flat({0.0f, 1.0f, 2.0f});
    const std::vector<TaskVector> tvs{tv_for(base, flat({0.4f, -0.3f, 0.0f})), tv_for(base, flat({0.2f, 0.2f, 0.1f}))};
    MergeSpec spec;
    spec.base_digest = digest(base);
    spec.tasks = {{"a", 1.0, 1.0}, {"b", 1.0, 1.0}};
    const MergeSpec back = merge_spec_from_json(to_json(spec));
    EXPECT_EQ(to_json(back), to_json(spec));
    EXPECT_TRUE(bitwise_equal(merge(base, tvs, spec), ties_merge(base, tvs, std::vector<double>{1.0, 1.0})));
    spec.elect_signs = false;
    EXPECT_TRUE(bitwise_equal(merge(base, tvs, spec), task_arithmetic_merge(base, tvs, std::vector<double>{1.0, 1.0})));
    EXPECT_THROW(merge_spec_from_json(nlohmann::json{{"tasks", 3}}), ValidationError);
}
