#pragma once

#include "lota/model.hpp"
#include "lota/sparsity.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>

namespace lota {

enum class TaskGenerator { GaussianClusters, RandomTeacher, ParitySlice };

const char * generator_name(TaskGenerator g);
TaskGenerator parse_generator(const std::string & s);

// Desk-scale synthetic task. Inputs live in `input_dim` dimensions but only
// the subspace [subspace_offset, subspace_offset + subspace_dim) carries
// signal; the rest is zero, so tasks on disjoint subspaces share a model
// without sharing inputs.
//
//   gaussian_clusters:  output_dim classes, `clusters_per_class` Gaussian
//                       blobs each, centres ~ N(0, cluster_scale^2 I),
//                       input noise stddev `noise`
//   random_teacher:     regression onto a random tanh MLP with
//                       `teacher_hidden` units, x ~ N(0, I), target noise
//                       stddev `noise`
//   parity_slice:       +-1 inputs, label = parity of the first
//                       `parity_bits` coordinates, gaussian input noise
struct SyntheticTaskSpec {
    std::string task_id = "task";
    TaskGenerator generator = TaskGenerator::GaussianClusters;
    size_t input_dim = 16;
    size_t output_dim = 4;
    size_t subspace_offset = 0;
    size_t subspace_dim = 0;  // 0 = everything after the offset
    size_t n_train = 512;
    size_t n_val = 256;
    size_t n_test = 512;
    double noise = 0.1;
    uint64_t seed = 0;

    double cluster_scale = 1.0;
    size_t clusters_per_class = 1;
    size_t teacher_hidden = 16;
    double teacher_scale = 1.0;
    size_t parity_bits = 2;

    size_t active_dim() const { return subspace_dim ? subspace_dim : input_dim - subspace_offset; }
    bool is_classification() const { return generator != TaskGenerator::RandomTeacher; }
    void validate() const;
};

nlohmann::json to_json(const SyntheticTaskSpec & spec);
SyntheticTaskSpec task_spec_from_json(const nlohmann::json & j);

struct TaskData {
    Dataset train;
    Dataset val;
    Dataset test;
};

// Splits are disjoint by construction: rows are drawn once and then
// partitioned, and parity inputs are drawn without repetition.
TaskData generate_task(const SyntheticTaskSpec & spec);

// Regression onto a teacher that equals `base` except at a random `density`
// fraction of positions, which are shifted by N(0, scale^2). The adaptation
// therefore has a known sparse support. Inputs ~ N(0, I), target noise
// stddev `noise`; the base must have a mean-squared-error head.
struct PlantedTaskSpec {
    std::string task_id = "planted";
    double density = 0.01;
    double scale = 0.5;
    size_t n_train = 8192;
    size_t n_val = 512;
    size_t n_test = 512;
    double noise = 0.0;
    uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const PlantedTaskSpec & spec);
PlantedTaskSpec planted_spec_from_json(const nlohmann::json & j);

struct PlantedTask {
    TaskData data;
    SparsityMask support;
};

PlantedTask generate_planted_task(const ToyModel & base, const PlantedTaskSpec & spec);

} // namespace lota
