#include "lota/tasks.hpp"

#include "lota/errors.hpp"
#include "lota/rng.hpp"

#include <cmath>
#include <initializer_list>
#include <unordered_set>

namespace lota {

using json = nlohmann::json;

namespace {

void require_known_keys(const json & j, std::initializer_list<const char *> known, const char * context) {
    if (!j.is_object()) throw ValidationError("invalid_config", std::string(context) + ": expected a JSON object");
    for (const auto & [key, value] : j.items()) {
        bool ok = false;
        for (const char * k : known) ok = ok || key == k;
        if (!ok) throw ValidationError("invalid_config", std::string(context) + ": unknown key '" + key + "'");
    }
}

} // namespace

const char * generator_name(TaskGenerator g) {
    switch (g) {
        case TaskGenerator::GaussianClusters: return "gaussian_clusters";
        case TaskGenerator::RandomTeacher: return "random_teacher";
        case TaskGenerator::ParitySlice: return "parity_slice";
    }
    return "?";
}

TaskGenerator parse_generator(const std::string & s) {
    if (s == "gaussian_clusters" || s == "gaussian-cluster-classification") return TaskGenerator::GaussianClusters;
    if (s == "random_teacher" || s == "random-teacher-regression") return TaskGenerator::RandomTeacher;
    if (s == "parity_slice" || s == "parity-slice-classification") return TaskGenerator::ParitySlice;
    throw ValidationError("invalid_config", "unknown task generator '" + s + "'");
}

void SyntheticTaskSpec::validate() const {
    auto fail = [&](const std::string & what) { throw ValidationError("invalid_config", "task '" + task_id + "': " + what); };
    if (input_dim == 0 || output_dim == 0) fail("dimensions must be positive");
    if (subspace_offset >= input_dim) fail("subspace offset outside the input");
    if (subspace_offset + active_dim() > input_dim) fail("subspace exceeds the input");
    if (n_train == 0 || n_test == 0) fail("train and test splits must be nonempty");
    if (!(noise >= 0.0)) fail("noise must be >= 0");
    if (is_classification() && output_dim < 2) fail("classification needs at least two classes");
    if (generator == TaskGenerator::GaussianClusters && clusters_per_class == 0) fail("clusters_per_class must be positive");
    if (generator == TaskGenerator::RandomTeacher && teacher_hidden == 0) fail("teacher_hidden must be positive");
    if (generator == TaskGenerator::ParitySlice) {
        if (parity_bits == 0 || parity_bits > active_dim()) fail("parity_bits must lie in [1, subspace width]");
        if (active_dim() < 63 && (n_train + n_val + n_test) > (uint64_t{1} << active_dim())) {
            fail("not enough distinct parity inputs for the requested sample counts");
        }
    }
}

json to_json(const SyntheticTaskSpec & s) {
    return {
        {"task_id", s.task_id},
        {"generator", generator_name(s.generator)},
        {"input_dim", s.input_dim},
        {"output_dim", s.output_dim},
        {"subspace_offset", s.subspace_offset},
        {"subspace_dim", s.subspace_dim},
        {"n_train", s.n_train},
        {"n_val", s.n_val},
        {"n_test", s.n_test},
        {"noise", s.noise},
        {"seed", s.seed},
        {"cluster_scale", s.cluster_scale},
        {"clusters_per_class", s.clusters_per_class},
        {"teacher_hidden", s.teacher_hidden},
        {"teacher_scale", s.teacher_scale},
        {"parity_bits", s.parity_bits},
    };
}

SyntheticTaskSpec task_spec_from_json(const json & j) {
    require_known_keys(j, {"task_id", "generator", "input_dim", "output_dim", "subspace_offset", "subspace_dim",
                           "n_train", "n_val", "n_test", "noise", "seed", "cluster_scale", "clusters_per_class",
                           "teacher_hidden", "teacher_scale", "parity_bits"},
                       "task spec");
    SyntheticTaskSpec s;
    try {
        s.task_id = j.value("task_id", s.task_id);
        s.generator = parse_generator(j.value("generator", std::string(generator_name(s.generator))));
        s.input_dim = j.value("input_dim", s.input_dim);
        s.output_dim = j.value("output_dim", s.output_dim);
        s.subspace_offset = j.value("subspace_offset", s.subspace_offset);
        s.subspace_dim = j.value("subspace_dim", s.subspace_dim);
        s.n_train = j.value("n_train", s.n_train);
        s.n_val = j.value("n_val", s.n_val);
        s.n_test = j.value("n_test", s.n_test);
        s.noise = j.value("noise", s.noise);
        s.seed = j.value("seed", s.seed);
        s.cluster_scale = j.value("cluster_scale", s.cluster_scale);
        s.clusters_per_class = j.value("clusters_per_class", s.clusters_per_class);
        s.teacher_hidden = j.value("teacher_hidden", s.teacher_hidden);
        s.teacher_scale = j.value("teacher_scale", s.teacher_scale);
        s.parity_bits = j.value("parity_bits", s.parity_bits);
    } catch (const json::exception & e) {
        throw ValidationError("invalid_config", std::string("task spec: ") + e.what());
    }
    s.validate();
    return s;
}

namespace {

Dataset empty_like(const SyntheticTaskSpec & spec) {
    Dataset d;
    d.task_id = spec.task_id;
    d.input_dim = spec.input_dim;
    d.target_dim = spec.is_classification() ? 0 : spec.output_dim;
    return d;
}

Dataset generate_all(const SyntheticTaskSpec & spec, Rng & rng, size_t total) {
    Dataset d = empty_like(spec);
    const size_t width = spec.active_dim();
    const size_t off = spec.subspace_offset;
    d.inputs.assign(total * spec.input_dim, 0.0f);

    switch (spec.generator) {
        case TaskGenerator::GaussianClusters: {
            const size_t centres = spec.output_dim * spec.clusters_per_class;
            std::vector<double> mean(centres * width);
            for (double & m : mean) m = spec.cluster_scale * rng.normal();
            for (size_t r = 0; r < total; ++r) {
                const size_t c = r % centres;
                float * x = d.inputs.data() + r * spec.input_dim + off;
                for (size_t i = 0; i < width; ++i) x[i] = static_cast<float>(mean[c * width + i] + spec.noise * rng.normal());
                d.labels.push_back(static_cast<int32_t>(c % spec.output_dim));
            }
            break;
        }
        case TaskGenerator::RandomTeacher: {
            const size_t h = spec.teacher_hidden;
            std::vector<double> w1(h * width), b1(h), w2(spec.output_dim * h);
            for (double & v : w1) v = spec.teacher_scale * rng.normal() / std::sqrt(static_cast<double>(width));
            for (double & v : b1) v = 0.1 * rng.normal();
            for (double & v : w2) v = rng.normal() / std::sqrt(static_cast<double>(h));
            std::vector<double> hidden(h);
            for (size_t r = 0; r < total; ++r) {
                float * x = d.inputs.data() + r * spec.input_dim + off;
                for (size_t i = 0; i < width; ++i) x[i] = static_cast<float>(rng.normal());
                for (size_t j = 0; j < h; ++j) {
                    double acc = b1[j];
                    for (size_t i = 0; i < width; ++i) acc += w1[j * width + i] * x[i];
                    hidden[j] = std::tanh(acc);
                }
                for (size_t o = 0; o < spec.output_dim; ++o) {
                    double acc = 0.0;
                    for (size_t j = 0; j < h; ++j) acc += w2[o * h + j] * hidden[j];
                    d.targets.push_back(static_cast<float>(acc + spec.noise * rng.normal()));
                }
            }
            break;
        }
        case TaskGenerator::ParitySlice: {
            std::unordered_set<std::string> seen;
            std::string key(width, '0');
            for (size_t r = 0; r < total; ++r) {
                std::vector<int> bits(width);
                do {
                    for (size_t i = 0; i < width; ++i) {
                        bits[i] = static_cast<int>(rng.uniform_index(2));
                        key[i] = static_cast<char>('0' + bits[i]);
                    }
                } while (!seen.insert(key).second);
                int parity = 0;
                for (size_t i = 0; i < spec.parity_bits; ++i) parity ^= bits[i];
                float * x = d.inputs.data() + r * spec.input_dim + off;
                for (size_t i = 0; i < width; ++i) {
                    x[i] = static_cast<float>((bits[i] ? 1.0 : -1.0) + spec.noise * rng.normal());
                }
                d.labels.push_back(parity);
            }
            break;
        }
    }
    return d;
}

} // namespace

TaskData generate_task(const SyntheticTaskSpec & spec) {
    spec.validate();
    Rng rng(spec.seed);
    const size_t total = spec.n_train + spec.n_val + spec.n_test;
    Dataset all = generate_all(spec, rng, total);

    std::vector<size_t> order(total);
    for (size_t i = 0; i < total; ++i) order[i] = i;
    rng.shuffle(order);

    auto take = [&](size_t begin, size_t count) {
        return all.subset(std::span(order).subspan(begin, count));
    };
    TaskData out;
    out.train = take(0, spec.n_train);
    out.val = take(spec.n_train, spec.n_val);
    out.test = take(spec.n_train + spec.n_val, spec.n_test);
    return out;
}

void PlantedTaskSpec::validate() const {
    auto fail = [&](const std::string & what) { throw ValidationError("invalid_config", "task '" + task_id + "': " + what); };
    if (!(density > 0.0 && density <= 1.0)) fail("density must lie in (0, 1]");
    if (!(scale > 0.0)) fail("scale must be positive");
    if (n_train == 0 || n_test == 0) fail("train and test splits must be nonempty");
    if (!(noise >= 0.0)) fail("noise must be >= 0");
}

json to_json(const PlantedTaskSpec & s) {
    return {
        {"task_id", s.task_id},
        {"generator", "planted_support"},
        {"density", s.density},
        {"scale", s.scale},
        {"n_train", s.n_train},
        {"n_val", s.n_val},
        {"n_test", s.n_test},
        {"noise", s.noise},
        {"seed", s.seed},
    };
}

PlantedTaskSpec planted_spec_from_json(const json & j) {
    require_known_keys(j, {"task_id", "generator", "density", "scale", "n_train", "n_val", "n_test", "noise", "seed"},
                       "planted task spec");
    PlantedTaskSpec s;
    try {
        s.task_id = j.value("task_id", s.task_id);
        s.density = j.value("density", s.density);
        s.scale = j.value("scale", s.scale);
        s.n_train = j.value("n_train", s.n_train);
        s.n_val = j.value("n_val", s.n_val);
        s.n_test = j.value("n_test", s.n_test);
        s.noise = j.value("noise", s.noise);
        s.seed = j.value("seed", s.seed);
    } catch (const json::exception & e) {
        throw ValidationError("invalid_config", std::string("planted task spec: ") + e.what());
    }
    s.validate();
    return s;
}

PlantedTask generate_planted_task(const ToyModel & base, const PlantedTaskSpec & spec) {
    spec.validate();
    if (base.spec().head != Head::MeanSquaredError) {
        throw ValidationError("invalid_config", "task '" + spec.task_id + "': planted tasks need a mean_squared_error head");
    }
    PlantedTask out;
    Rng rng(spec.seed);
    out.support = random_mask(base.params(), 1.0 - spec.density, rng.next_u64());
    ParameterMap teacher = base.params();
    for (auto & [name, t] : teacher) {
        const auto & keep = out.support.entries.at(name).keep;
        for (size_t i = 0; i < t.data.size(); ++i) {
            if (keep[i]) t.data[i] += static_cast<float>(spec.scale * rng.normal());
        }
    }
    const ToyModel model = base.with_params(std::move(teacher));
    const size_t in = static_cast<size_t>(base.spec().widths.front());
    const size_t outd = static_cast<size_t>(base.spec().widths.back());

    auto draw = [&](size_t n) {
        Dataset d;
        d.task_id = spec.task_id;
        d.input_dim = in;
        d.target_dim = outd;
        d.inputs.resize(n * in);
        for (float & x : d.inputs) x = static_cast<float>(rng.normal());
        d.targets.reserve(n * outd);
        for (size_t r = 0; r < n; ++r) {
            for (double y : model.forward(d.row(r))) d.targets.push_back(static_cast<float>(y + spec.noise * rng.normal()));
        }
        return d;
    };
    out.data.train = draw(spec.n_train);
    out.data.val = draw(spec.n_val);
    out.data.test = draw(spec.n_test);
    return out;
}

} // namespace lota
