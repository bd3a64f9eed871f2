#include "lota/harness.hpp"

#include "lota/adapter.hpp"
#include "lota/errors.hpp"
#include "lota/merge.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <exception>
#include <functional>
#include <initializer_list>
#include <set>
#include <sstream>
#include <thread>

namespace lota {

using json = nlohmann::json;

double evaluate(const ToyModel & model, const Dataset & data) {
    require_compatible(model, data);
    if (data.size() == 0) throw ValidationError("invalid_argument", "evaluate: empty dataset");
    if (!data.is_classification()) return -dataset_loss(model, data);
    size_t correct = 0;
    for (size_t r = 0; r < data.size(); ++r) {
        const std::vector<double> out = model.forward(data.row(r));
        const size_t best = static_cast<size_t>(std::max_element(out.begin(), out.end()) - out.begin());
        if (static_cast<int64_t>(best) == data.labels[r]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

const char * utility_metric_name(const ModelSpec & spec) {
    return spec.head == Head::SoftmaxCrossEntropy ? "accuracy" : "neg_mse";
}

json to_json(const ModelSpec & spec) {
    return {{"widths", spec.widths}, {"activation", activation_name(spec.activation)}, {"head", head_name(spec.head)}};
}

ModelSpec model_spec_from_json(const json & j) {
    ModelSpec spec;
    try {
        spec.widths = j.at("widths").get<std::vector<int64_t>>();
        spec.activation = parse_activation(j.value("activation", std::string(activation_name(spec.activation))));
        spec.head = parse_head(j.value("head", std::string(head_name(spec.head))));
    } catch (const json::exception & e) {
        throw ValidationError("invalid_config", std::string("model spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------- reports

bool MetricsReport::assertions_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const ReportCheck & c) { return !c.assertion || c.passed; });
}

const ReportCheck * MetricsReport::check(const std::string & name) const {
    for (const auto & c : checks) {
        if (c.name == name) return &c;
    }
    return nullptr;
}

std::vector<double> MetricsReport::column(const std::string & method, const std::string & task,
                                          const std::string & field) const {
    std::vector<double> out;
    for (const auto & r : rows) {
        if (r.method != method || r.task != task) continue;
        auto it = r.values.find(field);
        if (it != r.values.end()) out.push_back(it->second);
    }
    return out;
}

const ReportRow * MetricsReport::row(uint64_t seed, const std::string & method, const std::string & task) const {
    for (const auto & r : rows) {
        if (r.seed == seed && r.method == method && r.task == task) return &r;
    }
    return nullptr;
}

SummaryStat summarize(const std::vector<double> & values) {
    SummaryStat s;
    s.n = values.size();
    if (s.n == 0) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(s.n);
    if (s.n > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std_error = std::sqrt(ss / static_cast<double>(s.n - 1)) / std::sqrt(static_cast<double>(s.n));
    }
    return s;
}

json to_json(const MetricsReport & report) {
    json rows = json::array();
    std::vector<std::pair<std::string, std::string>> groups;
    for (const auto & r : report.rows) {
        rows.push_back({{"seed", r.seed}, {"method", r.method}, {"task", r.task}, {"values", r.values}});
        const auto key = std::make_pair(r.method, r.task);
        if (std::find(groups.begin(), groups.end(), key) == groups.end()) groups.push_back(key);
    }
    json summary = json::array();
    for (const auto & [method, task] : groups) {
        std::set<std::string> fields;
        for (const auto & r : report.rows) {
            if (r.method != method || r.task != task) continue;
            for (const auto & [f, v] : r.values) fields.insert(f);
        }
        for (const auto & f : fields) {
            const SummaryStat s = summarize(report.column(method, task, f));
            summary.push_back({{"method", method}, {"task", task}, {"field", f},
                               {"mean", s.mean}, {"std_error", s.std_error}, {"n", s.n}});
        }
    }
    json checks = json::array();
    for (const auto & c : report.checks) {
        checks.push_back({{"name", c.name}, {"passed", c.passed}, {"assertion", c.assertion}, {"detail", c.detail}});
    }
    json failures = json::array();
    for (const auto & f : report.failures) {
        failures.push_back({{"seed", f.seed}, {"kind", f.kind}, {"message", f.message}});
    }
    return {
        {"experiment", report.experiment},
        {"metric", report.metric},
        {"metric_note", "classification utility is exact-match accuracy, standing in for instruction-following "
                        "winrate and benchmark accuracy; regression utility is negative mean squared error"},
        {"seeds", report.seeds},
        {"spec", report.spec},
        {"rows", rows},
        {"summary", summary},
        {"checks", checks},
        {"failures", failures},
    };
}

std::string to_csv(const MetricsReport & report) {
    std::set<std::string> fields;
    for (const auto & r : report.rows) {
        for (const auto & [f, v] : r.values) fields.insert(f);
    }
    std::ostringstream out;
    out << "seed,method,task";
    for (const auto & f : fields) out << ',' << f;
    out << '\n';
    for (const auto & r : report.rows) {
        out << r.seed << ',' << r.method << ',' << r.task;
        for (const auto & f : fields) {
            out << ',';
            auto it = r.values.find(f);
            if (it != r.values.end()) out << json(it->second).dump();
        }
        out << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------- specs

namespace {

void require_known_keys(const json & j, std::initializer_list<const char *> known, const std::string & context) {
    if (!j.is_object()) throw ValidationError("invalid_config", context + ": expected a JSON object");
    for (const auto & [key, value] : j.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char * k) { return key == k; })) {
            throw ValidationError("invalid_config", context + ": unknown key '" + key + "'");
        }
    }
}

template <class T>
T field(const json & j, const char * key, T fallback, const std::string & context) {
    try {
        return j.contains(key) ? j.at(key).get<T>() : fallback;
    } catch (const json::exception & e) {
        throw ValidationError("invalid_config", context + ": field '" + key + "': " + e.what());
    }
}

const json & required(const json & j, const char * key, const std::string & context) {
    if (!j.contains(key)) throw ValidationError("invalid_config", context + ": missing '" + key + "'");
    return j.at(key);
}

ExperimentCommon common_from_json(const json & j) {
    ExperimentCommon c;
    const json & model = required(j, "model", "experiment");
    c.model = model_spec_from_json(model);
    c.model_init_seed = field<uint64_t>(model, "init_seed", c.model_init_seed, "model spec");
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (c.train.mask) throw ValidationError("invalid_config", "experiment: train config must not carry a mask");
    c.seeds = field(j, "seeds", c.seeds, "experiment");
    if (c.seeds.empty()) throw ValidationError("invalid_config", "experiment: seeds must be nonempty");
    c.threads = field<size_t>(j, "threads", c.threads, "experiment");
    return c;
}

json common_to_json(const ExperimentCommon & c, const char * experiment) {
    json model = to_json(c.model);
    model["init_seed"] = c.model_init_seed;
    return {{"experiment", experiment}, {"model", model}, {"train", to_json(c.train)}, {"seeds", c.seeds}};
}

void check_sparsity(double s, const std::string & context) {
    if (!(s >= 0.0 && s < 1.0)) throw ValidationError("invalid_config", context + ": sparsity must lie in [0, 1)");
}

void require_model_fits(const ExperimentCommon & c, const SyntheticTaskSpec & t) {
    if (c.model.input_dim() != t.input_dim || c.model.output_dim() != t.output_dim) {
        throw ValidationError("invalid_config", "task '" + t.task_id + "' does not match the model's input/output widths");
    }
    if (t.is_classification() != (c.model.head == Head::SoftmaxCrossEntropy)) {
        throw ValidationError("invalid_config", "task '" + t.task_id + "' does not match the model head");
    }
}

std::vector<SyntheticTaskSpec> task_list(const json & j, const std::string & context) {
    if (!j.is_array()) throw ValidationError("invalid_config", context + ": expected an array of tasks");
    std::vector<SyntheticTaskSpec> out;
    for (const auto & t : j) out.push_back(task_spec_from_json(t));
    return out;
}

json task_list_json(const std::vector<SyntheticTaskSpec> & tasks) {
    json out = json::array();
    for (const auto & t : tasks) out.push_back(to_json(t));
    return out;
}

// Shortest form: 0.9 -> "0.9", 1.0 -> "1".
std::string format_number(double v) {
    if (std::isfinite(v) && v == std::trunc(v) && std::fabs(v) < 1e15) return std::to_string(static_cast<int64_t>(v));
    return json(v).dump();
}

} // namespace

const char * sequential_method_name(SequentialMethod m) {
    switch (m) {
        case SequentialMethod::FftFft: return "FFT->FFT";
        case SequentialMethod::LotaFft: return "LoTA->FFT";
        case SequentialMethod::FftLota: return "FFT->LoTA";
        case SequentialMethod::LotaLotto: return "LoTA->LoTTO";
        case SequentialMethod::FftFftMixed: return "FFT->FFT(Mixed)";
    }
    return "?";
}

SequentialMethod parse_sequential_method(const std::string & s) {
    std::string t = s;
    for (size_t p; (p = t.find("→")) != std::string::npos;) t.replace(p, std::strlen("→"), "->");
    for (SequentialMethod m : {SequentialMethod::FftFft, SequentialMethod::LotaFft, SequentialMethod::FftLota,
                               SequentialMethod::LotaLotto, SequentialMethod::FftFftMixed}) {
        if (t == sequential_method_name(m)) return m;
    }
    throw ValidationError("invalid_config", "unknown sequential method '" + s + "'");
}

std::string combo_name(const std::vector<AdaptMethod> & combo) {
    std::string out;
    for (size_t i = 0; i < combo.size(); ++i) {
        if (i) out += '+';
        out += combo[i] == AdaptMethod::Fft ? "FFT" : "LoTA";
    }
    return out;
}

static std::vector<AdaptMethod> parse_combo(const std::string & s) {
    std::vector<AdaptMethod> out;
    std::stringstream in(s);
    std::string part;
    while (std::getline(in, part, '+')) {
        if (part == "FFT") out.push_back(AdaptMethod::Fft);
        else if (part == "LoTA") out.push_back(AdaptMethod::Lota);
        else throw ValidationError("invalid_config", "unknown merge method combination '" + s + "'");
    }
    return out;
}

json to_json(const SequentialSpec & s) {
    json j = common_to_json(s.common, "sequential");
    json methods = json::array();
    for (auto m : s.methods) methods.push_back(sequential_method_name(m));
    j["task_a"] = to_json(s.task_a);
    j["tasks_b"] = task_list_json(s.tasks_b);
    j["methods"] = methods;
    j["sparsity"] = s.sparsity;
    j["mix_fraction"] = s.mix_fraction;
    j["interference_threshold"] = s.interference_threshold;
    j["task_b_tolerance"] = s.task_b_tolerance;
    return j;
}

json to_json(const SparsityAblationSpec & s) {
    json j = common_to_json(s.common, "sparsity");
    j["task"] = to_json(s.task);
    j["sparsities"] = s.sparsities;
    j["iterative_schedule"] = s.iterative_schedule;
    j["plateau_tolerance"] = s.plateau_tolerance;
    j["plateau_max_sparsity"] = s.plateau_max_sparsity;
    return j;
}

json to_json(const CalibrationAblationSpec & s) {
    json j = common_to_json(s.common, "calibration");
    j["task"] = std::visit([](const auto & t) { return to_json(t); }, s.task);
    j["sparsity"] = s.sparsity;
    j["fractions"] = s.fractions;
    return j;
}

json to_json(const MergingSpec & s) {
    json j = common_to_json(s.common, "merging");
    json combos = json::array();
    for (const auto & c : s.combos) combos.push_back(combo_name(c));
    j["tasks"] = task_list_json(s.tasks);
    j["combos"] = combos;
    j["sparsity"] = s.sparsity;
    j["grid"] = s.grid;
    j["lambda"] = s.lambda;
    return j;
}

SequentialSpec sequential_spec_from_json(const json & j) {
    const std::string ctx = "sequential experiment";
    require_known_keys(j, {"experiment", "model", "train", "seeds", "threads", "task_a", "task_b", "tasks_b", "methods",
                           "sparsity", "mix_fraction", "interference_threshold", "task_b_tolerance"}, ctx);
    SequentialSpec s;
    s.common = common_from_json(j);
    s.task_a = task_spec_from_json(required(j, "task_a", ctx));
    if (j.contains("task_b")) s.tasks_b.push_back(task_spec_from_json(j.at("task_b")));
    if (j.contains("tasks_b")) {
        for (auto & t : task_list(j.at("tasks_b"), ctx)) s.tasks_b.push_back(std::move(t));
    }
    if (s.tasks_b.empty()) throw ValidationError("invalid_config", ctx + ": needs task_b or tasks_b");
    if (j.contains("methods")) {
        s.methods.clear();
        for (const auto & m : field<std::vector<std::string>>(j, "methods", {}, ctx)) s.methods.push_back(parse_sequential_method(m));
    }
    s.sparsity = field(j, "sparsity", s.sparsity, ctx);
    s.mix_fraction = field(j, "mix_fraction", s.mix_fraction, ctx);
    s.interference_threshold = field(j, "interference_threshold", s.interference_threshold, ctx);
    s.task_b_tolerance = field(j, "task_b_tolerance", s.task_b_tolerance, ctx);
    check_sparsity(s.sparsity, ctx);
    if (!(s.mix_fraction >= 0.0)) throw ValidationError("invalid_config", ctx + ": mix_fraction must be >= 0");
    require_model_fits(s.common, s.task_a);
    for (const auto & t : s.tasks_b) require_model_fits(s.common, t);
    return s;
}

SparsityAblationSpec sparsity_spec_from_json(const json & j) {
    const std::string ctx = "sparsity ablation";
    require_known_keys(j, {"experiment", "model", "train", "seeds", "threads", "task", "sparsities",
                           "iterative_schedule", "plateau_tolerance", "plateau_max_sparsity"}, ctx);
    SparsityAblationSpec s;
    s.common = common_from_json(j);
    s.task = task_spec_from_json(required(j, "task", ctx));
    s.sparsities = field(j, "sparsities", s.sparsities, ctx);
    s.iterative_schedule = field(j, "iterative_schedule", s.iterative_schedule, ctx);
    s.plateau_tolerance = field(j, "plateau_tolerance", s.plateau_tolerance, ctx);
    s.plateau_max_sparsity = field(j, "plateau_max_sparsity", s.plateau_max_sparsity, ctx);
    for (double v : s.sparsities) check_sparsity(v, ctx);
    for (double v : s.iterative_schedule) check_sparsity(v, ctx);
    require_model_fits(s.common, s.task);
    return s;
}

CalibrationAblationSpec calibration_spec_from_json(const json & j) {
    const std::string ctx = "calibration ablation";
    require_known_keys(j, {"experiment", "model", "train", "seeds", "threads", "task", "sparsity", "fractions"}, ctx);
    CalibrationAblationSpec s;
    s.common = common_from_json(j);
    const json & task = required(j, "task", ctx);
    if (task.is_object() && task.value("generator", std::string()) == "planted_support") {
        s.task = planted_spec_from_json(task);
        if (s.common.model.head != Head::MeanSquaredError) {
            throw ValidationError("invalid_config", ctx + ": planted tasks need a mean_squared_error head");
        }
    } else {
        s.task = task_spec_from_json(task);
        require_model_fits(s.common, std::get<SyntheticTaskSpec>(s.task));
    }
    s.sparsity = field(j, "sparsity", s.sparsity, ctx);
    s.fractions = field(j, "fractions", s.fractions, ctx);
    check_sparsity(s.sparsity, ctx);
    for (double f : s.fractions) {
        if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("invalid_config", ctx + ": fractions must lie in [0, 1]");
    }
    if (std::find(s.fractions.begin(), s.fractions.end(), 1.0) == s.fractions.end()) {
        throw ValidationError("invalid_config", ctx + ": fractions must include the 1.0 reference");
    }
    return s;
}

MergingSpec merging_spec_from_json(const json & j) {
    const std::string ctx = "merging experiment";
    require_known_keys(j, {"experiment", "model", "train", "seeds", "threads", "tasks", "combos", "sparsity", "grid",
                           "lambda"}, ctx);
    MergingSpec s;
    s.common = common_from_json(j);
    s.tasks = task_list(required(j, "tasks", ctx), ctx);
    if (s.tasks.size() < 2) throw ValidationError("invalid_config", ctx + ": needs at least two tasks");
    for (const auto & t : s.tasks) require_model_fits(s.common, t);
    if (j.contains("combos")) {
        for (const auto & c : field<std::vector<std::string>>(j, "combos", {}, ctx)) s.combos.push_back(parse_combo(c));
    } else {
        // FFT+FFT, LoTA+FFT, FFT+LoTA, LoTA+LoTA for two tasks; all-FFT and
        // all-LoTA otherwise.
        const size_t n = s.tasks.size();
        s.combos.push_back(std::vector<AdaptMethod>(n, AdaptMethod::Fft));
        if (n == 2) {
            s.combos.push_back({AdaptMethod::Lota, AdaptMethod::Fft});
            s.combos.push_back({AdaptMethod::Fft, AdaptMethod::Lota});
        }
        s.combos.push_back(std::vector<AdaptMethod>(n, AdaptMethod::Lota));
    }
    for (const auto & c : s.combos) {
        if (c.size() != s.tasks.size()) {
            throw ValidationError("invalid_config", ctx + ": combination '" + combo_name(c) + "' does not name one method per task");
        }
    }
    s.sparsity = field(j, "sparsity", s.sparsity, ctx);
    s.grid = field(j, "grid", s.grid, ctx);
    s.lambda = field(j, "lambda", s.lambda, ctx);
    check_sparsity(s.sparsity, ctx);
    if (s.grid.empty()) throw ValidationError("invalid_config", ctx + ": grid must be nonempty");
    for (double f : s.grid) {
        if (!(f > 0.0 && f <= 1.0)) throw ValidationError("invalid_config", ctx + ": grid values must lie in (0, 1]");
    }
    return s;
}

// ---------------------------------------------------------------- experiments

namespace {

struct SeedResult {
    std::vector<ReportRow> rows;
    std::map<std::string, bool> flags;
    std::optional<SeedFailure> failure;
};

// Runs `body` for every seed, concurrently when threads > 1; results come
// back in seed order. Runtime failures are recorded against their seed;
// anything else propagates.
std::vector<SeedResult> for_each_seed(const std::vector<uint64_t> & seeds, size_t threads,
                                      const std::function<void(uint64_t, SeedResult &)> & body) {
    std::vector<SeedResult> results(seeds.size());
    std::vector<std::exception_ptr> errors(seeds.size());
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (size_t i; (i = next.fetch_add(1)) < seeds.size();) {
            try {
                body(seeds[i], results[i]);
            } catch (const RuntimeFailure & e) {
                results[i] = SeedResult{};
                results[i].failure = SeedFailure{seeds[i], e.kind(), e.what()};
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const size_t n = std::clamp<size_t>(threads, 1, seeds.size());
    if (n == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    }
    for (auto & e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return results;
}

MetricsReport assemble(const char * experiment, const ExperimentCommon & common, json spec,
                       std::vector<SeedResult> & results) {
    MetricsReport report;
    report.experiment = experiment;
    report.metric = utility_metric_name(common.model);
    report.spec = std::move(spec);
    report.seeds = common.seeds;
    for (auto & r : results) {
        for (auto & row : r.rows) report.rows.push_back(std::move(row));
        if (r.failure) report.failures.push_back(*r.failure);
    }
    return report;
}

ReportCheck seed_trend(const std::string & name, size_t successes, size_t completed, json detail = json::object()) {
    ReportCheck c;
    c.name = name;
    c.passed = completed > 0 && successes * 5 >= completed * 4;
    detail["successes"] = successes;
    detail["seeds"] = completed;
    detail["rule"] = "holds in at least 4 of every 5 seeds";
    c.detail = std::move(detail);
    return c;
}

SyntheticTaskSpec offset_seed(SyntheticTaskSpec t, uint64_t seed) {
    t.seed += seed;
    return t;
}

TrainConfig seeded(const TrainConfig & c, uint64_t seed) {
    TrainConfig out = c;
    out.seed = c.seed + seed;
    return out;
}

ReportRow make_row(uint64_t seed, std::string method, std::string task, std::map<std::string, double> values) {
    return ReportRow{seed, std::move(method), std::move(task), std::move(values)};
}

bool frozen_bitwise(const ParameterMap & before, const ParameterMap & after, const SparsityMask & frozen) {
    for (const auto & [name, t] : before) {
        const auto & keep = frozen.entries.at(name).keep;
        const auto & a = after.at(name).data;
        for (size_t i = 0; i < t.data.size(); ++i) {
            if (keep[i] && std::memcmp(&t.data[i], &a[i], sizeof(float)) != 0) return false;
        }
    }
    return true;
}

} // namespace

MetricsReport run_sequential_experiment(const SequentialSpec & spec) {
    const ExperimentCommon & c = spec.common;
    auto results = for_each_seed(c.seeds, c.threads, [&](uint64_t seed, SeedResult & out) {
        const TrainConfig cfg = seeded(c.train, seed);
        const ToyModel base = ToyModel::initialize(c.model, c.model_init_seed + seed);
        const TaskData a = generate_task(offset_seed(spec.task_a, seed));
        const std::string id_a = spec.task_a.task_id;

        // Single-task pipeline: these runs are both the Task-A stage of every
        // method pair and the reported baselines.
        const TrainResult fft_a = train(base, a.train, cfg);
        const LotaResult lota_a = run_lota(base, a.train, spec.sparsity, cfg);
        const ToyModel model_fft_a = base.with_params(fft_a.params);
        const ToyModel model_lota_a = base.with_params(lota_a.w_final);
        const double u_fft_a = evaluate(model_fft_a, a.test);
        const double u_lota_a = evaluate(model_lota_a, a.test);
        out.rows.push_back(make_row(seed, "Baseline:FFT", id_a, {{"utility", u_fft_a}}));
        out.rows.push_back(make_row(seed, "Baseline:LoTA", id_a,
                                    {{"utility", u_lota_a}, {"k", static_cast<double>(lota_a.mask.kept_count())}}));
        bool frozen = true;

        for (const auto & task_b : spec.tasks_b) {
            const TaskData b = generate_task(offset_seed(task_b, seed));
            const std::string id_b = task_b.task_id;
            const double u_fft_b = evaluate(base.with_params(train(base, b.train, cfg).params), b.test);
            const LotaResult lota_b = run_lota(base, b.train, spec.sparsity, cfg);
            out.rows.push_back(make_row(seed, "Baseline:FFT", id_b, {{"utility", u_fft_b}}));
            out.rows.push_back(make_row(seed, "Baseline:LoTA", id_b,
                                        {{"utility", evaluate(base.with_params(lota_b.w_final), b.test)},
                                         {"k", static_cast<double>(lota_b.mask.kept_count())}}));

            for (SequentialMethod m : spec.methods) {
                ParameterMap final_params;
                double u_stage_a = u_fft_a;
                switch (m) {
                    case SequentialMethod::FftFft:
                        final_params = train(model_fft_a, b.train, cfg).params;
                        break;
                    case SequentialMethod::LotaFft:
                        final_params = train(model_lota_a, b.train, cfg).params;
                        u_stage_a = u_lota_a;
                        break;
                    case SequentialMethod::FftLota:
                        final_params = run_lota(model_fft_a, b.train, spec.sparsity, cfg).w_final;
                        break;
                    case SequentialMethod::LotaLotto: {
                        LottoOptions options;
                        options.constraint = lota_a.mask;
                        final_params = lotto(model_lota_a, {b.train}, spec.sparsity, cfg, options).w_final;
                        frozen = frozen && frozen_bitwise(lota_a.w_final, final_params, lota_a.mask);
                        u_stage_a = u_lota_a;
                        break;
                    }
                    case SequentialMethod::FftFftMixed:
                        final_params = mixed_data_fft(model_fft_a, b.train, a.train, spec.mix_fraction, cfg).params;
                        break;
                }
                const ToyModel final_model = base.with_params(std::move(final_params));
                const double u_a = evaluate(final_model, a.test);
                const double u_b = evaluate(final_model, b.test);
                out.rows.push_back(make_row(seed, sequential_method_name(m), id_b,
                                            {{"utility_a", u_a}, {"drop_a", u_stage_a - u_a},
                                             {"utility_b", u_b}, {"drop_b", u_fft_b - u_b}}));
            }
        }
        out.flags["lotto_frozen"] = frozen;
    });

    MetricsReport report = assemble("sequential", c, to_json(spec), results);
    auto uses = [&](SequentialMethod m) { return std::find(spec.methods.begin(), spec.methods.end(), m) != spec.methods.end(); };
    const bool has = uses(SequentialMethod::LotaLotto);
    const bool has_fft = uses(SequentialMethod::FftFft);

    if (has) {
        ReportCheck frozen{"lotto_freezes_task_a", true, true, json::object()};
        for (const auto & r : results) {
            if (!r.failure) frozen.passed = frozen.passed && r.flags.at("lotto_frozen");
        }
        frozen.detail["note"] = "Task-A mask coordinates bitwise unchanged by the LoTTO stage";
        report.checks.push_back(frozen);
    }
    for (const auto & task_b : spec.tasks_b) {
        const std::string & id = task_b.task_id;
        if (has_fft) {
            const SummaryStat drop = summarize(report.column("FFT->FFT", id, "drop_a"));
            report.checks.push_back({"interference_precondition[" + id + "]",
                                     drop.n > 0 && drop.mean >= spec.interference_threshold, true,
                                     {{"mean_fft_drop_a", drop.mean}, {"threshold", spec.interference_threshold}}});
        }
        if (has && has_fft) {
            size_t wins = 0, seen = 0;
            for (uint64_t seed : c.seeds) {
                const ReportRow * f = report.row(seed, "FFT->FFT", id);
                const ReportRow * l = report.row(seed, "LoTA->LoTTO", id);
                if (!f || !l) continue;
                ++seen;
                if (l->values.at("drop_a") < f->values.at("drop_a")) ++wins;
            }
            report.checks.push_back(seed_trend("lotto_forgets_less[" + id + "]", wins, seen));
        }
        if (has) {
            const SummaryStat lotto_b = summarize(report.column("LoTA->LoTTO", id, "utility_b"));
            const SummaryStat fft_b = summarize(report.column("Baseline:FFT", id, "utility"));
            report.checks.push_back({"lotto_task_b_close[" + id + "]",
                                     lotto_b.n > 0 && lotto_b.mean >= fft_b.mean - spec.task_b_tolerance, false,
                                     {{"mean_lotto_utility_b", lotto_b.mean}, {"mean_fft_utility_b", fft_b.mean},
                                      {"tolerance", spec.task_b_tolerance}}});
        }
    }
    return report;
}

MetricsReport run_sparsity_ablation(const SparsityAblationSpec & spec) {
    const ExperimentCommon & c = spec.common;
    const std::string id = spec.task.task_id;
    auto lota_name = [](double s) { return "LoTA[s=" + format_number(s) + "]"; };
    const std::string iterative_name =
        spec.iterative_schedule.empty() ? "" : "LoTA*[s=" + format_number(spec.iterative_schedule.back()) + "]";

    auto results = for_each_seed(c.seeds, c.threads, [&](uint64_t seed, SeedResult & out) {
        const TrainConfig cfg = seeded(c.train, seed);
        const ToyModel base = ToyModel::initialize(c.model, c.model_init_seed + seed);
        const TaskData data = generate_task(offset_seed(spec.task, seed));
        const size_t n = base.params().total_size();

        const TrainResult fft = train(base, data.train, cfg);
        const double u_fft = evaluate(base.with_params(fft.params), data.test);
        out.rows.push_back(make_row(seed, "FFT", id, {{"sparsity", 0.0}, {"k", static_cast<double>(n)}, {"utility", u_fft}}));
        auto relative = [&](double u) { return (u - u_fft) / std::abs(u_fft); };

        for (double s : spec.sparsities) {
            const LotaResult l = run_lota(base, data.train, s, cfg);
            const double u = evaluate(base.with_params(l.w_final), data.test);
            const CompressionReport cr = compression_report(l.adapter);
            out.rows.push_back(make_row(seed, lota_name(s), id,
                                        {{"sparsity", s},
                                         {"k", static_cast<double>(l.mask.kept_count())},
                                         {"utility", u},
                                         {"relative_change", relative(u)},
                                         {"adapter_stored", static_cast<double>(cr.stored_count)},
                                         {"measured_ratio", cr.measured_ratio}}));
            if (s == 0.0) out.flags["s0_matches_fft"] = bitwise_equal(l.w_final, fft.params);
        }
        if (!spec.iterative_schedule.empty()) {
            const IterativeLotaResult it = iterative_lota(base, data.train, spec.iterative_schedule, cfg);
            const double u = evaluate(base.with_params(it.final.w_final), data.test);
            out.rows.push_back(make_row(seed, iterative_name, id,
                                        {{"sparsity", spec.iterative_schedule.back()},
                                         {"k", static_cast<double>(it.final.mask.kept_count())},
                                         {"utility", u},
                                         {"relative_change", relative(u)}}));
        }
    });

    MetricsReport report = assemble("sparsity", c, to_json(spec), results);
    if (std::find(spec.sparsities.begin(), spec.sparsities.end(), 0.0) != spec.sparsities.end()) {
        ReportCheck same{"s0_matches_fft", true, true, {{"note", "sparsity 0 reproduces FFT bit for bit"}}};
        for (const auto & r : results) {
            if (!r.failure) same.passed = same.passed && r.flags.at("s0_matches_fft");
        }
        report.checks.push_back(same);
    }
    {
        const SummaryStat fft = summarize(report.column("FFT", id, "utility"));
        ReportCheck plateau{"plateau", true, false, json::object()};
        json per = json::object();
        for (double s : spec.sparsities) {
            if (!(s > 0.0 && s <= spec.plateau_max_sparsity)) continue;
            const SummaryStat u = summarize(report.column(lota_name(s), id, "utility"));
            const double rel = (u.mean - fft.mean) / std::abs(fft.mean);
            per[format_number(s)] = rel;
            plateau.passed = plateau.passed && u.n > 0 && std::abs(rel) <= spec.plateau_tolerance;
        }
        plateau.detail = {{"relative_change_of_means", per}, {"tolerance", spec.plateau_tolerance}};
        report.checks.push_back(plateau);
    }
    if (!spec.iterative_schedule.empty()) {
        const double s = spec.iterative_schedule.back();
        const std::string direct = lota_name(s);
        size_t wins = 0, seen = 0;
        for (uint64_t seed : c.seeds) {
            const ReportRow * d = report.row(seed, direct, id);
            const ReportRow * it = report.row(seed, iterative_name, id);
            if (!d || !it) continue;
            ++seen;
            if (d->values.at("utility") < it->values.at("utility")) ++wins;
        }
        if (seen > 0) report.checks.push_back(seed_trend("iterative_beats_direct", wins, seen));
    }
    return report;
}

MetricsReport run_calibration_ablation(const CalibrationAblationSpec & spec) {
    const ExperimentCommon & c = spec.common;
    const std::string id = std::visit([](const auto & t) { return t.task_id; }, spec.task);
    auto name = [](double f) { return "LoTA[f=" + format_number(f) + "]"; };

    auto results = for_each_seed(c.seeds, c.threads, [&](uint64_t seed, SeedResult & out) {
        const TrainConfig cfg = seeded(c.train, seed);
        const ToyModel base = ToyModel::initialize(c.model, c.model_init_seed + seed);
        TaskData data;
        std::optional<SparsityMask> support;
        if (const auto * planted = std::get_if<PlantedTaskSpec>(&spec.task)) {
            PlantedTaskSpec p = *planted;
            p.seed += seed;
            PlantedTask t = generate_planted_task(base, p);
            data = std::move(t.data);
            support = std::move(t.support);
        } else {
            data = generate_task(offset_seed(std::get<SyntheticTaskSpec>(spec.task), seed));
        }

        const double u_fft = evaluate(base.with_params(train(base, data.train, cfg).params), data.test);
        out.rows.push_back(make_row(seed, "FFT", id, {{"utility", u_fft}}));

        std::vector<std::pair<double, std::map<std::string, double>>> rows;
        double u_ref = 0.0;
        for (double f : spec.fractions) {
            const LotaResult l = run_lota(base, data.train, spec.sparsity, cfg, f);
            std::map<std::string, double> v{{"fraction", f},
                                            {"calibration_rows", static_cast<double>(f > 0.0 ? calibration_rows(f, data.train.size()) : 0)},
                                            {"k", static_cast<double>(l.mask.kept_count())},
                                            {"utility", evaluate(base.with_params(l.w_final), data.test)}};
            if (support) {
                const OverlapStats o = overlap_stats(l.mask, *support);
                v["support_hits"] = static_cast<double>(o.intersection_count);
                v["support_recall"] = static_cast<double>(o.intersection_count) / static_cast<double>(support->kept_count());
            }
            if (f == 1.0) u_ref = v.at("utility");
            rows.emplace_back(f, std::move(v));
        }
        for (auto & [f, v] : rows) {
            v["drop"] = (u_ref - v.at("utility")) / std::abs(u_ref);
            out.rows.push_back(make_row(seed, name(f), id, std::move(v)));
        }
    });

    MetricsReport report = assemble("calibration", c, to_json(spec), results);
    std::vector<double> order = spec.fractions;
    std::sort(order.begin(), order.end(), std::greater<>());
    size_t wins = 0, seen = 0;
    for (uint64_t seed : c.seeds) {
        std::vector<double> drops;
        for (double f : order) {
            if (const ReportRow * r = report.row(seed, name(f), id)) drops.push_back(r->values.at("drop"));
        }
        if (drops.size() != order.size()) continue;
        ++seen;
        // Less calibration data never helps: drops are nondecreasing as the
        // fraction shrinks, starting from the 1.0 reference at exactly 0.
        bool ok = true;
        for (size_t i = 1; i < drops.size(); ++i) ok = ok && drops[i] >= drops[i - 1];
        if (ok) ++wins;
    }
    report.checks.push_back(seed_trend("drop_ordering", wins, seen));
    return report;
}

MetricsReport run_merging_experiment(const MergingSpec & spec) {
    const ExperimentCommon & c = spec.common;
    const size_t tasks = spec.tasks.size();

    auto results = for_each_seed(c.seeds, c.threads, [&](uint64_t seed, SeedResult & out) {
        const TrainConfig cfg = seeded(c.train, seed);
        const ToyModel base = ToyModel::initialize(c.model, c.model_init_seed + seed);
        std::vector<TaskData> data;
        std::vector<TaskVector> fft_tvs, lota_tvs;
        std::vector<SparseAdapter> adapters;
        std::vector<double> u_fft, u_lota;
        for (const auto & t : spec.tasks) {
            data.push_back(generate_task(offset_seed(t, seed)));
            const TrainResult f = train(base, data.back().train, cfg);
            LotaResult l = run_lota(base, data.back().train, spec.sparsity, cfg);
            u_fft.push_back(evaluate(base.with_params(f.params), data.back().test));
            u_lota.push_back(evaluate(base.with_params(l.w_final), data.back().test));
            out.rows.push_back(make_row(seed, "Baseline:FFT", t.task_id, {{"utility", u_fft.back()}}));
            out.rows.push_back(make_row(seed, "Baseline:LoTA", t.task_id, {{"utility", u_lota.back()}}));
            fft_tvs.push_back(compute_task_vector(f.params, base.params()));
            lota_tvs.push_back(compute_task_vector(l.w_final, base.params()));
            adapters.push_back(std::move(l.adapter));
        }
        auto task_average = [&](const ParameterMap & merged, bool validation) {
            const ToyModel m = base.with_params(merged);
            double sum = 0.0;
            for (const auto & d : data) sum += evaluate(m, validation ? d.val : d.test);
            return sum / static_cast<double>(tasks);
        };

        for (const auto & combo : spec.combos) {
            ParameterMap merged;
            std::map<std::string, double> v;
            const bool all_lota = std::all_of(combo.begin(), combo.end(), [](AdaptMethod m) { return m == AdaptMethod::Lota; });
            if (all_lota) {
                // Sparse adapters merge as they are: no trimming, no search.
                merged = merge_lota(base.params(), adapters, spec.lambda);
                v["cells"] = 1.0;
            } else {
                std::vector<TaskVector> tvs;
                for (size_t i = 0; i < tasks; ++i) tvs.push_back(combo[i] == AdaptMethod::Fft ? fft_tvs[i] : lota_tvs[i]);
                const GridSearchResult gs = merge_grid_search(
                    base.params(), tvs, spec.grid, [&](const ParameterMap & p) { return task_average(p, true); }, spec.lambda);
                merged = merge(base.params(), tvs, gs.best);
                v["cells"] = static_cast<double>(gs.table.size());
                for (size_t i = 0; i < tasks; ++i) v["keep_" + spec.tasks[i].task_id] = gs.best.tasks[i].trim_keep_fraction;
            }
            const ToyModel m = base.with_params(merged);
            double sum = 0.0;
            for (size_t i = 0; i < tasks; ++i) {
                const double u = evaluate(m, data[i].test);
                const double own = combo[i] == AdaptMethod::Fft ? u_fft[i] : u_lota[i];
                v["utility_" + spec.tasks[i].task_id] = u;
                v["drop_" + spec.tasks[i].task_id] = own - u;
                sum += u;
            }
            v["task_average"] = sum / static_cast<double>(tasks);
            out.rows.push_back(make_row(seed, combo_name(combo), "all", std::move(v)));
        }
    });

    MetricsReport report = assemble("merging", c, to_json(spec), results);
    const std::string all_fft = combo_name(std::vector<AdaptMethod>(tasks, AdaptMethod::Fft));
    const std::string all_lota = combo_name(std::vector<AdaptMethod>(tasks, AdaptMethod::Lota));
    const std::vector<double> cells = report.column(all_lota, "all", "cells");
    if (!cells.empty()) {
        report.checks.push_back({"lota_merge_without_search",
                                 std::all_of(cells.begin(), cells.end(), [](double x) { return x == 1.0; }), true,
                                 {{"note", "all-LoTA merges evaluate exactly one cell"}}});
    }
    size_t wins = 0, seen = 0;
    for (uint64_t seed : c.seeds) {
        const ReportRow * f = report.row(seed, all_fft, "all");
        const ReportRow * l = report.row(seed, all_lota, "all");
        if (!f || !l) continue;
        ++seen;
        if (l->values.at("task_average") >= f->values.at("task_average")) ++wins;
    }
    if (seen > 0) report.checks.push_back(seed_trend("lota_merge_at_least_fft", wins, seen));
    return report;
}

MetricsReport run_experiment(const json & j, size_t threads_override) {
    if (!j.is_object() || !j.contains("experiment") || !j.at("experiment").is_string()) {
        throw ValidationError("invalid_config", "experiment spec needs a string field 'experiment'");
    }
    const std::string kind = j.at("experiment").get<std::string>();
    const auto start = std::chrono::steady_clock::now();
    MetricsReport report;
    auto run = [&](auto spec, auto fn) {
        if (threads_override > 0) spec.common.threads = threads_override;
        report = fn(spec);
    };
    if (kind == "sequential") run(sequential_spec_from_json(j), run_sequential_experiment);
    else if (kind == "sparsity") run(sparsity_spec_from_json(j), run_sparsity_ablation);
    else if (kind == "calibration") run(calibration_spec_from_json(j), run_calibration_ablation);
    else if (kind == "merging") run(merging_spec_from_json(j), run_merging_experiment);
    else throw ValidationError("invalid_config", "unknown experiment '" + kind + "'");
    report.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

} // namespace lota
