// lota: command-line front end for sparse task adaptation, adapters,
// merging and the experiment harness.
//
// Exit codes: 0 ok, 1 usage, 2 validation (bad input, digest mismatch,
// misalignment, failed harness assertion), 3 runtime failure (divergence).
// Every error is reported as one JSON object on stderr.

#include "lota/adapter.hpp"
#include "lota/checkpoint.hpp"
#include "lota/errors.hpp"
#include "lota/harness.hpp"
#include "lota/merge.hpp"
#include "lota/sparsity.hpp"
#include "lota/tasks.hpp"
#include "lota/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#ifndef LOTA_VERSION
#define LOTA_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lota;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kValidation = 2, kRuntime = 3 };

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void report_error(const char * category, const std::string & kind, const std::string & message) {
    const json j = {{"error", {{"category", category}, {"kind", kind}, {"message", message}}}};
    std::cerr << j.dump() << '\n';
}

// Non-finite numbers have no JSON spelling; they are written as null.
json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// Collects the provenance record of one invocation: the fully resolved
// configuration plus digests of every input read and output written.
class Run {
public:
    Run(std::string subcommand, fs::path out) : subcommand_(std::move(subcommand)), out_(std::move(out)) {
        fs::create_directories(out_);
    }

    json config = json::object();

    void input(const fs::path & path) {
        inputs_.push_back({{"path", path.string()}, {"sha256", sha256(read_file(path)).hex()}});
    }
    void bytes(const std::string & name, const std::vector<uint8_t> & data) {
        write_file(out_ / name, data);
        outputs_.push_back({{"file", name}, {"sha256", sha256(data).hex()}});
    }
    void text(const std::string & name, const std::string & data) {
        bytes(name, std::vector<uint8_t>(data.begin(), data.end()));
    }
    void json_file(const std::string & name, const json & j) { text(name, j.dump(2) + "\n"); }
    void checkpoint(const std::string & name, const ParameterMap & pm) { bytes(name, serialize_checkpoint(pm)); }
    void adapter(const std::string & name, const SparseAdapter & a) { bytes(name, serialize_adapter(a)); }
    void mask(const std::string & name, const SparsityMask & m, const MaskFileInfo & info) {
        bytes(name, serialize_mask(m));
        text(name + ".json", mask_sidecar_json(m, info));
    }

    void finish() {
        const json record = {{"tool", "lota"},
                             {"version", LOTA_VERSION},
                             {"subcommand", subcommand_},
                             {"config", config},
                             {"inputs", inputs_},
                             {"outputs", outputs_}};
        write_text_file(out_ / "provenance.json", record.dump(2) + "\n");
    }

private:
    std::string subcommand_;
    fs::path out_;
    json inputs_ = json::array();
    json outputs_ = json::array();
};

json load_json(const fs::path & path) {
    const std::vector<uint8_t> raw = read_file(path);
    try {
        return json::parse(raw.begin(), raw.end());
    } catch (const json::parse_error & e) {
        throw ValidationError("invalid_config", path.string() + ": " + e.what());
    }
}

// Paths inside a config file are relative to the file's directory.
fs::path resolve(const fs::path & config_path, const std::string & p) {
    const fs::path path(p);
    return path.is_absolute() ? path : config_path.parent_path() / path;
}

struct Options {
    std::string config;
    std::string out;
    std::optional<uint64_t> seed;
    std::optional<double> sparsity;
    std::optional<size_t> threads;
};

size_t thread_count(const Options & o) {
    if (o.threads) return *o.threads;
    if (const char * env = std::getenv("LOTA_THREADS")) {
        try {
            return static_cast<size_t>(std::stoul(env));
        } catch (const std::exception &) {
            throw UsageError("LOTA_THREADS must be a non-negative integer");
        }
    }
    return 0;
}

const json & require_key(const json & j, const char * key, const std::string & context) {
    if (!j.is_object() || !j.contains(key)) throw ValidationError("invalid_config", context + ": missing '" + key + "'");
    return j.at(key);
}

// ------------------------------------------------------------ model set-up

struct ModelSetup {
    ToyModel base;
    bool generated = false;
};

ModelSetup base_model(const json & cfg, const fs::path & cfg_path, Run & run) {
    const json & model_j = require_key(cfg, "model", "config");
    const ModelSpec spec = model_spec_from_json(model_j);
    run.config["model"] = to_json(spec);
    if (cfg.contains("base_checkpoint")) {
        const fs::path p = resolve(cfg_path, cfg.at("base_checkpoint").get<std::string>());
        run.input(p);
        run.config["base_checkpoint"] = p.string();
        return {ToyModel(spec, load_checkpoint(p)), false};
    }
    const uint64_t init_seed = model_j.value("init_seed", uint64_t{7});
    run.config["model"]["init_seed"] = init_seed;
    return {ToyModel::initialize(spec, init_seed), true};
}

TrainConfig train_config(const json & cfg, const Options & o, Run & run) {
    TrainConfig c = cfg.contains("train") ? train_config_from_json(cfg.at("train")) : TrainConfig{};
    if (o.seed) c.seed = *o.seed;
    run.config["train"] = to_json(c);
    return c;
}

TaskData task_data(const json & j, const ModelSpec & model, json & tasks_out) {
    const SyntheticTaskSpec spec = task_spec_from_json(j);
    if (spec.input_dim != model.input_dim() || spec.output_dim != model.output_dim()) {
        throw ValidationError("invalid_config", "task '" + spec.task_id + "' does not match the model widths");
    }
    tasks_out.push_back(to_json(spec));
    return generate_task(spec);
}

double sparsity_of(const json & cfg, const Options & o, Run & run) {
    const double s = o.sparsity ? *o.sparsity : cfg.value("sparsity", 0.9);
    run.config["sparsity"] = s;
    return s;
}

// ------------------------------------------------------------ subcommands

int cmd_diff(const std::string & base_path, const std::string & ft_path, const Options & o) {
    Run run("diff", o.out);
    run.input(base_path);
    run.input(ft_path);
    const ParameterMap base = load_checkpoint(base_path);
    const TaskVector tv = compute_task_vector(load_checkpoint(ft_path), base);
    const SparseAdapter adapter = encode(tv);
    run.checkpoint("task_vector.ckpt", tv.delta);
    run.adapter("task_vector.lta", adapter);
    const CompressionReport cr = compression_report(adapter);
    const json summary = {{"base_digest", tv.base_digest.hex()},
                          {"total_elements", cr.total_elements},
                          {"stored_count", cr.stored_count}};
    run.json_file("summary.json", summary);
    run.finish();
    std::cout << summary.dump() << '\n';
    return kOk;
}

TaskVector load_task_vector(const std::string & path, const std::string & base_path, Run & run) {
    run.input(path);
    const std::vector<uint8_t> raw = read_file(path);
    if (is_adapter_file(raw)) {
        const SparseAdapter a = parse_adapter(raw);
        if (base_path.empty()) return decode(a);
        run.input(base_path);
        return decode(a, load_checkpoint(base_path));
    }
    TaskVector tv;
    tv.delta = parse_checkpoint(raw);
    if (!base_path.empty()) {
        run.input(base_path);
        const ParameterMap base = load_checkpoint(base_path);
        require_aligned(base, tv.delta, "task vector vs base");
        tv.base_digest = digest(base);
    }
    return tv;
}

int cmd_sparsify(const std::string & tv_path, const std::string & base_path, const Options & o) {
    if (!o.sparsity) throw UsageError("sparsify: --sparsity is required");
    Run run("sparsify", o.out);
    run.config = {{"task_vector", tv_path}, {"base", base_path}, {"sparsity", *o.sparsity}};
    const TaskVector tv = load_task_vector(tv_path, base_path, run);
    const SparsityMask mask = sparsify(tv, *o.sparsity);
    run.mask("mask.lmask", mask, MaskFileInfo{"sparsify:" + fs::path(tv_path).filename().string(), std::nullopt});
    run.finish();
    std::cout << json({{"kept_count", mask.kept_count()}, {"total", mask.total_size()}}).dump() << '\n';
    return kOk;
}

int cmd_train(const Options & o) {
    const fs::path cfg_path = o.config;
    const json cfg = load_json(cfg_path);
    Run run("train", o.out);
    run.input(cfg_path);
    ModelSetup setup = base_model(cfg, cfg_path, run);
    TrainConfig tc = train_config(cfg, o, run);
    json tasks = json::array();
    const TaskData data = task_data(require_key(cfg, "task", "train config"), setup.base.spec(), tasks);
    run.config["task"] = tasks.at(0);
    if (cfg.contains("mask")) {
        const fs::path p = resolve(cfg_path, cfg.at("mask").get<std::string>());
        run.input(p);
        run.config["mask"] = p.string();
        tc.mask = load_mask(p);
    }
    if (setup.generated) run.checkpoint("base.ckpt", setup.base.params());
    const TrainResult r = train(setup.base, data.train, tc);
    run.checkpoint("final.ckpt", r.params);
    json rec = to_json(r.record);
    rec["test_utility"] = evaluate(setup.base.with_params(r.params), data.test);
    run.json_file("record.json", rec);
    run.finish();
    return kOk;
}

int cmd_lota(const Options & o) {
    const fs::path cfg_path = o.config;
    const json cfg = load_json(cfg_path);
    Run run("lota", o.out);
    run.input(cfg_path);
    ModelSetup setup = base_model(cfg, cfg_path, run);
    const TrainConfig tc = train_config(cfg, o, run);
    json tasks = json::array();
    const TaskData data = task_data(require_key(cfg, "task", "lota config"), setup.base.spec(), tasks);
    run.config["task"] = tasks.at(0);
    const double s = sparsity_of(cfg, o, run);
    const double fraction = cfg.value("calibration_fraction", 1.0);
    run.config["calibration_fraction"] = fraction;

    if (setup.generated) run.checkpoint("base.ckpt", setup.base.params());
    const LotaResult r = run_lota(setup.base, data.train, s, tc, fraction);
    run.checkpoint("final.ckpt", r.w_final);
    run.adapter("adapter.lta", r.adapter);
    run.mask("mask.lmask", r.mask,
             MaskFileInfo{fraction > 0.0 ? "lota:calibrated" : "lota:random", fraction > 0.0 ? std::nullopt : std::optional(tc.seed)});
    json records = {{"calibration", r.calibration ? to_json(*r.calibration) : json(nullptr)},
                    {"adaptation", to_json(r.adaptation)},
                    {"test_utility", evaluate(setup.base.with_params(r.w_final), data.test)}};
    run.json_file("records.json", records);
    run.finish();
    return kOk;
}

int cmd_lotto(const Options & o) {
    const fs::path cfg_path = o.config;
    const json cfg = load_json(cfg_path);
    Run run("lotto", o.out);
    run.input(cfg_path);
    ModelSetup setup = base_model(cfg, cfg_path, run);
    const TrainConfig tc = train_config(cfg, o, run);
    const double s = sparsity_of(cfg, o, run);

    std::vector<Dataset> train_sets;
    std::vector<Dataset> test_sets;
    json tasks = json::array();
    const json & task_list = require_key(cfg, "tasks", "lotto config");
    if (!task_list.is_array() || task_list.empty()) throw ValidationError("invalid_config", "lotto config: tasks must be a nonempty array");
    for (const auto & t : task_list) {
        TaskData d = task_data(t, setup.base.spec(), tasks);
        train_sets.push_back(std::move(d.train));
        test_sets.push_back(std::move(d.test));
    }
    run.config["tasks"] = tasks;

    ToyModel start = setup.base;
    if (cfg.contains("start_checkpoint")) {
        const fs::path p = resolve(cfg_path, cfg.at("start_checkpoint").get<std::string>());
        run.input(p);
        run.config["start_checkpoint"] = p.string();
        start = setup.base.with_params(load_checkpoint(p));
    }
    LottoOptions options;
    options.base = &setup.base.params();
    if (cfg.contains("constraint_mask")) {
        const fs::path p = resolve(cfg_path, cfg.at("constraint_mask").get<std::string>());
        run.input(p);
        run.config["constraint_mask"] = p.string();
        options.constraint = load_mask(p);
    }

    if (setup.generated) run.checkpoint("base.ckpt", setup.base.params());
    const LottoResult r = lotto(start, train_sets, s, tc, options);
    run.checkpoint("final.ckpt", r.w_final);
    json records = json::array();
    for (const auto & rec : r.records) records.push_back(to_json(rec));
    json utilities = json::array();
    const ToyModel final_model = setup.base.with_params(r.w_final);
    for (size_t i = 0; i < r.task_masks.size(); ++i) {
        run.adapter("adapter_" + std::to_string(i) + ".lta", r.adapters[i]);
        run.mask("mask_" + std::to_string(i) + ".lmask", r.task_masks[i], MaskFileInfo{"lotto:task" + std::to_string(i), std::nullopt});
        utilities.push_back(evaluate(final_model, test_sets[i]));
    }
    run.mask("constraint.lmask", r.constraint_trace.back(), MaskFileInfo{"lotto:constraint", std::nullopt});
    run.json_file("records.json", {{"records", records}, {"test_utility", utilities}});
    run.finish();
    return kOk;
}

int cmd_encode(const std::string & tv_path, const std::string & base_path, const Options & o) {
    if (base_path.empty()) throw UsageError("encode: --base is required");
    Run run("encode", o.out);
    run.config = {{"task_vector", tv_path}, {"base", base_path}};
    const TaskVector tv = load_task_vector(tv_path, base_path, run);
    const SparseAdapter a = encode(tv);
    run.adapter("adapter.lta", a);
    run.finish();
    return kOk;
}

int cmd_decode(const std::string & adapter_path, const std::string & base_path, const Options & o) {
    Run run("decode", o.out);
    run.config = {{"adapter", adapter_path}, {"base", base_path}};
    const TaskVector tv = load_task_vector(adapter_path, base_path, run);
    run.checkpoint("task_vector.ckpt", tv.delta);
    run.finish();
    return kOk;
}

int cmd_apply(const std::string & base_path, const std::string & adapter_path, const Options & o) {
    Run run("apply", o.out);
    run.config = {{"base", base_path}, {"adapter", adapter_path}};
    run.input(base_path);
    run.input(adapter_path);
    const ParameterMap out = apply_adapter(load_checkpoint(base_path), load_adapter(adapter_path), true);
    run.checkpoint("model.ckpt", out);
    run.finish();
    return kOk;
}

int cmd_merge(const Options & o) {
    const fs::path cfg_path = o.config;
    json cfg = load_json(cfg_path);
    Run run("merge", o.out);
    run.input(cfg_path);
    const fs::path base_path = resolve(cfg_path, require_key(cfg, "base", "merge config").get<std::string>());
    const std::string method = cfg.value("method", std::string("ties"));
    if (method != "ties" && method != "lota") throw ValidationError("invalid_config", "merge: method must be 'ties' or 'lota'");
    run.input(base_path);
    const ParameterMap base = load_checkpoint(base_path);

    json spec_j = cfg;
    spec_j.erase("base");
    spec_j.erase("method");
    const MergeSpec spec = merge_spec_from_json(spec_j);
    if (cfg.contains("base_digest") && !(spec.base_digest == digest(base))) {
        throw DigestMismatch("merge: base checkpoint does not match the spec's base_digest");
    }

    std::vector<TaskVector> tvs;
    std::vector<SparseAdapter> adapters;
    json sources = json::array();
    for (const auto & t : spec.tasks) {
        const fs::path p = resolve(cfg_path, t.source);
        run.input(p);
        sources.push_back(p.string());
        const std::vector<uint8_t> raw = read_file(p);
        if (is_adapter_file(raw)) {
            adapters.push_back(parse_adapter(raw));
            tvs.push_back(decode(adapters.back(), base));
        } else {
            tvs.push_back(compute_task_vector(parse_checkpoint(raw), base));
        }
    }
    run.config = {{"base", base_path.string()}, {"method", method}, {"spec", to_json(spec)}, {"sources", sources}};

    ParameterMap merged;
    if (method == "lota") {
        if (adapters.size() != spec.tasks.size()) throw ValidationError("invalid_config", "merge: method 'lota' needs adapter sources");
        merged = merge_lota(base, adapters, spec.lambda);
    } else {
        merged = merge(base, tvs, spec);
    }
    run.checkpoint("merged.ckpt", merged);
    run.finish();
    return kOk;
}

json inspect_json(const fs::path & path) {
    const std::vector<uint8_t> raw = read_file(path);
    if (is_adapter_file(raw)) {
        const SparseAdapter a = parse_adapter(raw);
        const CompressionReport cr = compression_report(a);
        json tensors = json::array();
        for (const auto & r : a.records) tensors.push_back({{"name", r.name}, {"numel", r.numel}, {"stored", r.stored}});
        return {{"type", "adapter"},
                {"base_digest", a.base_digest.hex()},
                {"declared_sparsity", a.declared_sparsity},
                {"tensors", tensors},
                {"compression_report", {{"total_elements", cr.total_elements},
                                        {"stored_count", cr.stored_count},
                                        {"encoded_bytes", cr.encoded_bytes},
                                        {"ideal_ratio", number(cr.ideal_ratio)},
                                        {"measured_ratio", number(cr.measured_ratio)},
                                        {"payload_bits", cr.payload_bits},
                                        {"overhead_bits", cr.overhead_bits}}}};
    }
    const RawTensorMap container = parse_container(raw);
    const bool is_mask = !container.empty() && std::all_of(container.begin(), container.end(),
                                                            [](const auto & kv) { return kv.second.dtype == DType::U8; });
    if (is_mask) {
        MaskFileInfo info;
        const SparsityMask m = load_mask(path, &info);
        json tensors = json::array();
        for (const auto & [name, t] : m.entries) {
            size_t kept = 0;
            for (uint8_t b : t.keep) kept += b;
            tensors.push_back({{"name", name}, {"shape", t.shape}, {"kept", kept}});
        }
        return {{"type", "mask"},
                {"total", m.total_size()},
                {"kept_count", m.kept_count()},
                {"declared_sparsity", m.declared_sparsity},
                {"measured_sparsity", m.measured_sparsity()},
                {"source", info.source},
                {"seed", info.seed ? json(*info.seed) : json(nullptr)},
                {"tensors", tensors}};
    }
    const ParameterMap pm = parse_checkpoint(raw);
    json tensors = json::array();
    size_t nonzero = 0;
    for (const auto & [name, t] : pm) {
        for (float v : t.data) nonzero += v != 0.0f;
        tensors.push_back({{"name", name}, {"shape", t.shape}});
    }
    return {{"type", "checkpoint"}, {"digest", digest(pm).hex()}, {"total", pm.total_size()}, {"nonzero", nonzero},
            {"tensors", tensors}};
}

int cmd_inspect(const std::string & path, const Options & o) {
    const json info = inspect_json(path);
    if (!o.out.empty()) {
        Run run("inspect", o.out);
        run.config = {{"path", path}};
        run.input(path);
        run.json_file("inspect.json", info);
        run.finish();
    }
    std::cout << info.dump(2) << '\n';
    return kOk;
}

int cmd_experiment(const Options & o) {
    const fs::path cfg_path = o.config;
    json spec = load_json(cfg_path);
    if (o.seed && spec.is_object()) spec["seeds"] = json::array({*o.seed});
    Run run("experiment", o.out);
    run.input(cfg_path);
    const MetricsReport report = run_experiment(spec, thread_count(o));
    run.config = report.spec;
    run.json_file("report.json", to_json(report));
    run.text("report.csv", to_csv(report));
    // Timing is the only nondeterministic output and lives in its own file.
    write_text_file(fs::path(o.out) / "timing.json", json({{"wall_time_seconds", report.wall_time_seconds}}).dump() + "\n");
    run.finish();

    json checks = json::array();
    for (const auto & c : report.checks) checks.push_back({{"name", c.name}, {"passed", c.passed}, {"assertion", c.assertion}});
    std::cout << json({{"experiment", report.experiment}, {"checks", checks}}).dump() << '\n';
    if (!report.assertions_passed()) {
        std::string failed;
        for (const auto & c : report.checks) {
            if (c.assertion && !c.passed) failed += (failed.empty() ? "" : ", ") + c.name;
        }
        report_error("validation", "harness_assertion", "harness assertion failed: " + failed);
        return kValidation;
    }
    return kOk;
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"Sparse task adaptation toolkit: checkpoints, masks, adapters, merging and experiments", "lota"};
    app.set_version_flag("--version", LOTA_VERSION);
    app.require_subcommand(1);

    Options opt;
    auto add_out = [&](CLI::App * sub, bool required) {
        auto * o = sub->add_option("--out", opt.out, "Output directory");
        if (required) o->required();
    };
    auto add_config = [&](CLI::App * sub) { sub->add_option("--config", opt.config, "JSON config file")->required(); };
    auto add_seed = [&](CLI::App * sub) { sub->add_option("--seed", opt.seed, "Override the seed"); };
    auto add_sparsity = [&](CLI::App * sub, bool required) {
        auto * o = sub->add_option("--sparsity", opt.sparsity, "Sparsity in [0, 1)");
        if (required) o->required();
    };

    std::string a_path, b_path, base_path;

    auto * diff = app.add_subcommand("diff", "Task vector between two checkpoints (base, finetuned)");
    diff->add_option("base", a_path, "Base checkpoint")->required();
    diff->add_option("finetuned", b_path, "Finetuned checkpoint")->required();
    add_out(diff, true);

    auto * sparsify_cmd = app.add_subcommand("sparsify", "Global magnitude mask from a task vector");
    sparsify_cmd->add_option("task_vector", a_path, "Task vector checkpoint or adapter")->required();
    sparsify_cmd->add_option("--base", base_path, "Base checkpoint (shapes for adapter input)");
    add_sparsity(sparsify_cmd, true);
    add_out(sparsify_cmd, true);

    auto * train_cmd = app.add_subcommand("train", "Full (or masked) training run");
    auto * lota_cmd = app.add_subcommand("lota", "Calibrate a mask, then train sparsely from the base");
    auto * lotto_cmd = app.add_subcommand("lotto", "Sequential sparse training with disjoint masks");
    for (auto * sub : {train_cmd, lota_cmd, lotto_cmd}) {
        add_config(sub);
        add_out(sub, true);
        add_seed(sub);
    }
    add_sparsity(lota_cmd, false);
    add_sparsity(lotto_cmd, false);

    auto * encode_cmd = app.add_subcommand("encode", "Encode a task-vector checkpoint as a sparse adapter");
    encode_cmd->add_option("task_vector", a_path, "Task vector checkpoint")->required();
    encode_cmd->add_option("--base", base_path, "Base checkpoint the task vector refers to")->required();
    add_out(encode_cmd, true);

    auto * decode_cmd = app.add_subcommand("decode", "Decode a sparse adapter to a dense task vector");
    decode_cmd->add_option("adapter", a_path, "Adapter file")->required();
    decode_cmd->add_option("--base", base_path, "Base checkpoint supplying tensor shapes");
    add_out(decode_cmd, true);

    auto * apply_cmd = app.add_subcommand("apply", "Apply an adapter to its base checkpoint");
    apply_cmd->add_option("base", a_path, "Base checkpoint")->required();
    apply_cmd->add_option("adapter", b_path, "Adapter file")->required();
    add_out(apply_cmd, true);

    auto * merge_cmd = app.add_subcommand("merge", "Merge task vectors or adapters (TIES or LoTA)");
    add_config(merge_cmd);
    add_out(merge_cmd, true);

    auto * inspect_cmd = app.add_subcommand("inspect", "Statistics of an adapter, mask or checkpoint");
    inspect_cmd->add_option("path", a_path, "File to inspect")->required();
    add_out(inspect_cmd, false);

    auto * experiment_cmd = app.add_subcommand("experiment", "Run an experiment spec and write a metrics report");
    add_config(experiment_cmd);
    add_out(experiment_cmd, true);
    add_seed(experiment_cmd);
    experiment_cmd->add_option("--threads", opt.threads, "Worker threads (falls back to LOTA_THREADS)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success & e) {
        return app.exit(e);
    } catch (const CLI::ParseError & e) {
        report_error("usage", "usage", e.what());
        return kUsage;
    }

    try {
        if (opt.sparsity && !(*opt.sparsity >= 0.0 && *opt.sparsity < 1.0)) throw UsageError("--sparsity must lie in [0, 1)");
        if (*diff) return cmd_diff(a_path, b_path, opt);
        if (*sparsify_cmd) return cmd_sparsify(a_path, base_path, opt);
        if (*train_cmd) return cmd_train(opt);
        if (*lota_cmd) return cmd_lota(opt);
        if (*lotto_cmd) return cmd_lotto(opt);
        if (*encode_cmd) return cmd_encode(a_path, base_path, opt);
        if (*decode_cmd) return cmd_decode(a_path, base_path, opt);
        if (*apply_cmd) return cmd_apply(a_path, b_path, opt);
        if (*merge_cmd) return cmd_merge(opt);
        if (*inspect_cmd) return cmd_inspect(a_path, opt);
        if (*experiment_cmd) return cmd_experiment(opt);
    } catch (const UsageError & e) {
        report_error("usage", "usage", e.what());
        return kUsage;
    } catch (const ValidationError & e) {
        report_error("validation", e.kind(), e.what());
        return kValidation;
    } catch (const RuntimeFailure & e) {
        report_error("runtime", e.kind(), e.what());
        return kRuntime;
    } catch (const json::exception & e) {
        report_error("validation", "invalid_config", e.what());
        return kValidation;
    } catch (const std::exception & e) {
        report_error("runtime", "internal", e.what());
        return kRuntime;
    }
    return kUsage;
}
