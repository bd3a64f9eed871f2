#include "lota/adapter.hpp"
#include "lota/checkpoint.hpp"
#include "lota/errors.hpp"
#include "lota/harness.hpp"
#include "lota/merge.hpp"
#include "lota/sparsity.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

namespace py = pybind11;
using namespace lota;

namespace {

// Parameter maps cross the boundary as dict[str, float32 ndarray]; masks
// as dict[str, bool ndarray]; adapters as their serialized bytes.

ParameterMap to_map(const py::dict & d) {
    ParameterMap pm;
    for (const auto & [key, value] : d) {
        const auto arr = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(value);
        if (!arr) throw ValidationError("invalid_argument", "value for '" + py::cast<std::string>(key) + "' is not numeric");
        Shape shape(arr.shape(), arr.shape() + arr.ndim());
        std::vector<float> data(arr.data(), arr.data() + arr.size());
        pm.insert(py::cast<std::string>(key), Tensor(std::move(shape), std::move(data)));
    }
    return pm;
}

py::dict from_map(const ParameterMap & pm) {
    py::dict d;
    for (const auto & [name, t] : pm) {
        py::array_t<float> arr(std::vector<py::ssize_t>(t.shape.begin(), t.shape.end()));
        std::memcpy(arr.mutable_data(), t.data.data(), t.data.size() * sizeof(float));
        d[py::str(name)] = arr;
    }
    return d;
}

SparsityMask to_mask(const py::dict & d, double declared_sparsity) {
    SparsityMask m;
    m.declared_sparsity = declared_sparsity;
    for (const auto & [key, value] : d) {
        const auto arr = py::array_t<bool, py::array::c_style | py::array::forcecast>::ensure(value);
        if (!arr) throw ValidationError("invalid_argument", "mask for '" + py::cast<std::string>(key) + "' is not boolean");
        MaskTensor t;
        t.shape.assign(arr.shape(), arr.shape() + arr.ndim());
        t.keep.reserve(static_cast<size_t>(arr.size()));
        for (py::ssize_t i = 0; i < arr.size(); ++i) t.keep.push_back(arr.data()[i] ? 1 : 0);
        m.entries.emplace(py::cast<std::string>(key), std::move(t));
    }
    return m;
}

py::dict from_mask(const SparsityMask & m) {
    py::dict d;
    for (const auto & [name, t] : m.entries) {
        py::array_t<bool> arr(std::vector<py::ssize_t>(t.shape.begin(), t.shape.end()));
        bool * out = arr.mutable_data();
        for (size_t i = 0; i < t.keep.size(); ++i) out[i] = t.keep[i] != 0;
        d[py::str(name)] = arr;
    }
    return d;
}

SparseAdapter to_adapter(const py::bytes & b) {
    const std::string s = b;
    return parse_adapter(std::span(reinterpret_cast<const uint8_t *>(s.data()), s.size()));
}

py::bytes from_adapter(const SparseAdapter & a) {
    const std::vector<uint8_t> raw = serialize_adapter(a);
    return py::bytes(reinterpret_cast<const char *>(raw.data()), raw.size());
}

TaskVector to_task_vector(const py::dict & delta, const py::dict & base) {
    return TaskVector{to_map(delta), digest(to_map(base))};
}

py::object from_json(const nlohmann::json & j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json to_json_value(const py::object & o) {
    const std::string text = py::isinstance<py::str>(o) ? py::cast<std::string>(o)
                                                       : py::cast<std::string>(py::module_::import("json").attr("dumps")(o));
    return nlohmann::json::parse(text);
}

} // namespace

PYBIND11_MODULE(_lota, m) {
    m.doc() = "Sparse task-vector fine-tuning, adapters and merging on toy models";
    m.attr("__version__") = LOTA_VERSION;

    // Error (RuntimeError) is the base; ValidationError is also a ValueError.
    // Instances carry the library's machine-readable tag as `kind`.
    // Deliberately leaked: the translator may run until interpreter shutdown.
    static PyObject * error = PyErr_NewException("lota._lota.Error", PyExc_RuntimeError, nullptr);
    static PyObject * validation = PyErr_NewException(
        "lota._lota.ValidationError", py::make_tuple(py::handle(error), py::handle(PyExc_ValueError)).ptr(), nullptr);
    static PyObject * runtime = PyErr_NewException("lota._lota.RuntimeFailure", error, nullptr);
    m.attr("Error") = py::handle(error);
    m.attr("ValidationError") = py::handle(validation);
    m.attr("RuntimeFailure") = py::handle(runtime);
    py::register_exception_translator([](std::exception_ptr p) {
        auto raise = [](PyObject * type, const Error & e) {
            py::object inst = py::reinterpret_borrow<py::object>(type)(e.what());
            inst.attr("kind") = e.kind();
            PyErr_SetObject(type, inst.ptr());
        };
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ValidationError & e) {
            raise(validation, e);
        } catch (const RuntimeFailure & e) {
            raise(runtime, e);
        } catch (const Error & e) {
            raise(error, e);
        }
    });

    m.def("load_checkpoint", [](const std::string & path) { return from_map(load_checkpoint(path)); }, py::arg("path"));
    m.def("save_checkpoint", [](const py::dict & params, const std::string & path) { save_checkpoint(to_map(params), path); },
          py::arg("params"), py::arg("path"));
    m.def("digest", [](const py::dict & params) { return digest(to_map(params)).hex(); }, py::arg("params"),
          "SHA-256 digest of the canonical serialization, as hex");

    m.def("compute_task_vector",
          [](const py::dict & finetuned, const py::dict & base) {
              return from_map(compute_task_vector(to_map(finetuned), to_map(base)).delta);
          },
          py::arg("finetuned"), py::arg("base"));
    m.def("kept_count_for", &kept_count_for, py::arg("sparsity"), py::arg("total"));
    m.def("sparsify", [](const py::dict & tv, double s) { return from_mask(sparsify(TaskVector{to_map(tv), {}}, s)); },
          py::arg("task_vector"), py::arg("sparsity"), "Global top-k mask by magnitude");
    m.def("random_mask",
          [](const py::dict & keyspace, double s, uint64_t seed) { return from_mask(random_mask(to_map(keyspace), s, seed)); },
          py::arg("keyspace"), py::arg("sparsity"), py::arg("seed"));
    m.def("save_mask",
          [](const py::dict & mask, const std::string & path, double declared_sparsity, const std::string & source) {
              save_mask(to_mask(mask, declared_sparsity), path, MaskFileInfo{source, std::nullopt});
          },
          py::arg("mask"), py::arg("path"), py::arg("declared_sparsity") = 0.0, py::arg("source") = "python");
    m.def("load_mask", [](const std::string & path) { return from_mask(load_mask(path)); }, py::arg("path"));

    m.def("encode",
          [](const py::dict & tv, const py::dict & base) { return from_adapter(encode(to_task_vector(tv, base))); },
          py::arg("task_vector"), py::arg("base"), "Adapter bytes storing the nonzero entries of a task vector");
    m.def("decode", [](const py::bytes & adapter, const py::dict & base) {
              return from_map(decode(to_adapter(adapter), to_map(base)).delta);
          },
          py::arg("adapter"), py::arg("base"));
    m.def("apply_adapter",
          [](const py::dict & base, const py::bytes & adapter, bool check_digest) {
              return from_map(apply_adapter(to_map(base), to_adapter(adapter), check_digest));
          },
          py::arg("base"), py::arg("adapter"), py::arg("check_digest") = true);
    m.def("compression_report", [](const py::bytes & adapter) {
              const CompressionReport r = compression_report(to_adapter(adapter));
              py::dict d;
              d["total_elements"] = r.total_elements;
              d["stored_count"] = r.stored_count;
              d["encoded_bytes"] = r.encoded_bytes;
              d["ideal_ratio"] = r.ideal_ratio;
              d["measured_ratio"] = r.measured_ratio;
              d["payload_bits"] = r.payload_bits;
              d["overhead_bits"] = r.overhead_bits;
              return d;
          },
          py::arg("adapter"));
    m.def("save_adapter", [](const py::bytes & adapter, const std::string & path) { save_adapter(to_adapter(adapter), path); },
          py::arg("adapter"), py::arg("path"));
    m.def("load_adapter", [](const std::string & path) { return from_adapter(load_adapter(path)); }, py::arg("path"));

    m.def("task_arithmetic_merge",
          [](const py::dict & base, const std::vector<py::dict> & tvs, std::vector<double> weights, double lambda) {
              std::vector<TaskVector> v;
              for (const auto & t : tvs) v.push_back(to_task_vector(t, base));
              if (weights.empty()) weights.assign(v.size(), 1.0);
              return from_map(task_arithmetic_merge(to_map(base), v, weights, lambda));
          },
          py::arg("base"), py::arg("task_vectors"), py::arg("weights") = std::vector<double>{}, py::arg("lam") = 1.0);
    m.def("ties_merge",
          [](const py::dict & base, const std::vector<py::dict> & tvs, const std::vector<double> & keep_fractions,
             double lambda) {
              std::vector<TaskVector> v;
              for (const auto & t : tvs) v.push_back(to_task_vector(t, base));
              return from_map(ties_merge(to_map(base), v, keep_fractions, lambda));
          },
          py::arg("base"), py::arg("task_vectors"), py::arg("keep_fractions"), py::arg("lam") = 1.0);
    m.def("merge_lota",
          [](const py::dict & base, const std::vector<py::bytes> & adapters, double lambda) {
              std::vector<SparseAdapter> v;
              for (const auto & a : adapters) v.push_back(to_adapter(a));
              return from_map(merge_lota(to_map(base), v, lambda));
          },
          py::arg("base"), py::arg("adapters"), py::arg("lam") = 1.0);

    m.def("run_experiment",
          [](const py::object & spec, size_t threads) {
              const nlohmann::json j = to_json_value(spec);
              MetricsReport report;
              {
                  py::gil_scoped_release release;
                  report = run_experiment(j, threads);
              }
              return from_json(to_json(report));
          },
          py::arg("spec"), py::arg("threads") = 0, "Runs an experiment spec (dict or JSON text); returns the report");
}
