#include "lota/model.hpp"

#include "lota/errors.hpp"
#include "lota/rng.hpp"

#include <algorithm>
#include <cmath>

namespace lota {

const char * activation_name(Activation a) {
    return a == Activation::Tanh ? "tanh" : "relu";
}

const char * head_name(Head h) {
    return h == Head::SoftmaxCrossEntropy ? "softmax_cross_entropy" : "mean_squared_error";
}

Activation parse_activation(const std::string & s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw ValidationError("invalid_argument", "unknown activation '" + s + "'");
}

Head parse_head(const std::string & s) {
    if (s == "softmax_cross_entropy" || s == "cross_entropy") return Head::SoftmaxCrossEntropy;
    if (s == "mean_squared_error" || s == "mse") return Head::MeanSquaredError;
    throw ValidationError("invalid_argument", "unknown output head '" + s + "'");
}

void ModelSpec::validate() const {
    if (widths.size() < 2) throw ValidationError("invalid_model", "model needs at least input and output widths");
    for (int64_t w : widths) {
        if (w <= 0) throw ValidationError("invalid_model", "layer widths must be positive");
    }
    if (head == Head::SoftmaxCrossEntropy && widths.back() < 2) {
        throw ValidationError("invalid_model", "softmax head needs at least two classes");
    }
}

std::string weight_name(size_t layer) { return "layer" + std::to_string(layer) + ".weight"; }
std::string bias_name(size_t layer) { return "layer" + std::to_string(layer) + ".bias"; }

void Dataset::validate() const {
    if (input_dim == 0) throw ValidationError("invalid_dataset", "dataset input dimension is zero");
    if (inputs.size() % input_dim != 0) throw ValidationError("invalid_dataset", "ragged input rows");
    const size_t n = size();
    if (is_classification()) {
        if (labels.size() != n) throw ValidationError("invalid_dataset", "label count does not match row count");
        if (!targets.empty()) throw ValidationError("invalid_dataset", "classification dataset with real targets");
    } else {
        if (targets.size() != n * target_dim) throw ValidationError("invalid_dataset", "target count does not match row count");
        if (!labels.empty()) throw ValidationError("invalid_dataset", "regression dataset with labels");
    }
    for (float v : inputs) {
        if (!std::isfinite(v)) throw ValidationError("invalid_dataset", "non-finite input value");
    }
    for (float v : targets) {
        if (!std::isfinite(v)) throw ValidationError("invalid_dataset", "non-finite target value");
    }
    for (int32_t l : labels) {
        if (l < 0) throw ValidationError("invalid_dataset", "negative class label");
    }
}

Dataset Dataset::subset(std::span<const size_t> rows) const {
    Dataset out;
    out.task_id = task_id;
    out.input_dim = input_dim;
    out.target_dim = target_dim;
    out.inputs.reserve(rows.size() * input_dim);
    for (size_t r : rows) {
        if (r >= size()) throw ValidationError("invalid_argument", "dataset row out of range");
        auto x = row(r);
        out.inputs.insert(out.inputs.end(), x.begin(), x.end());
        if (is_classification()) {
            out.labels.push_back(labels[r]);
        } else {
            auto t = target_row(r);
            out.targets.insert(out.targets.end(), t.begin(), t.end());
        }
    }
    return out;
}

Dataset Dataset::head(size_t n) const {
    n = std::min(n, size());
    std::vector<size_t> rows(n);
    for (size_t i = 0; i < n; ++i) rows[i] = i;
    return subset(rows);
}

Dataset concat(const Dataset & a, const Dataset & b, const std::string & task_id) {
    if (a.input_dim != b.input_dim || a.target_dim != b.target_dim) {
        throw ValidationError("invalid_dataset", "cannot concatenate datasets of different shapes");
    }
    Dataset out = a;
    out.task_id = task_id;
    out.inputs.insert(out.inputs.end(), b.inputs.begin(), b.inputs.end());
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    out.targets.insert(out.targets.end(), b.targets.begin(), b.targets.end());
    return out;
}

ParameterMap parameter_layout(const ModelSpec & spec) {
    spec.validate();
    ParameterMap pm;
    for (size_t l = 0; l < spec.num_layers(); ++l) {
        pm.insert(weight_name(l), Tensor::zeros({spec.widths[l + 1], spec.widths[l]}));
        pm.insert(bias_name(l), Tensor::zeros({spec.widths[l + 1]}));
    }
    return pm;
}

ToyModel::ToyModel(ModelSpec spec, ParameterMap params) : spec_(std::move(spec)), params_(std::move(params)) {
    require_aligned(parameter_layout(spec_), params_, "ToyModel");
}

ToyModel ToyModel::initialize(const ModelSpec & spec, uint64_t seed) {
    ParameterMap pm = parameter_layout(spec);
    Rng rng(seed);
    for (size_t l = 0; l < spec.num_layers(); ++l) {
        auto & w = pm.at(weight_name(l));
        const double limit = std::sqrt(6.0 / static_cast<double>(spec.widths[l] + spec.widths[l + 1]));
        for (float & v : w.data) v = static_cast<float>(rng.uniform(-limit, limit));
    }
    return ToyModel(spec, std::move(pm));
}

void require_compatible(const ToyModel & model, const Dataset & data) {
    const auto & spec = model.spec();
    if (data.input_dim != spec.input_dim()) {
        throw AlignmentError("dataset '" + data.task_id + "' input dimension " + std::to_string(data.input_dim) +
                             " does not match model input " + std::to_string(spec.input_dim()));
    }
    if (spec.head == Head::SoftmaxCrossEntropy) {
        if (!data.is_classification()) throw AlignmentError("classification head given a regression dataset");
        for (int32_t l : data.labels) {
            if (static_cast<size_t>(l) >= spec.output_dim()) throw AlignmentError("class label exceeds model outputs");
        }
    } else {
        if (data.is_classification() || data.target_dim != spec.output_dim()) {
            throw AlignmentError("regression head needs real targets of width " + std::to_string(spec.output_dim()));
        }
    }
}

namespace {

struct LayerView {
    const float * weight;
    const float * bias;
    size_t in;
    size_t out;
};

std::vector<LayerView> layer_views(const ModelSpec & spec, const ParameterMap & params) {
    if (params.size() != 2 * spec.num_layers()) throw AlignmentError("parameters do not match the model layout");
    std::vector<LayerView> layers;
    for (size_t l = 0; l < spec.num_layers(); ++l) {
        const auto & w = params.at(weight_name(l));
        const auto & b = params.at(bias_name(l));
        const Shape ws{spec.widths[l + 1], spec.widths[l]};
        const Shape bs{spec.widths[l + 1]};
        if (w.shape != ws || b.shape != bs) throw AlignmentError("layer " + std::to_string(l) + " shape mismatch");
        layers.push_back({w.data.data(), b.data.data(), static_cast<size_t>(spec.widths[l]),
                          static_cast<size_t>(spec.widths[l + 1])});
    }
    return layers;
}

double activate(Activation a, double z) {
    return a == Activation::Tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

// Derivative in terms of the pre-activation z and output h.
double activate_grad(Activation a, double z, double h) {
    return a == Activation::Tanh ? 1.0 - h * h : (z > 0.0 ? 1.0 : 0.0);
}

// Runs the network on one row, keeping pre-activations and outputs per layer.
void forward_row(const std::vector<LayerView> & layers, Activation act, std::span<const float> input,
                 std::vector<std::vector<double>> & pre, std::vector<std::vector<double>> & post) {
    post[0].assign(input.begin(), input.end());
    for (size_t l = 0; l < layers.size(); ++l) {
        const auto & L = layers[l];
        auto & z = pre[l + 1];
        auto & h = post[l + 1];
        z.resize(L.out);
        h.resize(L.out);
        const auto & x = post[l];
        for (size_t o = 0; o < L.out; ++o) {
            double acc = L.bias[o];
            const float * w = L.weight + o * L.in;
            for (size_t i = 0; i < L.in; ++i) acc += static_cast<double>(w[i]) * x[i];
            z[o] = acc;
            h[o] = (l + 1 == layers.size()) ? acc : activate(act, acc);
        }
    }
}

// Loss of one row and d(loss)/d(output) written to `grad`.
double head_loss(Head head, const std::vector<double> & out, const Dataset & data, size_t row,
                 std::vector<double> & grad) {
    grad.resize(out.size());
    if (head == Head::SoftmaxCrossEntropy) {
        const double mx = *std::max_element(out.begin(), out.end());
        double sum = 0.0;
        for (double v : out) sum += std::exp(v - mx);
        const double log_z = mx + std::log(sum);
        const auto label = static_cast<size_t>(data.labels[row]);
        if (label >= out.size()) throw AlignmentError("class label exceeds model outputs");
        for (size_t j = 0; j < out.size(); ++j) grad[j] = std::exp(out[j] - log_z) - (j == label ? 1.0 : 0.0);
        return log_z - out[label];
    }
    if (data.target_dim != out.size()) throw AlignmentError("regression target width mismatch");
    const auto target = data.target_row(row);
    double loss = 0.0;
    for (size_t j = 0; j < out.size(); ++j) {
        const double e = out[j] - static_cast<double>(target[j]);
        loss += e * e;
        grad[j] = 2.0 * e;
    }
    return loss;
}

} // namespace

std::vector<double> forward(const ModelSpec & spec, const ParameterMap & params, std::span<const float> input) {
    if (input.size() != spec.input_dim()) throw AlignmentError("forward: input width mismatch");
    const auto layers = layer_views(spec, params);
    std::vector<std::vector<double>> pre(layers.size() + 1), post(layers.size() + 1);
    forward_row(layers, spec.activation, input, pre, post);
    return post.back();
}

std::vector<double> ToyModel::forward(std::span<const float> input) const {
    return lota::forward(spec_, params_, input);
}

LossAndGrads forward_backward(const ToyModel & model, const Dataset & data, std::span<const size_t> rows) {
    require_compatible(model, data);
    return forward_backward(model.spec(), model.params(), data, rows);
}

LossAndGrads forward_backward(const ModelSpec & spec, const ParameterMap & params, const Dataset & data,
                              std::span<const size_t> rows) {
    if (rows.empty()) throw ValidationError("invalid_argument", "forward_backward: empty batch");
    if (data.input_dim != spec.input_dim() || data.is_classification() != (spec.head == Head::SoftmaxCrossEntropy)) {
        throw AlignmentError("forward_backward: dataset '" + data.task_id + "' does not fit the model");
    }
    const auto layers = layer_views(spec, params);
    const size_t L = layers.size();

    std::vector<std::vector<double>> gw(L), gb(L);
    for (size_t l = 0; l < L; ++l) {
        gw[l].assign(layers[l].in * layers[l].out, 0.0);
        gb[l].assign(layers[l].out, 0.0);
    }

    std::vector<std::vector<double>> pre(L + 1), post(L + 1);
    std::vector<double> delta, delta_prev;
    double total = 0.0;
    for (size_t r : rows) {
        if (r >= data.size()) throw ValidationError("invalid_argument", "forward_backward: row out of range");
        forward_row(layers, spec.activation, data.row(r), pre, post);
        total += head_loss(spec.head, post[L], data, r, delta);
        for (size_t l = L; l-- > 0;) {
            const auto & lay = layers[l];
            const auto & x = post[l];
            for (size_t o = 0; o < lay.out; ++o) {
                const double d = delta[o];
                gb[l][o] += d;
                double * g = gw[l].data() + o * lay.in;
                for (size_t i = 0; i < lay.in; ++i) g[i] += d * x[i];
            }
            if (l == 0) break;
            delta_prev.assign(lay.in, 0.0);
            for (size_t o = 0; o < lay.out; ++o) {
                const float * w = lay.weight + o * lay.in;
                for (size_t i = 0; i < lay.in; ++i) delta_prev[i] += static_cast<double>(w[i]) * delta[o];
            }
            for (size_t i = 0; i < lay.in; ++i) {
                delta_prev[i] *= activate_grad(spec.activation, pre[l][i], post[l][i]);
            }
            std::swap(delta, delta_prev);
        }
    }

    const double scale = 1.0 / static_cast<double>(rows.size());
    LossAndGrads out;
    out.loss = total * scale;
    if (!std::isfinite(out.loss)) throw NonFiniteError("forward_backward: non-finite loss");
    out.grads = parameter_layout(spec);
    for (size_t l = 0; l < L; ++l) {
        auto & w = out.grads.at(weight_name(l)).data;
        auto & b = out.grads.at(bias_name(l)).data;
        for (size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(gw[l][i] * scale);
        for (size_t i = 0; i < b.size(); ++i) b[i] = static_cast<float>(gb[l][i] * scale);
    }
    out.grads.require_finite("forward_backward");
    return out;
}

double dataset_loss(const ToyModel & model, const Dataset & data) {
    require_compatible(model, data);
    double total = 0.0;
    std::vector<double> grad;
    for (size_t r = 0; r < data.size(); ++r) {
        total += head_loss(model.spec().head, model.forward(data.row(r)), data, r, grad);
    }
    return data.size() ? total / static_cast<double>(data.size()) : 0.0;
}

} // namespace lota
