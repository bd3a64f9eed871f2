#pragma once

#include "lota/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lota {

enum class Activation { Tanh, Relu };
enum class Head { SoftmaxCrossEntropy, MeanSquaredError };

const char * activation_name(Activation a);
const char * head_name(Head h);
Activation parse_activation(const std::string & s);
Head parse_head(const std::string & s);

// Multi-layer perceptron. widths = {in, hidden..., out}; layer i maps
// widths[i] -> widths[i + 1] and owns "layer{i}.weight" [out, in] and
// "layer{i}.bias" [out]. Hidden layers apply the activation; the last
// layer is linear and feeds the head.
struct ModelSpec {
    std::vector<int64_t> widths;
    Activation activation = Activation::Tanh;
    Head head = Head::SoftmaxCrossEntropy;

    size_t num_layers() const { return widths.size() - 1; }
    size_t input_dim() const { return static_cast<size_t>(widths.front()); }
    size_t output_dim() const { return static_cast<size_t>(widths.back()); }

    void validate() const;

    bool operator==(const ModelSpec &) const = default;
};

std::string weight_name(size_t layer);
std::string bias_name(size_t layer);

// Rows of inputs with either class labels (classification) or real target
// vectors (regression).
struct Dataset {
    std::string task_id;
    size_t input_dim = 0;
    std::vector<float> inputs;    // size() x input_dim, row-major
    std::vector<int32_t> labels;  // classification targets
    size_t target_dim = 0;
    std::vector<float> targets;   // size() x target_dim, regression targets

    size_t size() const { return input_dim ? inputs.size() / input_dim : 0; }
    bool is_classification() const { return target_dim == 0; }
    std::span<const float> row(size_t i) const { return {inputs.data() + i * input_dim, input_dim}; }
    std::span<const float> target_row(size_t i) const { return {targets.data() + i * target_dim, target_dim}; }

    void validate() const;

    Dataset subset(std::span<const size_t> rows) const;
    Dataset head(size_t n) const;
};

// Rows of `a` followed by rows of `b`; inputs and target kinds must agree.
Dataset concat(const Dataset & a, const Dataset & b, const std::string & task_id);

class ToyModel {
public:
    ToyModel(ModelSpec spec, ParameterMap params);

    // Glorot-uniform weights, zero biases.
    static ToyModel initialize(const ModelSpec & spec, uint64_t seed);

    const ModelSpec & spec() const { return spec_; }
    const ParameterMap & params() const { return params_; }
    ParameterMap & params() { return params_; }

    ToyModel with_params(ParameterMap params) const { return ToyModel(spec_, std::move(params)); }

    // Output-layer pre-activations (logits or regression outputs).
    std::vector<double> forward(std::span<const float> input) const;

private:
    ModelSpec spec_;
    ParameterMap params_;
};

ParameterMap parameter_layout(const ModelSpec & spec);

void require_compatible(const ToyModel & model, const Dataset & data);

struct LossAndGrads {
    double loss = 0.0;
    ParameterMap grads;
};

// Mean loss over `rows` and its gradient. Accumulation is in double and in
// row order, so results are reproducible bit for bit. Cross-entropy is the
// mean negative log-likelihood; MSE is the mean over rows of the squared
// L2 error. Throws NonFiniteError on a non-finite loss.
LossAndGrads forward_backward(const ToyModel & model, const Dataset & data, std::span<const size_t> rows);
LossAndGrads forward_backward(const ModelSpec & spec, const ParameterMap & params, const Dataset & data,
                              std::span<const size_t> rows);

std::vector<double> forward(const ModelSpec & spec, const ParameterMap & params, std::span<const float> input);

// Mean loss over the whole dataset.
double dataset_loss(const ToyModel & model, const Dataset & data);

} // namespace lota
