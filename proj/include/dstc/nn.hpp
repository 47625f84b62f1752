#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "dstc/matrix.hpp"
#include "dstc/rng.hpp"

namespace dstc {

enum class Mode { Train, Eval };

struct LinearLayer {
    DenseMatrix weight;       // in_dim x out_dim
    std::vector<double> bias; // out_dim

    std::size_t in_dim() const { return weight.rows; }
    std::size_t out_dim() const { return weight.cols; }
};

struct BatchNormLayer {
    std::vector<double> gamma;
    std::vector<double> beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1; // running <- (1-momentum)*running + momentum*batch
    double eps = 1e-5;

    std::size_t dim() const { return gamma.size(); }
};

struct ReluLayer {};

using Layer = std::variant<LinearLayer, BatchNormLayer, ReluLayer>;

// Plain MLP: hidden blocks are Linear -> [BatchNorm] -> ReLU, the final
// block is a bare Linear.
struct Mlp {
    std::vector<Layer> layers;

    std::size_t in_dim() const;
    std::size_t out_dim() const;
    bool has_batchnorm() const;
};

// Per-layer values stashed by the forward pass for backward.
struct LayerCache {
    DenseMatrix input;           // linear and relu
    DenseMatrix x_hat;           // batchnorm, normalized pre-affine values
    std::vector<double> inv_std; // batchnorm, 1/sqrt(var + eps)
};

struct ForwardCache {
    Mode mode = Mode::Train;
    std::size_t batch = 0;
    std::vector<LayerCache> layers;
};

struct LinearGrads {
    DenseMatrix weight;
    std::vector<double> bias;
};

struct BatchNormGrads {
    std::vector<double> gamma;
    std::vector<double> beta;
};

struct ReluGrads {};

using LayerGrads = std::variant<LinearGrads, BatchNormGrads, ReluGrads>;

struct MlpGrads {
    std::vector<LayerGrads> layers;
};

// Accumulates b into a entrywise; shapes must agree.
void accumulate(MlpGrads& a, const MlpGrads& b);
void scale(MlpGrads& g, double factor);
MlpGrads zero_grads_like(const Mlp& net);

struct ForwardResult {
    DenseMatrix output;
    ForwardCache cache;
};

// Train mode uses batch statistics and updates running stats (hence the
// mutable net); eval mode reads running stats only. Train mode with any
// BatchNorm layer requires batch >= 2.
ForwardResult mlp_forward(Mlp& net, const DenseMatrix& input, Mode mode);

// Eval-mode forward without a cache; pure per-sample function.
DenseMatrix mlp_eval(const Mlp& net, const DenseMatrix& input);

struct BackwardResult {
    DenseMatrix grad_input;
    MlpGrads grads;
};

// Exact analytic gradients, including the BatchNorm batch-statistics terms.
// The cache must come from a train-mode forward of the same net.
BackwardResult mlp_backward(const Mlp& net, const ForwardCache& cache, const DenseMatrix& grad_output);

// dims = [in, hidden..., out]; with_batchnorm has one flag per hidden layer.
// Weights are uniform in +-sqrt(6/(fan_in+fan_out)), biases 0, gamma 1,
// beta 0, running stats (0, 1). Deterministic given seed.
Mlp init_mlp(const std::vector<std::size_t>& dims, const std::vector<bool>& with_batchnorm, std::uint64_t seed);

// Convenience: same flag for every hidden layer.
Mlp init_mlp(const std::vector<std::size_t>& dims, bool with_batchnorm, std::uint64_t seed);

} // namespace dstc
