#include "dstc/nn.hpp"

#include <cmath>
#include <string>

namespace dstc {

namespace {

const LinearLayer* first_linear(const Mlp& net) {
    for (const Layer& l : net.layers) {
        if (const auto* lin = std::get_if<LinearLayer>(&l)) {
            return lin;
        }
    }
    return nullptr;
}

const LinearLayer* last_linear(const Mlp& net) {
    for (auto it = net.layers.rbegin(); it != net.layers.rend(); ++it) {
        if (const auto* lin = std::get_if<LinearLayer>(&*it)) {
            return lin;
        }
    }
    return nullptr;
}

DenseMatrix linear_forward(const LinearLayer& lin, const DenseMatrix& x) {
    if (x.cols != lin.in_dim()) {
        throw DimensionError("linear: input has " + std::to_string(x.cols) + " cols, layer expects " +
                             std::to_string(lin.in_dim()));
    }
    DenseMatrix out = matmul(x, lin.weight);
    for (std::size_t i = 0; i < out.rows; ++i) {
        double* row = out.data.data() + i * out.cols;
        for (std::size_t j = 0; j < out.cols; ++j) {
            row[j] += lin.bias[j];
        }
    }
    return out;
}

DenseMatrix batchnorm_forward(BatchNormLayer& bn, const DenseMatrix& x, Mode mode, LayerCache* cache) {
    const std::size_t dim = bn.dim();
    if (x.cols != dim) {
        throw DimensionError("batchnorm: input has " + std::to_string(x.cols) + " cols, layer expects " +
                             std::to_string(dim));
    }
    const std::size_t n = x.rows;
    DenseMatrix out(n, dim);

    if (mode == Mode::Eval) {
        for (std::size_t j = 0; j < dim; ++j) {
            const double inv = 1.0 / std::sqrt(bn.running_var[j] + bn.eps);
            for (std::size_t i = 0; i < n; ++i) {
                out(i, j) = bn.gamma[j] * (x(i, j) - bn.running_mean[j]) * inv + bn.beta[j];
            }
        }
        return out;
    }

    if (n < 2) {
        throw DimensionError("batchnorm: train mode needs batch >= 2, got " + std::to_string(n));
    }

    std::vector<double> mean(dim, 0.0);
    std::vector<double> var(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            mean[j] += x(i, j);
        }
    }
    for (std::size_t j = 0; j < dim; ++j) {
        mean[j] /= static_cast<double>(n);
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            const double d = x(i, j) - mean[j];
            var[j] += d * d;
        }
    }
    // Biased variance throughout, including the running update.
    for (std::size_t j = 0; j < dim; ++j) {
        var[j] /= static_cast<double>(n);
    }

    std::vector<double> inv_std(dim);
    for (std::size_t j = 0; j < dim; ++j) {
        inv_std[j] = 1.0 / std::sqrt(var[j] + bn.eps);
    }

    DenseMatrix x_hat(n, dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            const double h = (x(i, j) - mean[j]) * inv_std[j];
            x_hat(i, j) = h;
            out(i, j) = bn.gamma[j] * h + bn.beta[j];
        }
    }

    for (std::size_t j = 0; j < dim; ++j) {
        bn.running_mean[j] = (1.0 - bn.momentum) * bn.running_mean[j] + bn.momentum * mean[j];
        bn.running_var[j] = (1.0 - bn.momentum) * bn.running_var[j] + bn.momentum * var[j];
    }

    if (cache) {
        cache->x_hat = std::move(x_hat);
        cache->inv_std = std::move(inv_std);
    }
    return out;
}

} // namespace

std::size_t Mlp::in_dim() const {
    const LinearLayer* lin = first_linear(*this);
    return lin ? lin->in_dim() : 0;
}

std::size_t Mlp::out_dim() const {
    const LinearLayer* lin = last_linear(*this);
    return lin ? lin->out_dim() : 0;
}

bool Mlp::has_batchnorm() const {
    for (const Layer& l : layers) {
        if (std::holds_alternative<BatchNormLayer>(l)) {
            return true;
        }
    }
    return false;
}

ForwardResult mlp_forward(Mlp& net, const DenseMatrix& input, Mode mode) {
    ForwardResult res;
    res.cache.mode = mode;
    res.cache.batch = input.rows;
    res.cache.layers.resize(net.layers.size());

    DenseMatrix cur = input;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        LayerCache& lc = res.cache.layers[li];
        Layer& layer = net.layers[li];
        if (auto* lin = std::get_if<LinearLayer>(&layer)) {
            lc.input = cur;
            cur = linear_forward(*lin, cur);
        } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            cur = batchnorm_forward(*bn, cur, mode, &lc);
        } else {
            lc.input = cur;
            for (double& v : cur.data) {
                v = v > 0.0 ? v : 0.0;
            }
        }
    }
    res.output = std::move(cur);
    return res;
}

DenseMatrix mlp_eval(const Mlp& net, const DenseMatrix& input) {
    DenseMatrix cur = input;
    for (const Layer& layer : net.layers) {
        if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
            cur = linear_forward(*lin, cur);
        } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            // const_cast-free path: eval-mode batchnorm never mutates.
            const std::size_t dim = bn->dim();
            if (cur.cols != dim) {
                throw DimensionError("batchnorm: input has " + std::to_string(cur.cols) +
                                     " cols, layer expects " + std::to_string(dim));
            }
            DenseMatrix out(cur.rows, dim);
            for (std::size_t j = 0; j < dim; ++j) {
                const double inv = 1.0 / std::sqrt(bn->running_var[j] + bn->eps);
                for (std::size_t i = 0; i < cur.rows; ++i) {
                    out(i, j) = bn->gamma[j] * (cur(i, j) - bn->running_mean[j]) * inv + bn->beta[j];
                }
            }
            cur = std::move(out);
        } else {
            for (double& v : cur.data) {
                v = v > 0.0 ? v : 0.0;
            }
        }
    }
    return cur;
}

BackwardResult mlp_backward(const Mlp& net, const ForwardCache& cache, const DenseMatrix& grad_output) {
    if (cache.mode != Mode::Train) {
        throw ConfigError("mlp_backward: cache must come from a train-mode forward");
    }
    if (cache.layers.size() != net.layers.size()) {
        throw DimensionError("mlp_backward: cache has " + std::to_string(cache.layers.size()) +
                             " layers, net has " + std::to_string(net.layers.size()));
    }

    BackwardResult res;
    res.grads.layers.resize(net.layers.size());

    DenseMatrix grad = grad_output;
    for (std::size_t idx = net.layers.size(); idx-- > 0;) {
        const Layer& layer = net.layers[idx];
        const LayerCache& lc = cache.layers[idx];

        if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
            if (grad.cols != lin->out_dim() || lc.input.rows != grad.rows) {
                throw DimensionError("mlp_backward: gradient shape does not match linear layer");
            }
            LinearGrads lg;
            lg.weight = matmul_at_b(lc.input, grad);
            lg.bias.assign(lin->out_dim(), 0.0);
            for (std::size_t i = 0; i < grad.rows; ++i) {
                for (std::size_t j = 0; j < grad.cols; ++j) {
                    lg.bias[j] += grad(i, j);
                }
            }
            DenseMatrix gin = matmul_a_bt(grad, lin->weight);
            res.grads.layers[idx] = std::move(lg);
            grad = std::move(gin);
        } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            const std::size_t n = grad.rows;
            const std::size_t dim = bn->dim();
            if (grad.cols != dim || lc.x_hat.rows != n) {
                throw DimensionError("mlp_backward: gradient shape does not match batchnorm layer");
            }
            BatchNormGrads bg;
            bg.gamma.assign(dim, 0.0);
            bg.beta.assign(dim, 0.0);
            std::vector<double> sum_dxhat(dim, 0.0);
            std::vector<double> sum_dxhat_xhat(dim, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < dim; ++j) {
                    const double g = grad(i, j);
                    const double h = lc.x_hat(i, j);
                    bg.gamma[j] += g * h;
                    bg.beta[j] += g;
                    const double dxhat = g * bn->gamma[j];
                    sum_dxhat[j] += dxhat;
                    sum_dxhat_xhat[j] += dxhat * h;
                }
            }
            DenseMatrix gin(n, dim);
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < dim; ++j) {
                    const double dxhat = grad(i, j) * bn->gamma[j];
                    gin(i, j) = lc.inv_std[j] *
                                (dxhat - inv_n * sum_dxhat[j] - lc.x_hat(i, j) * inv_n * sum_dxhat_xhat[j]);
                }
            }
            res.grads.layers[idx] = std::move(bg);
            grad = std::move(gin);
        } else {
            if (!lc.input.same_shape(grad)) {
                throw DimensionError("mlp_backward: gradient shape does not match relu layer");
            }
            DenseMatrix gin(grad.rows, grad.cols);
            for (std::size_t i = 0; i < grad.size(); ++i) {
                // Pre-activation exactly 0 takes subgradient 0.
                gin.data[i] = lc.input.data[i] > 0.0 ? grad.data[i] : 0.0;
            }
            res.grads.layers[idx] = ReluGrads{};
            grad = std::move(gin);
        }
    }
    res.grad_input = std::move(grad);
    return res;
}

Mlp init_mlp(const std::vector<std::size_t>& dims, const std::vector<bool>& with_batchnorm, std::uint64_t seed) {
    if (dims.size() < 2) {
        throw ConfigError("init_mlp: need at least [in, out] dims");
    }
    for (std::size_t d : dims) {
        if (d == 0) {
            throw ConfigError("init_mlp: all dims must be positive");
        }
    }
    const std::size_t hidden = dims.size() - 2;
    if (with_batchnorm.size() != hidden) {
        throw ConfigError("init_mlp: need one batchnorm flag per hidden layer (" + std::to_string(hidden) +
                          "), got " + std::to_string(with_batchnorm.size()));
    }

    Rng rng(seed);
    Mlp net;
    for (std::size_t li = 0; li + 1 < dims.size(); ++li) {
        const std::size_t fan_in = dims[li];
        const std::size_t fan_out = dims[li + 1];
        LinearLayer lin;
        lin.weight = DenseMatrix(fan_in, fan_out);
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& w : lin.weight.data) {
            w = rng.next_uniform(-bound, bound);
        }
        lin.bias.assign(fan_out, 0.0);
        net.layers.emplace_back(std::move(lin));

        const bool is_hidden = li + 2 < dims.size();
        if (is_hidden) {
            if (with_batchnorm[li]) {
                BatchNormLayer bn;
                bn.gamma.assign(fan_out, 1.0);
                bn.beta.assign(fan_out, 0.0);
                bn.running_mean.assign(fan_out, 0.0);
                bn.running_var.assign(fan_out, 1.0);
                net.layers.emplace_back(std::move(bn));
            }
            net.layers.emplace_back(ReluLayer{});
        }
    }
    return net;
}

Mlp init_mlp(const std::vector<std::size_t>& dims, bool with_batchnorm, std::uint64_t seed) {
    const std::size_t hidden = dims.size() >= 2 ? dims.size() - 2 : 0;
    return init_mlp(dims, std::vector<bool>(hidden, with_batchnorm), seed);
}

void accumulate(MlpGrads& a, const MlpGrads& b) {
    if (a.layers.size() != b.layers.size()) {
        throw DimensionError("accumulate: gradient layer counts disagree");
    }
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        if (auto* la = std::get_if<LinearGrads>(&a.layers[i])) {
            const auto& lb = std::get<LinearGrads>(b.layers[i]);
            for (std::size_t k = 0; k < la->weight.size(); ++k) {
                la->weight.data[k] += lb.weight.data[k];
            }
            for (std::size_t k = 0; k < la->bias.size(); ++k) {
                la->bias[k] += lb.bias[k];
            }
        } else if (auto* ba = std::get_if<BatchNormGrads>(&a.layers[i])) {
            const auto& bb = std::get<BatchNormGrads>(b.layers[i]);
            for (std::size_t k = 0; k < ba->gamma.size(); ++k) {
                ba->gamma[k] += bb.gamma[k];
                ba->beta[k] += bb.beta[k];
            }
        }
    }
}

void scale(MlpGrads& g, double factor) {
    for (LayerGrads& lg : g.layers) {
        if (auto* l = std::get_if<LinearGrads>(&lg)) {
            for (double& v : l->weight.data) v *= factor;
            for (double& v : l->bias) v *= factor;
        } else if (auto* b = std::get_if<BatchNormGrads>(&lg)) {
            for (double& v : b->gamma) v *= factor;
            for (double& v : b->beta) v *= factor;
        }
    }
}

MlpGrads zero_grads_like(const Mlp& net) {
    MlpGrads g;
    g.layers.reserve(net.layers.size());
    for (const Layer& layer : net.layers) {
        if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
            LinearGrads lg;
            lg.weight = DenseMatrix(lin->weight.rows, lin->weight.cols);
            lg.bias.assign(lin->bias.size(), 0.0);
            g.layers.emplace_back(std::move(lg));
        } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            BatchNormGrads bg;
            bg.gamma.assign(bn->dim(), 0.0);
            bg.beta.assign(bn->dim(), 0.0);
            g.layers.emplace_back(std::move(bg));
        } else {
            g.layers.emplace_back(ReluGrads{});
        }
    }
    return g;
}

} // namespace dstc
