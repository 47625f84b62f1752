#include "dstc/optim.hpp"

#include <cmath>
#include <functional>

namespace dstc {

namespace {

// Walks the parameter tensors of a net together with their gradient
// mirrors, in a fixed order (weight, bias / gamma, beta per layer).
void for_each_param(Mlp& net, const MlpGrads& grads,
                    const std::function<void(std::vector<double>&, const std::vector<double>&)>& fn) {
    if (grads.layers.size() != net.layers.size()) {
        throw DimensionError("adam: gradient layer count does not match the net");
    }
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (auto* lin = std::get_if<LinearLayer>(&net.layers[i])) {
            const auto& lg = std::get<LinearGrads>(grads.layers[i]);
            if (lg.weight.size() != lin->weight.size() || lg.bias.size() != lin->bias.size()) {
                throw DimensionError("adam: linear gradient shape mismatch");
            }
            fn(lin->weight.data, lg.weight.data);
            fn(lin->bias, lg.bias);
        } else if (auto* bn = std::get_if<BatchNormLayer>(&net.layers[i])) {
            const auto& bg = std::get<BatchNormGrads>(grads.layers[i]);
            if (bg.gamma.size() != bn->gamma.size() || bg.beta.size() != bn->beta.size()) {
                throw DimensionError("adam: batchnorm gradient shape mismatch");
            }
            fn(bn->gamma, bg.gamma);
            fn(bn->beta, bg.beta);
        }
    }
}

} // namespace

bool TrainMask::enabled(Subnet which) const {
    switch (which) {
    case Subnet::EncX: return e_x;
    case Subnet::EncY: return e_y;
    case Subnet::ClsX: return c_x;
    case Subnet::ClsY: return c_y;
    case Subnet::TrXY: return t_xy;
    case Subnet::TrYX: return t_yx;
    }
    return false;
}

AdamState make_adam_state(const DstcModel& model, const AdamConfig& config) {
    AdamState state;
    state.config = config;
    for (int s = 0; s < 6; ++s) {
        const Mlp& net = model.subnet(static_cast<Subnet>(s));
        auto& slots = state.subnets[static_cast<std::size_t>(s)];
        for (const Layer& layer : net.layers) {
            if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
                slots.push_back({std::vector<double>(lin->weight.size(), 0.0),
                                 std::vector<double>(lin->weight.size(), 0.0)});
                slots.push_back({std::vector<double>(lin->bias.size(), 0.0),
                                 std::vector<double>(lin->bias.size(), 0.0)});
            } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
                slots.push_back({std::vector<double>(bn->dim(), 0.0), std::vector<double>(bn->dim(), 0.0)});
                slots.push_back({std::vector<double>(bn->dim(), 0.0), std::vector<double>(bn->dim(), 0.0)});
            }
        }
    }
    return state;
}

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, long long t, double lr, const AdamConfig& config,
                 double grad_scale) {
    if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size()) {
        throw DimensionError("adam_update: parameter and state sizes disagree");
    }
    const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
    const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i] * grad_scale;
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
        const double m_hat = m[i] / bias1;
        const double v_hat = v[i] / bias2;
        param[i] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
}

void adam_step(DstcModel& model, const ModelGrads& grads, AdamState& state, double lr,
               const TrainMask& mask) {
    if (lr <= 0.0) {
        throw ConfigError("adam_step: learning rate must be positive");
    }

    // Validate every trainable gradient before mutating anything.
    double sq_norm = 0.0;
    bool finite = true;
    for (int s = 0; s < 6; ++s) {
        const Subnet which = static_cast<Subnet>(s);
        if (!mask.enabled(which)) {
            continue;
        }
        for_each_param(model.subnet(which), grads.subnet(which),
                       [&](std::vector<double>&, const std::vector<double>& g) {
                           for (double x : g) {
                               if (!std::isfinite(x)) {
                                   finite = false;
                               }
                               sq_norm += x * x;
                           }
                       });
    }
    if (!finite) {
        throw NumericError("adam_step: non-finite gradient");
    }

    double grad_scale = 1.0;
    if (state.config.clip_norm > 0.0) {
        const double norm = std::sqrt(sq_norm);
        if (norm > state.config.clip_norm) {
            grad_scale = state.config.clip_norm / norm;
        }
    }

    ++state.t;
    for (int s = 0; s < 6; ++s) {
        const Subnet which = static_cast<Subnet>(s);
        if (!mask.enabled(which)) {
            continue;
        }
        auto& slots = state.subnets[static_cast<std::size_t>(s)];
        std::size_t slot = 0;
        for_each_param(model.subnet(which), grads.subnet(which),
                       [&](std::vector<double>& p, const std::vector<double>& g) {
                           if (slot >= slots.size()) {
                               throw DimensionError("adam_step: optimizer state does not match the model");
                           }
                           MomentPair& mp = slots[slot++];
                           adam_update(p, g, mp.m, mp.v, state.t, lr, state.config, grad_scale);
                       });
    }
}

} // namespace dstc
