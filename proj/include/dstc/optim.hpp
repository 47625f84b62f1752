#pragma once

#include <array>
#include <span>
#include <vector>

#include "dstc/losses.hpp"
#include "dstc/model.hpp"

namespace dstc {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0; // global-norm gradient clipping, 0 disables
};

// Per-subnetwork trainability. Frozen subnetworks stay bitwise unchanged,
// moment state included.
struct TrainMask {
    bool e_x = true, e_y = true, c_x = true, c_y = true, t_xy = true, t_yx = true;

    bool enabled(Subnet which) const;

    // Stage 1: encoders and classifiers only.
    static TrainMask encoders_and_classifiers() { return {true, true, true, true, false, false}; }
    // Stage 2: encoders and translators, classifiers frozen.
    static TrainMask encoders_and_translators() { return {true, true, false, false, true, true}; }
};

// First/second moments for one parameter tensor.
struct MomentPair {
    std::vector<double> m;
    std::vector<double> v;
};

struct AdamState {
    AdamConfig config;
    long long t = 0; // completed steps
    std::array<std::vector<MomentPair>, 6> subnets;
};

AdamState make_adam_state(const DstcModel& model, const AdamConfig& config = {});

// One bias-corrected Adam update on a flat parameter tensor; t is the
// current (already incremented) step count.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, long long t, double lr, const AdamConfig& config,
                 double grad_scale = 1.0);

// Applies Adam to every trainable subnetwork. Throws NumericError before
// touching anything if a trainable gradient is non-finite.
void adam_step(DstcModel& model, const ModelGrads& grads, AdamState& state, double lr,
               const TrainMask& mask);

} // namespace dstc
