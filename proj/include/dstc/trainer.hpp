#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dstc/eval.hpp"
#include "dstc/optim.hpp"

namespace dstc {

struct StageConfig {
    int epochs = 30;
    double lr = 1e-4;
    std::size_t batch_size = 128;
};

struct TrainConfig {
    StageConfig stage1{30, 1e-4, 128};
    StageConfig stage2{30, 1e-4, 128};
    LossWeights stage2_weights;    // alpha, beta, gamma, delta + pointwise metric
    bool stage2_include_ce = true; // ablation rows without CE set this off
    std::uint64_t seed = 0;
    bool early_stop = true; // on stage-2 val "both" cosine mAP
    int patience = 10;
    bool run_stage1 = true;
    AdamConfig adam;
};

struct StepRecord {
    int stage = 0;
    int epoch = 0;
    long long step = 0; // global step within the stage
    LossBreakdown loss;
};

struct EpochRecord {
    int stage = 0;
    int epoch = 0;
    double val_map_x2y_cos = 0.0;
    double val_map_y2x_cos = 0.0;
    double val_map_x2y_euc = 0.0;
    double val_map_y2x_euc = 0.0;
};

struct TrainHistory {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
};

// Documented default loss weights per architecture preset: audioset and
// synthetic use all-equal weights; wikipedia uses (10, 1, 1000, 100);
// pascal uses (10, 1, 0.01, 1). The metric is left at euclidean.
LossWeights preset_loss_weights(const std::string& preset_name);

// Stage 1: classification only. Encoders and classifiers train under the
// CE objective; the translators are never forwarded, so they stay bitwise
// unchanged, running statistics included.
TrainHistory train_stage1(DstcModel& model, const PairedDataset& data, const TrainConfig& cfg);

// Stage 2: classifiers frozen (their gradients still flow into encoders
// and translators), full weighted objective, all paths forwarded.
TrainHistory train_stage2(DstcModel& model, const PairedDataset& data, const TrainConfig& cfg);

// Both stages in order. With early_stop, stage 2 returns the
// best-val-mAP checkpoint (cosine, both directions) instead of the final
// parameters.
TrainHistory train(DstcModel& model, const PairedDataset& data, const TrainConfig& cfg);

// Columns: stage,epoch,step,ce,pc,dstc,cpc,cdstc,total,val_map_x2y,
// val_map_y2x. Step rows leave the val columns empty; epoch rows (cosine
// val mAP) leave the loss columns empty.
void write_history_csv(const std::string& path, const TrainHistory& history);

} // namespace dstc
