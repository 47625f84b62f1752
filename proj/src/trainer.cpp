#include "dstc/trainer.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace dstc {

namespace {

struct StageSetup {
    int stage_id;
    StageConfig stage;
    ObjectiveOptions objective_opts;
    TrainMask mask;
    std::uint64_t rng_stream;
    bool track_best; // early stopping applies to this stage
};

bool has_split(const PairedDataset& data, Split split) {
    for (std::uint8_t tag : data.split) {
        if (tag == static_cast<std::uint8_t>(split)) {
            return true;
        }
    }
    return false;
}

TrainHistory run_stage(DstcModel& model, const PairedDataset& data, const TrainConfig& cfg,
                       const StageSetup& setup) {
    const std::vector<std::size_t> train_idx = split_indices(data, Split::Train);
    if (train_idx.empty()) {
        throw ConfigError("train: no samples tagged train");
    }
    std::vector<int> train_labels(train_idx.size());
    for (std::size_t i = 0; i < train_idx.size(); ++i) {
        train_labels[i] = data.labels[train_idx[i]];
    }
    const std::vector<double> weights = sampler_weights(train_labels, data.num_classes);

    const std::size_t batch_size = setup.stage.batch_size;
    if (batch_size == 0) {
        throw ConfigError("train: batch size must be positive");
    }
    const std::size_t steps_per_epoch = std::max<std::size_t>(1, train_idx.size() / batch_size);

    Rng rng = Rng(cfg.seed).fork(setup.rng_stream);
    AdamState adam = make_adam_state(model, cfg.adam);
    const bool do_val = has_split(data, Split::Val);

    TrainHistory history;
    DstcModel best_model;
    double best_map = -std::numeric_limits<double>::infinity();
    int epochs_since_best = 0;
    bool have_best = false;

    long long global_step = 0;
    for (int epoch = 0; epoch < setup.stage.epochs; ++epoch) {
        for (std::size_t s = 0; s < steps_per_epoch; ++s, ++global_step) {
            std::vector<std::size_t> picks = sample_batch(weights, batch_size, rng);
            for (std::size_t& p : picks) {
                p = train_idx[p];
            }
            const Batch batch = make_batch(data, picks);
            CombinedResult res = objective(model, batch, setup.objective_opts);
            if (!std::isfinite(res.breakdown.total)) {
                throw NumericError("train: non-finite loss at stage " + std::to_string(setup.stage_id) +
                                   " epoch " + std::to_string(epoch) + " step " + std::to_string(s));
            }
            adam_step(model, res.grads, adam, setup.stage.lr, setup.mask);
            history.steps.push_back({setup.stage_id, epoch, global_step, res.breakdown});
        }

        if (do_val) {
            EpochRecord rec;
            rec.stage = setup.stage_id;
            rec.epoch = epoch;
            rec.val_map_x2y_cos = evaluate(model, data, Split::Val, Direction::XtoY, Metric::Cosine).map;
            rec.val_map_y2x_cos = evaluate(model, data, Split::Val, Direction::YtoX, Metric::Cosine).map;
            rec.val_map_x2y_euc = evaluate(model, data, Split::Val, Direction::XtoY, Metric::Euclidean).map;
            rec.val_map_y2x_euc = evaluate(model, data, Split::Val, Direction::YtoX, Metric::Euclidean).map;
            history.epochs.push_back(rec);

            if (setup.track_best && cfg.early_stop) {
                const double both = 0.5 * (rec.val_map_x2y_cos + rec.val_map_y2x_cos);
                if (both > best_map) {
                    best_map = both;
                    best_model = model;
                    have_best = true;
                    epochs_since_best = 0;
                } else {
                    ++epochs_since_best;
                    if (epochs_since_best >= cfg.patience) {
                        break;
                    }
                }
            }
        }
    }

    if (setup.track_best && cfg.early_stop && have_best) {
        model = best_model;
    }
    return history;
}

} // namespace

LossWeights preset_loss_weights(const std::string& preset_name) {
    if (preset_name == "wikipedia") {
        return {10.0, 1.0, 1000.0, 100.0, Metric::Euclidean};
    }
    if (preset_name == "pascal") {
        return {10.0, 1.0, 0.01, 1.0, Metric::Euclidean};
    }
    return {1.0, 1.0, 1.0, 1.0, Metric::Euclidean};
}

TrainHistory train_stage1(DstcModel& model, const PairedDataset& data, const TrainConfig& cfg) {
    check_model_data_compat(model, data.num_classes, data.dim_x(), data.dim_y());
    StageSetup setup;
    setup.stage_id = 1;
    setup.stage = cfg.stage1;
    setup.objective_opts.weights = {0.0, 0.0, 0.0, 0.0, cfg.stage2_weights.pointwise_metric};
    setup.objective_opts.include_ce = true;
    setup.objective_opts.paths = PathMask::ce_only();
    setup.mask = TrainMask::encoders_and_classifiers();
    setup.rng_stream = 11;
    setup.track_best = false;
    return run_stage(model, data, cfg, setup);
}

TrainHistory train_stage2(DstcModel& model, const PairedDataset& data, const TrainConfig& cfg) {
    check_model_data_compat(model, data.num_classes, data.dim_x(), data.dim_y());
    StageSetup setup;
    setup.stage_id = 2;
    setup.stage = cfg.stage2;
    setup.objective_opts.weights = cfg.stage2_weights;
    setup.objective_opts.include_ce = cfg.stage2_include_ce;
    setup.objective_opts.paths = PathMask::all();
    setup.mask = TrainMask::encoders_and_translators();
    setup.rng_stream = 22;
    setup.track_best = true;
    return run_stage(model, data, cfg, setup);
}

TrainHistory train(DstcModel& model, const PairedDataset& data, const TrainConfig& cfg) {
    TrainHistory history;
    if (cfg.run_stage1) {
        history = train_stage1(model, data, cfg);
    }
    TrainHistory second = train_stage2(model, data, cfg);
    history.steps.insert(history.steps.end(), second.steps.begin(), second.steps.end());
    history.epochs.insert(history.epochs.end(), second.epochs.begin(), second.epochs.end());
    return history;
}

void write_history_csv(const std::string& path, const TrainHistory& history) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw IoError(IoError::Kind::OpenFailed, "cannot open for writing: " + path);
    }
    os << "stage,epoch,step,ce,pc,dstc,cpc,cdstc,total,val_map_x2y,val_map_y2x\n";
    // Step and epoch rows interleave in stage/epoch order.
    std::size_t ei = 0;
    for (const StepRecord& sr : history.steps) {
        while (ei < history.epochs.size() &&
               (history.epochs[ei].stage < sr.stage ||
                (history.epochs[ei].stage == sr.stage && history.epochs[ei].epoch < sr.epoch))) {
            const EpochRecord& er = history.epochs[ei++];
            os << er.stage << "," << er.epoch << ",,,,,,,," << er.val_map_x2y_cos << ","
               << er.val_map_y2x_cos << "\n";
        }
        os << sr.stage << "," << sr.epoch << "," << sr.step << "," << sr.loss.ce << "," << sr.loss.pc
           << "," << sr.loss.dstc << "," << sr.loss.cpc << "," << sr.loss.cdstc << "," << sr.loss.total
           << ",,\n";
    }
    while (ei < history.epochs.size()) {
        const EpochRecord& er = history.epochs[ei++];
        os << er.stage << "," << er.epoch << ",,,,,,,," << er.val_map_x2y_cos << "," << er.val_map_y2x_cos
           << "\n";
    }
    if (!os) {
        throw IoError(IoError::Kind::WriteFailed, "write failed: " + path);
    }
}

} // namespace dstc
