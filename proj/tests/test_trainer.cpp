#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dstc/trainer.hpp"
#include "test_support.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

using namespace dstc;

namespace {

std::vector<double> full_snapshot(const Mlp& net) {
    std::vector<double> flat;
    for (const Layer& layer : net.layers) {
        if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
            flat.insert(flat.end(), lin->weight.data.begin(), lin->weight.data.end());
            flat.insert(flat.end(), lin->bias.begin(), lin->bias.end());
        } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            flat.insert(flat.end(), bn->gamma.begin(), bn->gamma.end());
            flat.insert(flat.end(), bn->beta.begin(), bn->beta.end());
            flat.insert(flat.end(), bn->running_mean.begin(), bn->running_mean.end());
            flat.insert(flat.end(), bn->running_var.begin(), bn->running_var.end());
        }
    }
    return flat;
}

std::vector<double> params_only(const Mlp& net) {
    std::vector<double> flat;
    for (const Layer& layer : net.layers) {
        if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
            flat.insert(flat.end(), lin->weight.data.begin(), lin->weight.data.end());
            flat.insert(flat.end(), lin->bias.begin(), lin->bias.end());
        } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            flat.insert(flat.end(), bn->gamma.begin(), bn->gamma.end());
            flat.insert(flat.end(), bn->beta.begin(), bn->beta.end());
        }
    }
    return flat;
}

PairedDataset small_synthetic(double spread, double pair_noise, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.samples_per_class = 30;
    spec.dim_x = 12;
    spec.dim_y = 10;
    spec.cluster_spread = spread;
    spec.pair_noise = pair_noise;
    spec.seed = seed;
    return generate_synthetic(spec);
}

TrainConfig quick_config(int epochs1, int epochs2) {
    TrainConfig cfg;
    cfg.stage1 = {epochs1, 1e-3, 16};
    cfg.stage2 = {epochs2, 1e-3, 16};
    cfg.stage2_weights = {1, 1, 1, 1, Metric::Euclidean};
    cfg.seed = 7;
    cfg.early_stop = false;
    return cfg;
}

} // namespace

TEST_CASE("stage 1 leaves the translators bitwise unchanged") {
    PairedDataset data = small_synthetic(0.2, 0.0, 1);
    DstcModel model = build_model(synthetic_preset(4, 12, 10, 32), 4, 12, 10, 5);
    const std::vector<double> txy_before = full_snapshot(model.t_xy);
    const std::vector<double> tyx_before = full_snapshot(model.t_yx);

    TrainConfig cfg = quick_config(2, 0);
    train_stage1(model, data, cfg);

    CHECK(full_snapshot(model.t_xy) == txy_before);
    CHECK(full_snapshot(model.t_yx) == tyx_before);
    // And the encoders did move.
    DstcModel fresh = build_model(synthetic_preset(4, 12, 10, 32), 4, 12, 10, 5);
    CHECK(full_snapshot(model.e_x) != full_snapshot(fresh.e_x));
}

TEST_CASE("stage 2 leaves the classifiers bitwise unchanged") {
    PairedDataset data = small_synthetic(0.2, 0.0, 2);
    DstcModel model = build_model(synthetic_preset(4, 12, 10, 32), 4, 12, 10, 6);
    TrainConfig cfg = quick_config(2, 2);
    train_stage1(model, data, cfg);

    const std::vector<double> cx_before = full_snapshot(model.c_x);
    const std::vector<double> cy_before = full_snapshot(model.c_y);
    train_stage2(model, data, cfg);
    CHECK(full_snapshot(model.c_x) == cx_before);
    CHECK(full_snapshot(model.c_y) == cy_before);
    // Translators trained.
    DstcModel fresh = build_model(synthetic_preset(4, 12, 10, 32), 4, 12, 10, 6);
    CHECK(params_only(model.t_xy) != params_only(fresh.t_xy));
}

TEST_CASE("stage 2 with all-zero weights trains encoders but not translator params") {
    PairedDataset data = small_synthetic(0.2, 0.0, 3);
    DstcModel model = build_model(synthetic_preset(4, 12, 10, 32), 4, 12, 10, 7);
    TrainConfig cfg = quick_config(1, 2);
    cfg.stage2_weights = {0, 0, 0, 0, Metric::Euclidean};
    train_stage1(model, data, cfg);

    const std::vector<double> enc_before = params_only(model.e_x);
    const std::vector<double> txy_params_before = params_only(model.t_xy);
    const std::vector<double> txy_full_before = full_snapshot(model.t_xy);
    train_stage2(model, data, cfg);

    CHECK(params_only(model.e_x) != enc_before);              // CE still flows
    CHECK(params_only(model.t_xy) == txy_params_before);      // no gradient path
    CHECK(full_snapshot(model.t_xy) != txy_full_before);      // running stats do move
}

TEST_CASE("identical seeds give identical loss traces and mAP") {
    PairedDataset data = small_synthetic(0.3, 0.2, 4);
    TrainConfig cfg = quick_config(2, 2);

    DstcModel m1 = build_model(synthetic_preset(4, 12, 10, 32), 4, 12, 10, 9);
    DstcModel m2 = build_model(synthetic_preset(4, 12, 10, 32), 4, 12, 10, 9);
    TrainHistory h1 = train(m1, data, cfg);
    TrainHistory h2 = train(m2, data, cfg);

    REQUIRE(h1.steps.size() == h2.steps.size());
    for (std::size_t i = 0; i < h1.steps.size(); ++i) {
        CHECK(h1.steps[i].loss.total == h2.steps[i].loss.total); // bitwise
        CHECK(h1.steps[i].loss.ce == h2.steps[i].loss.ce);
    }
    const double map1 = evaluate(m1, data, Split::Test, Direction::Both, Metric::Cosine).map;
    const double map2 = evaluate(m2, data, Split::Test, Direction::Both, Metric::Cosine).map;
    CHECK(map1 == map2);
}

TEST_CASE("separable data trains to high unimodal accuracy and mAP") {
    PairedDataset data = small_synthetic(0.05, 0.0, 5);
    DstcModel model = build_model(synthetic_preset(4, 12, 10, 32), 4, 12, 10, 11);
    TrainConfig cfg = quick_config(30, 30);
    cfg.stage2_weights = {1, 1, 1, 1, Metric::Euclidean};
    train(model, data, cfg);

    CHECK(classification_accuracy(model, data, Split::Val, 0) >= 0.95);
    CHECK(classification_accuracy(model, data, Split::Val, 1) >= 0.95);
    const double map = evaluate(model, data, Split::Val, Direction::Both, Metric::Cosine).map;
    CHECK(map >= 0.9);
    // Translate-then-classify accuracy: class membership survives translation.
    CHECK(translated_accuracy(model, data, Split::Val, Direction::Both) >= 0.9);
}

TEST_CASE("euclidean-trained models score better under cosine at test time") {
    // Directional check on noisy data: with euclidean training, cosine
    // test scoring is at least as good as euclidean test scoring.
    SyntheticSpec spec;
    spec.num_classes = 6;
    spec.samples_per_class = 40;
    spec.dim_x = 16;
    spec.dim_y = 14;
    spec.cluster_spread = 1.0;
    spec.pair_noise = 0.3;
    spec.seed = 21;
    PairedDataset data = generate_synthetic(spec);

    auto train_with = [&](Metric metric) {
        DstcModel model = build_model(synthetic_preset(6, 16, 14, 32), 6, 16, 14, 22);
        TrainConfig cfg = quick_config(15, 20);
        cfg.stage2_weights = {1, 1, 1, 1, metric};
        cfg.early_stop = false;
        train(model, data, cfg);
        return model;
    };
    DstcModel euc_model = train_with(Metric::Euclidean);
    DstcModel cos_model = train_with(Metric::Cosine);

    const MetricGrid grid = metric_grid(euc_model, cos_model, data, Split::Test);
    // cells[0][1] = euc-train/cos-test, cells[0][0] = euc-train/euc-test.
    CHECK(grid.cells[0][1].map_both >= grid.cells[0][0].map_both);
}

TEST_CASE("stage-2 smoothed training loss trends down on separable data") {
    PairedDataset data = small_synthetic(0.05, 0.0, 6);
    DstcModel model = build_model(synthetic_preset(4, 12, 10, 32), 4, 12, 10, 12);
    TrainConfig cfg = quick_config(10, 25);
    TrainHistory history = train(model, data, cfg);

    std::vector<double> stage2_losses;
    for (const StepRecord& sr : history.steps) {
        if (sr.stage == 2) {
            stage2_losses.push_back(sr.loss.total);
        }
    }
    REQUIRE(stage2_losses.size() >= 100);
    const std::size_t window = std::min<std::size_t>(50, stage2_losses.size() / 2);
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < window; ++i) {
        head += stage2_losses[i];
        tail += stage2_losses[stage2_losses.size() - window + i];
    }
    CHECK(tail < head);
}

TEST_CASE("early stopping returns the best validation checkpoint") {
    PairedDataset data = small_synthetic(0.3, 0.3, 7);
    DstcModel model = build_model(synthetic_preset(4, 12, 10, 32), 4, 12, 10, 13);
    TrainConfig cfg = quick_config(3, 10);
    cfg.early_stop = true;
    cfg.patience = 3;
    TrainHistory history = train(model, data, cfg);

    double best = -1.0;
    for (const EpochRecord& er : history.epochs) {
        if (er.stage == 2) {
            best = std::max(best, 0.5 * (er.val_map_x2y_cos + er.val_map_y2x_cos));
        }
    }
    const double final_val = evaluate(model, data, Split::Val, Direction::Both, Metric::Cosine).map;
    CHECK(final_val == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("non-finite losses abort with a diagnostic") {
    PairedDataset data = small_synthetic(0.2, 0.0, 8);
    DstcModel model = build_model(synthetic_preset(4, 12, 10, 32), 4, 12, 10, 14);
    TrainConfig cfg = quick_config(1, 1);
    cfg.stage1.lr = 1e80; // drives the parameters to overflow
    cfg.stage1.epochs = 4;
    CHECK_THROWS_AS(train_stage1(model, data, cfg), NumericError);
}

TEST_CASE("preset loss-weight defaults") {
    const LossWeights wiki = preset_loss_weights("wikipedia");
    CHECK(wiki.alpha == 10.0);
    CHECK(wiki.beta == 1.0);
    CHECK(wiki.gamma == 1000.0);
    CHECK(wiki.delta == 100.0);

    const LossWeights pascal = preset_loss_weights("pascal");
    CHECK(pascal.alpha == 10.0);
    CHECK(pascal.beta == 1.0);
    CHECK(pascal.gamma == 0.01);
    CHECK(pascal.delta == 1.0);

    const LossWeights audioset = preset_loss_weights("audioset");
    CHECK(audioset.alpha == 1.0);
    CHECK(audioset.beta == 1.0);
    CHECK(audioset.gamma == 1.0);
    CHECK(audioset.delta == 1.0);
}

TEST_CASE("history csv has the documented shape") {
    PairedDataset data = small_synthetic(0.2, 0.0, 9);
    DstcModel model = build_model(synthetic_preset(4, 12, 10, 32), 4, 12, 10, 15);
    TrainConfig cfg = quick_config(1, 1);
    TrainHistory history = train(model, data, cfg);

    const std::string path =
        (std::filesystem::temp_directory_path() /
         ("dstc_hist_" + std::to_string(::getpid()) + ".csv")).string();
    write_history_csv(path, history);

    std::ifstream is(path);
    std::string header;
    REQUIRE(std::getline(is, header));
    CHECK(header == "stage,epoch,step,ce,pc,dstc,cpc,cdstc,total,val_map_x2y,val_map_y2x");
    std::size_t rows = 0;
    std::string line;
    while (std::getline(is, line)) {
        ++rows;
    }
    CHECK(rows == history.steps.size() + history.epochs.size());
    std::filesystem::remove(path);
}
