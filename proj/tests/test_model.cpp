#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dstc/model.hpp"
#include "test_support.hpp"

#include <filesystem>
#include <fstream>
#include <unistd.h>

using namespace dstc;

namespace {

std::string temp_model_path() {
    static int counter = 0;
    return (std::filesystem::temp_directory_path() /
            ("dstc_model_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + ".bin"))
        .string();
}

std::vector<std::size_t> linear_dims(const Mlp& net) {
    std::vector<std::size_t> dims;
    for (const Layer& layer : net.layers) {
        if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
            if (dims.empty()) {
                dims.push_back(lin->in_dim());
            }
            dims.push_back(lin->out_dim());
        }
    }
    return dims;
}

} // namespace

TEST_CASE("audioset preset sizes") {
    DstcModel model = build_model(audioset_preset(23, 1024, 1024), 23, 1024, 1024, 3);
    CHECK(linear_dims(model.e_x) == std::vector<std::size_t>{1024, 256, 256});
    CHECK(linear_dims(model.e_y) == std::vector<std::size_t>{1024, 512, 256});
    CHECK(linear_dims(model.c_x) == std::vector<std::size_t>{256, 23});
    CHECK(linear_dims(model.t_xy) == std::vector<std::size_t>{256, 128, 64, 128, 256});
    CHECK(linear_dims(model.t_yx) == std::vector<std::size_t>{256, 128, 64, 128, 256});
    CHECK(model.embed_dim == 256);
}

TEST_CASE("wikipedia preset classifier is 1024 to 10") {
    DstcModel model = build_model(wikipedia_preset(10, 4096, 300), 10, 4096, 300, 3);
    CHECK(linear_dims(model.c_x) == std::vector<std::size_t>{1024, 10});
    CHECK(linear_dims(model.c_y) == std::vector<std::size_t>{1024, 10});
    CHECK(linear_dims(model.e_x) == std::vector<std::size_t>{4096, 2048, 1024});
    CHECK(linear_dims(model.t_xy) == std::vector<std::size_t>{1024, 512, 1024});
}

TEST_CASE("custom preset with a broken chain is rejected") {
    ArchPreset preset;
    preset.enc_x = {{8, 6}, {}};
    preset.enc_y = {{5, 6}, {}};
    preset.cls_x = {{7, 3}, {}}; // classifier input != embed dim
    preset.cls_y = {{6, 3}, {}};
    preset.tr_xy = {{6, 6}, {}};
    preset.tr_yx = {{6, 6}, {}};
    CHECK_THROWS_AS(build_model(preset, 3, 8, 5, 1), ConfigError);

    preset.cls_x = {{6, 3}, {}};
    CHECK_NOTHROW(build_model(preset, 3, 8, 5, 1));

    preset.tr_xy = {{6, 4}, {}}; // translator must be square on the embed space
    CHECK_THROWS_AS(build_model(preset, 3, 8, 5, 1), ConfigError);
}

TEST_CASE("build_model is deterministic in the seed") {
    DstcModel a = build_model(synthetic_preset(4, 10, 8), 4, 10, 8, 42);
    DstcModel b = build_model(synthetic_preset(4, 10, 8), 4, 10, 8, 42);
    const auto& wa = std::get<LinearLayer>(a.t_xy.layers[0]).weight;
    const auto& wb = std::get<LinearLayer>(b.t_xy.layers[0]).weight;
    CHECK(wa.data == wb.data);

    DstcModel c = build_model(synthetic_preset(4, 10, 8), 4, 10, 8, 43);
    const auto& wc = std::get<LinearLayer>(c.t_xy.layers[0]).weight;
    CHECK(wa.data != wc.data);

    // Different subnetworks draw from different streams.
    const auto& ex0 = std::get<LinearLayer>(a.e_x.layers[0]).weight;
    const auto& ey0 = std::get<LinearLayer>(a.e_y.layers[0]).weight;
    CHECK(ex0.data != ey0.data);
}

TEST_CASE("forward_all passthrough construction reproduces the input") {
    // Identity encoders and translators: ex == x, txy == x, rtx == x.
    DstcModel model;
    model.embed_dim = 4;
    model.num_classes = 2;
    auto identity = [](std::size_t dim) {
        LinearLayer lin;
        lin.weight = DenseMatrix::identity(dim);
        lin.bias.assign(dim, 0.0);
        Mlp net;
        net.layers.emplace_back(std::move(lin));
        return net;
    };
    model.e_x = identity(4);
    model.e_y = identity(4);
    model.t_xy = identity(4);
    model.t_yx = identity(4);
    model.c_x = init_mlp({4, 2}, false, 1);
    model.c_y = init_mlp({4, 2}, false, 2);

    Rng rng(5);
    Batch batch = testsupport::random_batch(3, 4, 4, 2, rng);
    ActivationBundle bundle = forward_all(model, batch, Mode::Train);
    for (std::size_t i = 0; i < batch.x.size(); ++i) {
        CHECK(bundle.ex.out.data[i] == batch.x.data[i]);
        CHECK(bundle.txy.out.data[i] == batch.x.data[i]);
        CHECK(bundle.rtx.out.data[i] == batch.x.data[i]);
    }
}

TEST_CASE("bundle activations equal independent subnetwork forwards") {
    DstcModel model = testsupport::random_tiny_model(5, 4, 6, 3, 14);
    Rng rng(6);
    Batch batch = testsupport::random_batch(4, 5, 4, 3, rng);

    DstcModel work = model;
    ActivationBundle bundle = forward_all(work, batch, Mode::Train);

    DstcModel redo = model;
    ForwardResult ex = mlp_forward(redo.e_x, batch.x, Mode::Train);
    ForwardResult ey = mlp_forward(redo.e_y, batch.y, Mode::Train);
    ForwardResult lex = mlp_forward(redo.c_x, ex.output, Mode::Train);
    ForwardResult txy = mlp_forward(redo.t_xy, ex.output, Mode::Train);
    ForwardResult tyx = mlp_forward(redo.t_yx, ey.output, Mode::Train);
    ForwardResult rtx = mlp_forward(redo.t_yx, txy.output, Mode::Train);

    for (std::size_t i = 0; i < bundle.ex.out.size(); ++i) {
        CHECK(std::abs(bundle.ex.out.data[i] - ex.output.data[i]) < 1e-12);
        CHECK(std::abs(bundle.txy.out.data[i] - txy.output.data[i]) < 1e-12);
        CHECK(std::abs(bundle.tyx.out.data[i] - tyx.output.data[i]) < 1e-12);
        CHECK(std::abs(bundle.rtx.out.data[i] - rtx.output.data[i]) < 1e-12);
    }
    for (std::size_t i = 0; i < bundle.lex.out.size(); ++i) {
        CHECK(std::abs(bundle.lex.out.data[i] - lex.output.data[i]) < 1e-12);
    }

    SUBCASE("eval mode is bitwise identical to composed eval forwards") {
        ActivationBundle eb = forward_all(work, batch, Mode::Eval);
        const DenseMatrix eex = mlp_eval(work.e_x, batch.x);
        const DenseMatrix etxy = mlp_eval(work.t_xy, eex);
        const DenseMatrix ertx = mlp_eval(work.t_yx, etxy);
        CHECK(eb.ex.out.data == eex.data);
        CHECK(eb.txy.out.data == etxy.data);
        CHECK(eb.rtx.out.data == ertx.data);
    }
}

TEST_CASE("empty batches and wrong dims are rejected") {
    DstcModel model = testsupport::random_tiny_model(5, 4, 6, 3, 15);
    Batch empty;
    empty.num_classes = 3;
    empty.x = DenseMatrix(0, 5);
    empty.y = DenseMatrix(0, 4);
    CHECK_THROWS_AS(forward_all(model, empty, Mode::Train), DimensionError);

    Rng rng(7);
    Batch wrong = testsupport::random_batch(3, 6, 4, 3, rng);
    CHECK_THROWS_AS(forward_all(model, wrong, Mode::Train), DimensionError);
}

TEST_CASE("translator edits never change the unimodal paths") {
    DstcModel model = testsupport::random_tiny_model(5, 4, 6, 3, 16);
    Rng rng(8);
    Batch batch = testsupport::random_batch(4, 5, 4, 3, rng);

    DstcModel before = model;
    ActivationBundle a = forward_all(before, batch, Mode::Train);

    DstcModel after = model;
    for (Mlp* t : {&after.t_xy, &after.t_yx}) {
        for (Layer& layer : t->layers) {
            if (auto* lin = std::get_if<LinearLayer>(&layer)) {
                for (double& w : lin->weight.data) {
                    w += 0.37;
                }
            }
        }
    }
    ActivationBundle b = forward_all(after, batch, Mode::Train);

    CHECK(a.ex.out.data == b.ex.out.data);   // bitwise
    CHECK(a.ey.out.data == b.ey.out.data);
    CHECK(a.lex.out.data == b.lex.out.data);
    CHECK(a.ley.out.data == b.ley.out.data);
    CHECK(a.txy.out.data != b.txy.out.data);
}

TEST_CASE("model file round trip preserves eval outputs") {
    DstcModel model = testsupport::random_tiny_model(5, 4, 6, 3, 17);
    // Move the running stats off init.
    Rng rng(9);
    Batch warm = testsupport::random_batch(8, 5, 4, 3, rng);
    forward_all(model, warm, Mode::Train);

    const std::string path = temp_model_path();
    save_model(path, model);
    DstcModel back = load_model(path);

    CHECK(back.num_classes == model.num_classes);
    CHECK(back.embed_dim == model.embed_dim);

    // Parameters round-trip at 32-bit precision; running stats exactly.
    const auto& bn_orig = std::get<BatchNormLayer>(model.e_x.layers[1]);
    const auto& bn_back = std::get<BatchNormLayer>(back.e_x.layers[1]);
    CHECK(bn_orig.running_mean == bn_back.running_mean);
    CHECK(bn_orig.running_var == bn_back.running_var);

    const auto& lin_orig = std::get<LinearLayer>(model.e_x.layers[0]);
    const auto& lin_back = std::get<LinearLayer>(back.e_x.layers[0]);
    for (std::size_t i = 0; i < lin_orig.weight.size(); ++i) {
        CHECK(lin_back.weight.data[i] ==
              static_cast<double>(static_cast<float>(lin_orig.weight.data[i])));
    }
    std::filesystem::remove(path);
}

TEST_CASE("model loader rejects corruption and mismatched data") {
    DstcModel model = testsupport::random_tiny_model(5, 4, 6, 3, 18);
    const std::string path = temp_model_path();
    save_model(path, model);

    SUBCASE("corrupted header") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("NOTAMODL", 8);
        f.close();
        try {
            load_model(path);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.kind == IoError::Kind::BadMagic);
        }
    }
    SUBCASE("truncated payload") {
        std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
        try {
            load_model(path);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.kind == IoError::Kind::Truncated);
        }
    }
    SUBCASE("class count mismatch against data") {
        DstcModel back = load_model(path);
        CHECK_THROWS_AS(check_model_data_compat(back, 7, 5, 4), DimensionError);
        CHECK_THROWS_AS(check_model_data_compat(back, 3, 9, 4), DimensionError);
        CHECK_NOTHROW(check_model_data_compat(back, 3, 5, 4));
    }
    std::filesystem::remove(path);
}
