#include "dstc/model.hpp"

#include <cstring>
#include <fstream>

namespace dstc {

namespace {

constexpr char kModelMagic[8] = {'D', 'S', 'T', 'C', 'M', 'O', 'D', 'L'};
constexpr std::uint32_t kModelVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    const char bytes[4] = {
        static_cast<char>(v & 0xff),
        static_cast<char>((v >> 8) & 0xff),
        static_cast<char>((v >> 16) & 0xff),
        static_cast<char>((v >> 24) & 0xff),
    };
    os.write(bytes, 4);
}

std::uint32_t read_u32(std::istream& is, const char* what) {
    unsigned char bytes[4];
    if (!is.read(reinterpret_cast<char*>(bytes), 4)) {
        throw IoError(IoError::Kind::Truncated, std::string("truncated model file while reading ") + what);
    }
    return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

void write_f32(std::ostream& os, double v) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32(os, bits);
}

double read_f32(std::istream& is, const char* what) {
    const std::uint32_t bits = read_u32(is, what);
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<double>(f);
}

void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u32(os, static_cast<std::uint32_t>(bits & 0xffffffffULL));
    write_u32(os, static_cast<std::uint32_t>(bits >> 32));
}

double read_f64(std::istream& is, const char* what) {
    const std::uint64_t lo = read_u32(is, what);
    const std::uint64_t hi = read_u32(is, what);
    const std::uint64_t bits = lo | (hi << 32);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void write_mlp(std::ostream& os, const Mlp& net) {
    write_u32(os, static_cast<std::uint32_t>(net.layers.size()));
    for (const Layer& layer : net.layers) {
        if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
            write_u32(os, 0);
            write_u32(os, static_cast<std::uint32_t>(lin->in_dim()));
            write_u32(os, static_cast<std::uint32_t>(lin->out_dim()));
            for (double w : lin->weight.data) {
                write_f32(os, w);
            }
            for (double b : lin->bias) {
                write_f32(os, b);
            }
        } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            write_u32(os, 1);
            write_u32(os, static_cast<std::uint32_t>(bn->dim()));
            write_f64(os, bn->momentum);
            write_f64(os, bn->eps);
            for (double g : bn->gamma) write_f32(os, g);
            for (double b : bn->beta) write_f32(os, b);
            for (double m : bn->running_mean) write_f64(os, m);
            for (double v : bn->running_var) write_f64(os, v);
        } else {
            write_u32(os, 2);
        }
    }
}

Mlp read_mlp(std::istream& is) {
    const std::uint32_t count = read_u32(is, "layer count");
    Mlp net;
    for (std::uint32_t li = 0; li < count; ++li) {
        const std::uint32_t kind = read_u32(is, "layer kind");
        if (kind == 0) {
            const std::uint32_t in = read_u32(is, "linear in dim");
            const std::uint32_t out = read_u32(is, "linear out dim");
            LinearLayer lin;
            lin.weight = DenseMatrix(in, out);
            for (double& w : lin.weight.data) {
                w = read_f32(is, "weight payload");
            }
            lin.bias.resize(out);
            for (double& b : lin.bias) {
                b = read_f32(is, "bias payload");
            }
            net.layers.emplace_back(std::move(lin));
        } else if (kind == 1) {
            const std::uint32_t dim = read_u32(is, "batchnorm dim");
            BatchNormLayer bn;
            bn.momentum = read_f64(is, "batchnorm momentum");
            bn.eps = read_f64(is, "batchnorm eps");
            bn.gamma.resize(dim);
            bn.beta.resize(dim);
            bn.running_mean.resize(dim);
            bn.running_var.resize(dim);
            for (double& g : bn.gamma) g = read_f32(is, "gamma payload");
            for (double& b : bn.beta) b = read_f32(is, "beta payload");
            for (double& m : bn.running_mean) m = read_f64(is, "running mean payload");
            for (double& v : bn.running_var) v = read_f64(is, "running var payload");
            net.layers.emplace_back(std::move(bn));
        } else if (kind == 2) {
            net.layers.emplace_back(ReluLayer{});
        } else {
            throw IoError(IoError::Kind::HeaderMismatch, "unknown layer kind " + std::to_string(kind));
        }
    }
    return net;
}

void check_subnet_spec(const SubnetSpec& spec, const char* name) {
    if (spec.dims.size() < 2) {
        throw ConfigError(std::string("preset: subnet ") + name + " needs at least [in, out] dims");
    }
}

SubnetPass run_subnet(Mlp& net, const DenseMatrix& input, Mode mode) {
    SubnetPass pass;
    pass.present = true;
    if (mode == Mode::Train) {
        ForwardResult fr = mlp_forward(net, input, Mode::Train);
        pass.out = std::move(fr.output);
        pass.cache = std::move(fr.cache);
    } else {
        pass.out = mlp_eval(net, input);
        pass.cache.mode = Mode::Eval;
    }
    return pass;
}

} // namespace

ArchPreset audioset_preset(int num_classes, std::size_t d1, std::size_t d2) {
    ArchPreset p;
    p.name = "audioset";
    p.enc_x = {{d1, 256, 256}, {true}};
    p.enc_y = {{d2, 512, 256}, {true}};
    p.cls_x = {{256, static_cast<std::size_t>(num_classes)}, {}};
    p.cls_y = {{256, static_cast<std::size_t>(num_classes)}, {}};
    p.tr_xy = {{256, 128, 64, 128, 256}, {true, true, true}};
    p.tr_yx = {{256, 128, 64, 128, 256}, {true, true, true}};
    return p;
}

ArchPreset wikipedia_preset(int num_classes, std::size_t d1, std::size_t d2) {
    ArchPreset p;
    p.name = "wikipedia";
    p.enc_x = {{d1, 2048, 1024}, {true}};
    p.enc_y = {{d2, 2048, 1024}, {true}};
    p.cls_x = {{1024, static_cast<std::size_t>(num_classes)}, {}};
    p.cls_y = {{1024, static_cast<std::size_t>(num_classes)}, {}};
    p.tr_xy = {{1024, 512, 1024}, {true}};
    p.tr_yx = {{1024, 512, 1024}, {true}};
    return p;
}

ArchPreset pascal_preset(int num_classes, std::size_t d1, std::size_t d2) {
    ArchPreset p = wikipedia_preset(num_classes, d1, d2);
    p.name = "pascal";
    return p;
}

ArchPreset synthetic_preset(int num_classes, std::size_t d1, std::size_t d2, std::size_t embed_dim) {
    ArchPreset p;
    p.name = "synthetic";
    p.enc_x = {{d1, 128, embed_dim}, {true}};
    p.enc_y = {{d2, 128, embed_dim}, {true}};
    p.cls_x = {{embed_dim, static_cast<std::size_t>(num_classes)}, {}};
    p.cls_y = {{embed_dim, static_cast<std::size_t>(num_classes)}, {}};
    p.tr_xy = {{embed_dim, embed_dim / 2, embed_dim}, {true}};
    p.tr_yx = {{embed_dim, embed_dim / 2, embed_dim}, {true}};
    return p;
}

ArchPreset preset_by_name(const std::string& name, int num_classes, std::size_t d1, std::size_t d2) {
    if (name == "audioset") {
        return audioset_preset(num_classes, d1, d2);
    }
    if (name == "wikipedia") {
        return wikipedia_preset(num_classes, d1, d2);
    }
    if (name == "pascal") {
        return pascal_preset(num_classes, d1, d2);
    }
    if (name == "synthetic") {
        return synthetic_preset(num_classes, d1, d2);
    }
    throw ConfigError("unknown preset: " + name + " (expected audioset|wikipedia|pascal|synthetic)");
}

Mlp& DstcModel::subnet(Subnet which) {
    switch (which) {
    case Subnet::EncX: return e_x;
    case Subnet::EncY: return e_y;
    case Subnet::ClsX: return c_x;
    case Subnet::ClsY: return c_y;
    case Subnet::TrXY: return t_xy;
    case Subnet::TrYX: return t_yx;
    }
    throw ConfigError("invalid subnet id");
}

const Mlp& DstcModel::subnet(Subnet which) const {
    return const_cast<DstcModel*>(this)->subnet(which);
}

DstcModel build_model(const ArchPreset& preset, int num_classes, std::size_t d1, std::size_t d2,
                      std::uint64_t seed) {
    check_subnet_spec(preset.enc_x, "enc_x");
    check_subnet_spec(preset.enc_y, "enc_y");
    check_subnet_spec(preset.cls_x, "cls_x");
    check_subnet_spec(preset.cls_y, "cls_y");
    check_subnet_spec(preset.tr_xy, "tr_xy");
    check_subnet_spec(preset.tr_yx, "tr_yx");

    const std::size_t embed = preset.enc_x.dims.back();
    if (preset.enc_x.dims.front() != d1 || preset.enc_y.dims.front() != d2) {
        throw ConfigError("build_model: encoder input dims do not match feature dims");
    }
    if (preset.enc_y.dims.back() != embed) {
        throw ConfigError("build_model: the x and y representation spaces must share one dimensionality");
    }
    auto expect = [](bool ok, const char* msg) {
        if (!ok) {
            throw ConfigError(std::string("build_model: ") + msg);
        }
    };
    const auto c = static_cast<std::size_t>(num_classes);
    expect(preset.cls_x.dims.front() == embed, "classifier x input must equal the embedding dim");
    expect(preset.cls_y.dims.front() == embed, "classifier y input must equal the embedding dim");
    expect(preset.cls_x.dims.back() == c, "classifier x output must equal the class count");
    expect(preset.cls_y.dims.back() == c, "classifier y output must equal the class count");
    expect(preset.tr_xy.dims.front() == embed && preset.tr_xy.dims.back() == embed,
           "translator xy must map the embedding space onto itself");
    expect(preset.tr_yx.dims.front() == embed && preset.tr_yx.dims.back() == embed,
           "translator yx must map the embedding space onto itself");

    Rng rng(seed);
    DstcModel model;
    model.embed_dim = embed;
    model.num_classes = num_classes;
    model.e_x = init_mlp(preset.enc_x.dims, preset.enc_x.batchnorm, rng.fork(0).next_u64());
    model.e_y = init_mlp(preset.enc_y.dims, preset.enc_y.batchnorm, rng.fork(1).next_u64());
    model.c_x = init_mlp(preset.cls_x.dims, preset.cls_x.batchnorm, rng.fork(2).next_u64());
    model.c_y = init_mlp(preset.cls_y.dims, preset.cls_y.batchnorm, rng.fork(3).next_u64());
    model.t_xy = init_mlp(preset.tr_xy.dims, preset.tr_xy.batchnorm, rng.fork(4).next_u64());
    model.t_yx = init_mlp(preset.tr_yx.dims, preset.tr_yx.batchnorm, rng.fork(5).next_u64());
    return model;
}

ActivationBundle forward_paths(DstcModel& model, const Batch& batch, Mode mode, const PathMask& mask) {
    if (batch.size() == 0) {
        throw DimensionError("forward: empty batch");
    }
    if (batch.x.cols != model.e_x.in_dim() || batch.y.cols != model.e_y.in_dim()) {
        throw DimensionError("forward: batch feature dims do not match the encoders");
    }
    if (batch.num_classes != model.num_classes) {
        throw DimensionError("forward: batch class count does not match the model");
    }

    ActivationBundle bundle;
    bundle.mode = mode;
    bundle.batch = batch.size();

    bundle.ex = run_subnet(model.e_x, batch.x, mode);
    bundle.ey = run_subnet(model.e_y, batch.y, mode);
    if (mask.ce_logits) {
        bundle.lex = run_subnet(model.c_x, bundle.ex.out, mode);
        bundle.ley = run_subnet(model.c_y, bundle.ey.out, mode);
    }
    if (mask.translations) {
        bundle.txy = run_subnet(model.t_xy, bundle.ex.out, mode);
        bundle.tyx = run_subnet(model.t_yx, bundle.ey.out, mode);
        if (mask.translated_logits) {
            bundle.ltxy = run_subnet(model.c_y, bundle.txy.out, mode);
            bundle.ltyx = run_subnet(model.c_x, bundle.tyx.out, mode);
        }
        if (mask.roundtrips) {
            bundle.rtx = run_subnet(model.t_yx, bundle.txy.out, mode);
            bundle.rty = run_subnet(model.t_xy, bundle.tyx.out, mode);
            if (mask.roundtrip_logits) {
                bundle.lrtx = run_subnet(model.c_x, bundle.rtx.out, mode);
                bundle.lrty = run_subnet(model.c_y, bundle.rty.out, mode);
            }
        }
    }
    return bundle;
}

ActivationBundle forward_all(DstcModel& model, const Batch& batch, Mode mode) {
    return forward_paths(model, batch, mode, PathMask::all());
}

void save_model(const std::string& path, const DstcModel& model) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError(IoError::Kind::OpenFailed, "cannot open for writing: " + path);
    }
    os.write(kModelMagic, 8);
    write_u32(os, kModelVersion);
    write_u32(os, static_cast<std::uint32_t>(model.num_classes));
    write_u32(os, static_cast<std::uint32_t>(model.e_x.in_dim()));
    write_u32(os, static_cast<std::uint32_t>(model.e_y.in_dim()));
    write_u32(os, static_cast<std::uint32_t>(model.embed_dim));
    write_mlp(os, model.e_x);
    write_mlp(os, model.e_y);
    write_mlp(os, model.c_x);
    write_mlp(os, model.c_y);
    write_mlp(os, model.t_xy);
    write_mlp(os, model.t_yx);
    if (!os) {
        throw IoError(IoError::Kind::WriteFailed, "write failed: " + path);
    }
}

DstcModel load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError(IoError::Kind::OpenFailed, "cannot open for reading: " + path);
    }
    char magic[8];
    if (!is.read(magic, 8)) {
        throw IoError(IoError::Kind::Truncated, "truncated model file: " + path);
    }
    if (std::memcmp(magic, kModelMagic, 8) != 0) {
        throw IoError(IoError::Kind::BadMagic, "bad magic in " + path);
    }
    const std::uint32_t version = read_u32(is, "version");
    if (version != kModelVersion) {
        throw IoError(IoError::Kind::BadVersion, "unsupported model version " + std::to_string(version));
    }
    DstcModel model;
    model.num_classes = static_cast<int>(read_u32(is, "class count"));
    const std::uint32_t d1 = read_u32(is, "d1");
    const std::uint32_t d2 = read_u32(is, "d2");
    model.embed_dim = read_u32(is, "embed dim");
    model.e_x = read_mlp(is);
    model.e_y = read_mlp(is);
    model.c_x = read_mlp(is);
    model.c_y = read_mlp(is);
    model.t_xy = read_mlp(is);
    model.t_yx = read_mlp(is);

    if (model.e_x.in_dim() != d1 || model.e_y.in_dim() != d2 ||
        model.e_x.out_dim() != model.embed_dim || model.e_y.out_dim() != model.embed_dim ||
        model.c_x.out_dim() != static_cast<std::size_t>(model.num_classes) ||
        model.c_y.out_dim() != static_cast<std::size_t>(model.num_classes)) {
        throw IoError(IoError::Kind::HeaderMismatch, "model header disagrees with layer shapes: " + path);
    }
    return model;
}

void check_model_data_compat(const DstcModel& model, int num_classes, std::size_t d1, std::size_t d2) {
    if (model.num_classes != num_classes) {
        throw DimensionError("model expects " + std::to_string(model.num_classes) + " classes, data has " +
                             std::to_string(num_classes));
    }
    if (model.e_x.in_dim() != d1 || model.e_y.in_dim() != d2) {
        throw DimensionError("model expects feature dims (" + std::to_string(model.e_x.in_dim()) + "," +
                             std::to_string(model.e_y.in_dim()) + "), data has (" + std::to_string(d1) +
                             "," + std::to_string(d2) + ")");
    }
}

} // namespace dstc
