#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dstc/dataset.hpp"
#include "dstc/nn.hpp"

namespace dstc {

// Identifies one of the six subnetworks.
enum class Subnet : int { EncX = 0, EncY = 1, ClsX = 2, ClsY = 3, TrXY = 4, TrYX = 5 };
constexpr std::array<Subnet, 6> kAllSubnets = {Subnet::EncX, Subnet::ClsX, Subnet::EncY,
                                               Subnet::ClsY, Subnet::TrXY, Subnet::TrYX};

struct SubnetSpec {
    std::vector<std::size_t> dims;
    std::vector<bool> batchnorm; // one flag per hidden layer
};

// Layer sizes and batchnorm flags for all six subnetworks.
struct ArchPreset {
    std::string name = "custom";
    SubnetSpec enc_x, enc_y, cls_x, cls_y, tr_xy, tr_yx;
};

// Audio-video sizing: two-layer encoders into a 256-d space (hidden 256 for
// x, 512 for y), single-layer classifiers, 256-128-64-128-256 hourglass
// translators, batchnorm+relu after every hidden layer.
ArchPreset audioset_preset(int num_classes, std::size_t d1, std::size_t d2);

// Image-text sizing: encoders with one 2048 hidden layer into a 1024-d
// space, single-layer classifiers, 1024-512-1024 hourglass translators.
ArchPreset wikipedia_preset(int num_classes, std::size_t d1, std::size_t d2);
ArchPreset pascal_preset(int num_classes, std::size_t d1, std::size_t d2);

// Small sizing for desk-scale synthetic runs.
ArchPreset synthetic_preset(int num_classes, std::size_t d1, std::size_t d2, std::size_t embed_dim = 64);

ArchPreset preset_by_name(const std::string& name, int num_classes, std::size_t d1, std::size_t d2);

// Two encoders, two classifiers, two translators. The x and y
// representation spaces share one dimensionality so the translators are
// square hourglass maps.
struct DstcModel {
    Mlp e_x, e_y;   // encoders
    Mlp c_x, c_y;   // classifiers
    Mlp t_xy, t_yx; // translators
    std::size_t embed_dim = 0;
    int num_classes = 0;

    Mlp& subnet(Subnet which);
    const Mlp& subnet(Subnet which) const;
};

DstcModel build_model(const ArchPreset& preset, int num_classes, std::size_t d1, std::size_t d2,
                      std::uint64_t seed);

// One forward pass plus its cache; `present` marks whether the path was
// computed at all.
struct SubnetPass {
    DenseMatrix out;
    ForwardCache cache;
    bool present = false;
};

// Which parts of the graph to run. CE-only training must not touch the
// translators at all (their running stats would move otherwise).
struct PathMask {
    bool ce_logits = true;         // lex, ley
    bool translations = true;      // txy, tyx
    bool translated_logits = true; // ltxy, ltyx
    bool roundtrips = true;        // rtx, rty
    bool roundtrip_logits = true;  // lrtx, lrty

    static PathMask all() { return {}; }
    static PathMask ce_only() { return {true, false, false, false, false}; }
};

// Every activation the losses can need, each computed exactly once.
struct ActivationBundle {
    Mode mode = Mode::Train;
    std::size_t batch = 0;
    SubnetPass ex, ey;     // E_x(x), E_y(y)
    SubnetPass txy, tyx;   // T_xy(ex), T_yx(ey)
    SubnetPass rtx, rty;   // T_yx(txy), T_xy(tyx)
    SubnetPass lex, ley;   // C_x(ex), C_y(ey)
    SubnetPass ltxy, ltyx; // C_y(txy), C_x(tyx)
    SubnetPass lrtx, lrty; // C_x(rtx), C_y(rty)
};

ActivationBundle forward_paths(DstcModel& model, const Batch& batch, Mode mode, const PathMask& mask);
ActivationBundle forward_all(DstcModel& model, const Batch& batch, Mode mode);

// Model file: magic "DSTCMODL", u32 version=1, architecture descriptor,
// then parameters as little-endian binary32 and running statistics as
// binary64 (running stats survive the round trip exactly).
void save_model(const std::string& path, const DstcModel& model);
DstcModel load_model(const std::string& path);

// Throws DimensionError when the model cannot consume the given data.
void check_model_data_compat(const DstcModel& model, int num_classes, std::size_t d1, std::size_t d2);

} // namespace dstc
