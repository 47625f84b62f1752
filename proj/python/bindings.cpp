#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dstc/dataset.hpp"
#include "dstc/eval.hpp"
#include "dstc/losses.hpp"
#include "dstc/model.hpp"
#include "dstc/trainer.hpp"

namespace py = pybind11;
using namespace dstc;

namespace {

DenseMatrix matrix_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) {
        throw DimensionError("expected a 2-D array");
    }
    DenseMatrix m(static_cast<std::size_t>(arr.shape(0)), static_cast<std::size_t>(arr.shape(1)));
    std::copy(arr.data(), arr.data() + m.size(), m.data.begin());
    return m;
}

py::array_t<double> matrix_to_numpy(const DenseMatrix& m) {
    py::array_t<double> arr({m.rows, m.cols});
    std::copy(m.data.begin(), m.data.end(), arr.mutable_data());
    return arr;
}

Batch batch_from_arrays(const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
                        const py::array_t<double, py::array::c_style | py::array::forcecast>& y,
                        const std::vector<int>& labels, int num_classes) {
    Batch batch;
    batch.x = matrix_from_numpy(x);
    batch.y = matrix_from_numpy(y);
    batch.labels = labels;
    batch.num_classes = num_classes;
    return batch;
}

Metric metric_from_string(const std::string& name) {
    if (name == "euclidean" || name == "euc") {
        return Metric::Euclidean;
    }
    if (name == "cosine" || name == "cos") {
        return Metric::Cosine;
    }
    throw ConfigError("unknown metric: " + name);
}

Split split_from_string(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw ConfigError("unknown split: " + name);
}

Direction direction_from_string(const std::string& name) {
    if (name == "x2y") return Direction::XtoY;
    if (name == "y2x") return Direction::YtoX;
    if (name == "both") return Direction::Both;
    throw ConfigError("unknown direction: " + name);
}

py::dict breakdown_to_dict(const LossBreakdown& b) {
    py::dict d;
    d["ce"] = b.ce;
    d["pc"] = b.pc;
    d["dstc"] = b.dstc;
    d["cpc"] = b.cpc;
    d["cdstc"] = b.cdstc;
    d["total"] = b.total;
    return d;
}

} // namespace

PYBIND11_MODULE(_dstc, m) {
    m.doc() = "Cross-modal retrieval: per-modality encoders/classifiers with translator networks";

    py::register_exception<Error>(m, "DstcError", PyExc_RuntimeError);

    // ----- data ---------------------------------------------------------
    py::class_<SyntheticSpec>(m, "SyntheticSpec")
        .def(py::init([](int num_classes, int samples_per_class, std::size_t dim_x, std::size_t dim_y,
                         double cluster_spread, double pair_noise, std::uint64_t seed) {
                 return SyntheticSpec{num_classes, samples_per_class, dim_x,
                                      dim_y,       cluster_spread,    pair_noise, seed};
             }),
             py::arg("num_classes") = 10, py::arg("samples_per_class") = 100, py::arg("dim_x") = 64,
             py::arg("dim_y") = 48, py::arg("cluster_spread") = 0.15, py::arg("pair_noise") = 0.0,
             py::arg("seed") = 0)
        .def_readwrite("num_classes", &SyntheticSpec::num_classes)
        .def_readwrite("samples_per_class", &SyntheticSpec::samples_per_class)
        .def_readwrite("cluster_spread", &SyntheticSpec::cluster_spread)
        .def_readwrite("pair_noise", &SyntheticSpec::pair_noise)
        .def_readwrite("seed", &SyntheticSpec::seed);

    py::class_<PairedDataset>(m, "PairedDataset")
        .def_property_readonly("x", [](const PairedDataset& d) { return matrix_to_numpy(d.x); })
        .def_property_readonly("y", [](const PairedDataset& d) { return matrix_to_numpy(d.y); })
        .def_readonly("labels", &PairedDataset::labels)
        .def_readonly("num_classes", &PairedDataset::num_classes)
        .def_property_readonly("split",
                               [](const PairedDataset& d) {
                                   return std::vector<int>(d.split.begin(), d.split.end());
                               })
        .def("__len__", &PairedDataset::size);

    m.def("generate_synthetic", &generate_synthetic, py::arg("spec"));
    m.def("save_dataset", &save_dataset, py::arg("directory"), py::arg("dataset"),
          "Writes feature/label/split files plus manifest; returns the manifest path");
    m.def("load_dataset", &load_dataset, py::arg("manifest_path"));
    m.def(
        "save_features",
        [](const std::string& path,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& values) {
            save_features(path, matrix_from_numpy(values));
        },
        py::arg("path"), py::arg("values"));
    m.def(
        "load_features", [](const std::string& path) { return matrix_to_numpy(load_features(path)); },
        py::arg("path"));
    m.def("sampler_weights", &sampler_weights, py::arg("labels"), py::arg("num_classes"));

    // ----- model --------------------------------------------------------
    py::class_<DstcModel>(m, "DstcModel")
        .def_readonly("num_classes", &DstcModel::num_classes)
        .def_readonly("embed_dim", &DstcModel::embed_dim);

    m.def(
        "build_model",
        [](const std::string& preset, int num_classes, std::size_t d1, std::size_t d2,
           std::uint64_t seed, std::size_t embed_dim) {
            const ArchPreset arch = preset == "synthetic"
                                        ? synthetic_preset(num_classes, d1, d2, embed_dim)
                                        : preset_by_name(preset, num_classes, d1, d2);
            return build_model(arch, num_classes, d1, d2, seed);
        },
        py::arg("preset"), py::arg("num_classes"), py::arg("dim_x"), py::arg("dim_y"),
        py::arg("seed") = 0, py::arg("embed_dim") = 64);
    m.def("save_model", &save_model, py::arg("path"), py::arg("model"));
    m.def("load_model", &load_model, py::arg("path"));

    m.def(
        "encode",
        [](const DstcModel& model, const py::array_t<double, py::array::c_style | py::array::forcecast>&
                                       features, int modality) {
            const DenseMatrix input = matrix_from_numpy(features);
            return matrix_to_numpy(mlp_eval(modality == 0 ? model.e_x : model.e_y, input));
        },
        py::arg("model"), py::arg("features"), py::arg("modality"),
        "Eval-mode embedding of raw features; modality 0 = x, 1 = y");

    // ----- losses -------------------------------------------------------
    m.def(
        "combined_loss",
        [](DstcModel& model, const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& y,
           const std::vector<int>& labels, double alpha, double beta, double gamma, double delta,
           const std::string& metric) {
            const Batch batch = batch_from_arrays(x, y, labels, model.num_classes);
            DstcModel work = model;
            const CombinedResult res = combined_loss(
                work, batch, {alpha, beta, gamma, delta, metric_from_string(metric)});
            return breakdown_to_dict(res.breakdown);
        },
        py::arg("model"), py::arg("x"), py::arg("y"), py::arg("labels"), py::arg("alpha") = 1.0,
        py::arg("beta") = 1.0, py::arg("gamma") = 1.0, py::arg("delta") = 1.0,
        py::arg("metric") = "euclidean",
        "Train-mode loss components of a batch; the model itself is left untouched");

    // ----- training -----------------------------------------------------
    m.def(
        "train",
        [](DstcModel& model, const PairedDataset& data, int stage1_epochs, int stage2_epochs,
           double stage1_lr, double stage2_lr, std::size_t batch_size, double alpha, double beta,
           double gamma, double delta, const std::string& metric, bool include_ce,
           std::uint64_t seed, bool early_stop, int patience, bool run_stage1) {
            TrainConfig cfg;
            cfg.stage1 = {stage1_epochs, stage1_lr, batch_size};
            cfg.stage2 = {stage2_epochs, stage2_lr, batch_size};
            cfg.stage2_weights = {alpha, beta, gamma, delta, metric_from_string(metric)};
            cfg.stage2_include_ce = include_ce;
            cfg.seed = seed;
            cfg.early_stop = early_stop;
            cfg.patience = patience;
            cfg.run_stage1 = run_stage1;
            const TrainHistory history = train(model, data, cfg);

            py::list steps;
            for (const StepRecord& sr : history.steps) {
                py::dict d = breakdown_to_dict(sr.loss);
                d["stage"] = sr.stage;
                d["epoch"] = sr.epoch;
                d["step"] = sr.step;
                steps.append(d);
            }
            py::list epochs;
            for (const EpochRecord& er : history.epochs) {
                py::dict d;
                d["stage"] = er.stage;
                d["epoch"] = er.epoch;
                d["val_map_x2y_cos"] = er.val_map_x2y_cos;
                d["val_map_y2x_cos"] = er.val_map_y2x_cos;
                d["val_map_x2y_euc"] = er.val_map_x2y_euc;
                d["val_map_y2x_euc"] = er.val_map_y2x_euc;
                epochs.append(d);
            }
            py::dict out;
            out["steps"] = steps;
            out["epochs"] = epochs;
            return out;
        },
        py::arg("model"), py::arg("data"), py::arg("stage1_epochs") = 30, py::arg("stage2_epochs") = 30,
        py::arg("stage1_lr") = 1e-4, py::arg("stage2_lr") = 1e-4, py::arg("batch_size") = 128,
        py::arg("alpha") = 1.0, py::arg("beta") = 1.0, py::arg("gamma") = 1.0, py::arg("delta") = 1.0,
        py::arg("metric") = "euclidean", py::arg("include_ce") = true, py::arg("seed") = 0,
        py::arg("early_stop") = true, py::arg("patience") = 10, py::arg("run_stage1") = true,
        "Two-stage training in place; returns the step/epoch history");

    // ----- evaluation ---------------------------------------------------
    py::class_<RetrievalReport>(m, "RetrievalReport")
        .def_readonly("map", &RetrievalReport::map)
        .def_readonly("class_avg_map", &RetrievalReport::class_avg_map)
        .def_readonly("per_class_map", &RetrievalReport::per_class_map)
        .def_readonly("num_skipped", &RetrievalReport::num_skipped)
        .def_property_readonly("per_query_ap",
                               [](const RetrievalReport& r) {
                                   std::vector<double> aps;
                                   for (const QueryResult& q : r.per_query) {
                                       if (!q.skipped) {
                                           aps.push_back(q.ap);
                                       }
                                   }
                                   return aps;
                               })
        .def("__repr__", [](const RetrievalReport& r) {
            return "<RetrievalReport map=" + std::to_string(r.map) +
                   " class_avg=" + std::to_string(r.class_avg_map) + ">";
        });

    m.def(
        "evaluate",
        [](const DstcModel& model, const PairedDataset& data, const std::string& split,
           const std::string& direction, const std::string& metric) {
            return evaluate(model, data, split_from_string(split), direction_from_string(direction),
                            metric_from_string(metric));
        },
        py::arg("model"), py::arg("data"), py::arg("split") = "test", py::arg("direction") = "both",
        py::arg("metric") = "cosine");
    m.def(
        "classification_accuracy",
        [](const DstcModel& model, const PairedDataset& data, const std::string& split, int modality) {
            return classification_accuracy(model, data, split_from_string(split), modality);
        },
        py::arg("model"), py::arg("data"), py::arg("split") = "val", py::arg("modality") = 0);
    m.def(
        "translated_accuracy",
        [](const DstcModel& model, const PairedDataset& data, const std::string& split,
           const std::string& direction) {
            return translated_accuracy(model, data, split_from_string(split),
                                       direction_from_string(direction));
        },
        py::arg("model"), py::arg("data"), py::arg("split") = "val", py::arg("direction") = "both",
        "Translate-then-classify accuracy under the destination classifier");

    // ----- ranking primitives -------------------------------------------
    m.def(
        "score",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& query,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& gallery,
           const std::string& metric) {
            if (query.ndim() != 1) {
                throw DimensionError("query must be 1-D");
            }
            const DenseMatrix g = matrix_from_numpy(gallery);
            const std::span<const double> q(query.data(), static_cast<std::size_t>(query.shape(0)));
            return score(q, g, metric_from_string(metric));
        },
        py::arg("query"), py::arg("gallery"), py::arg("metric") = "cosine");
    m.def(
        "rank",
        [](const std::vector<double>& scores) { return rank(scores); }, py::arg("scores"));
    m.def(
        "average_precision",
        [](const std::vector<std::size_t>& ranking, const std::vector<bool>& relevant) {
            std::vector<char> flags(relevant.size());
            for (std::size_t i = 0; i < relevant.size(); ++i) {
                flags[i] = relevant[i] ? 1 : 0;
            }
            return average_precision(ranking, flags);
        },
        py::arg("ranking"), py::arg("relevant"));

    // ----- tensor kernels -------------------------------------------------
    m.def(
        "matmul",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
            return matrix_to_numpy(matmul(matrix_from_numpy(a), matrix_from_numpy(b)));
        },
        py::arg("a"), py::arg("b"));
    m.def(
        "l2_normalize_rows",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a, double eps) {
            return matrix_to_numpy(l2_normalize_rows(matrix_from_numpy(a), eps));
        },
        py::arg("values"), py::arg("eps") = 1e-12);
}
