// dstc: cross-modal retrieval pipeline driver.
//
// Subcommands: synth (synthetic dataset files), train (two-stage training),
// eval (retrieval reports), ablate (loss-combination table), gradcheck
// (finite-difference verification of every loss gradient).

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "dstc/dataset.hpp"
#include "dstc/eval.hpp"
#include "dstc/losses.hpp"
#include "dstc/model.hpp"
#include "dstc/optim.hpp"
#include "dstc/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

dstc::Metric parse_metric(const std::string& name) {
    if (name == "euc" || name == "euclidean") {
        return dstc::Metric::Euclidean;
    }
    if (name == "cos" || name == "cosine") {
        return dstc::Metric::Cosine;
    }
    throw dstc::ConfigError("unknown metric: " + name + " (expected euc|cos)");
}

dstc::Split parse_split(const std::string& name) {
    if (name == "train") return dstc::Split::Train;
    if (name == "val") return dstc::Split::Val;
    if (name == "test") return dstc::Split::Test;
    throw dstc::ConfigError("unknown split: " + name + " (expected train|val|test)");
}

dstc::Direction parse_direction(const std::string& name) {
    if (name == "x2y") return dstc::Direction::XtoY;
    if (name == "y2x") return dstc::Direction::YtoX;
    if (name == "both") return dstc::Direction::Both;
    throw dstc::ConfigError("unknown direction: " + name + " (expected x2y|y2x|both)");
}

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : csv) {
        if (c == ',') {
            if (!cur.empty()) {
                out.push_back(cur);
            }
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) {
        out.push_back(cur);
    }
    return out;
}

// Everything a training run needs, assembled from JSON config plus flag
// overrides. The resolved state is echoed into the output directory.
struct RunConfig {
    std::string preset = "synthetic";
    std::size_t embed_dim = 64;
    dstc::TrainConfig train;
    bool weights_explicit = false; // config or flags chose alpha..delta
    json custom_preset;            // optional explicit subnet dims

    json to_json() const {
        json j;
        j["preset"] = preset;
        j["embed_dim"] = embed_dim;
        j["seed"] = train.seed;
        j["stage1"] = {{"epochs", train.stage1.epochs},
                       {"lr", train.stage1.lr},
                       {"batch_size", train.stage1.batch_size}};
        j["stage2"] = {{"epochs", train.stage2.epochs},
                       {"lr", train.stage2.lr},
                       {"batch_size", train.stage2.batch_size}};
        j["weights"] = {{"alpha", train.stage2_weights.alpha},
                        {"beta", train.stage2_weights.beta},
                        {"gamma", train.stage2_weights.gamma},
                        {"delta", train.stage2_weights.delta}};
        j["metric"] = train.stage2_weights.pointwise_metric == dstc::Metric::Euclidean ? "euc" : "cos";
        j["include_ce"] = train.stage2_include_ce;
        j["early_stop"] = train.early_stop;
        j["patience"] = train.patience;
        j["run_stage1"] = train.run_stage1;
        j["clip_norm"] = train.adam.clip_norm;
        if (!custom_preset.is_null()) {
            j["custom_preset"] = custom_preset;
        }
        return j;
    }
};

void apply_json(RunConfig& cfg, const json& j) {
    if (j.contains("preset")) cfg.preset = j.at("preset").get<std::string>();
    if (j.contains("embed_dim")) cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
    if (j.contains("seed")) cfg.train.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("stage1")) {
        const json& s = j.at("stage1");
        if (s.contains("epochs")) cfg.train.stage1.epochs = s.at("epochs").get<int>();
        if (s.contains("lr")) cfg.train.stage1.lr = s.at("lr").get<double>();
        if (s.contains("batch_size")) cfg.train.stage1.batch_size = s.at("batch_size").get<std::size_t>();
    }
    if (j.contains("stage2")) {
        const json& s = j.at("stage2");
        if (s.contains("epochs")) cfg.train.stage2.epochs = s.at("epochs").get<int>();
        if (s.contains("lr")) cfg.train.stage2.lr = s.at("lr").get<double>();
        if (s.contains("batch_size")) cfg.train.stage2.batch_size = s.at("batch_size").get<std::size_t>();
    }
    if (j.contains("weights")) {
        const json& w = j.at("weights");
        if (w.contains("alpha")) cfg.train.stage2_weights.alpha = w.at("alpha").get<double>();
        if (w.contains("beta")) cfg.train.stage2_weights.beta = w.at("beta").get<double>();
        if (w.contains("gamma")) cfg.train.stage2_weights.gamma = w.at("gamma").get<double>();
        if (w.contains("delta")) cfg.train.stage2_weights.delta = w.at("delta").get<double>();
        cfg.weights_explicit = true;
    }
    if (j.contains("metric")) {
        cfg.train.stage2_weights.pointwise_metric = parse_metric(j.at("metric").get<std::string>());
    }
    if (j.contains("include_ce")) cfg.train.stage2_include_ce = j.at("include_ce").get<bool>();
    if (j.contains("early_stop")) cfg.train.early_stop = j.at("early_stop").get<bool>();
    if (j.contains("patience")) cfg.train.patience = j.at("patience").get<int>();
    if (j.contains("run_stage1")) cfg.train.run_stage1 = j.at("run_stage1").get<bool>();
    if (j.contains("clip_norm")) cfg.train.adam.clip_norm = j.at("clip_norm").get<double>();
    if (j.contains("custom_preset")) cfg.custom_preset = j.at("custom_preset");
}

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) {
        return cfg;
    }
    std::ifstream is(path);
    if (!is) {
        throw dstc::IoError(dstc::IoError::Kind::OpenFailed, "cannot open config: " + path);
    }
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw dstc::ConfigError("config parse error in " + path + ": " + e.what());
    }
    try {
        apply_json(cfg, j);
    } catch (const json::exception& e) {
        throw dstc::ConfigError("config key error in " + path + ": " + e.what());
    }
    return cfg;
}

dstc::SubnetSpec subnet_spec_from_json(const json& j, const std::string& key) {
    dstc::SubnetSpec spec;
    const json& dims = j.at(key);
    for (const auto& d : dims) {
        spec.dims.push_back(d.get<std::size_t>());
    }
    const std::string bn_key = key + "_batchnorm";
    if (j.contains(bn_key)) {
        for (const auto& b : j.at(bn_key)) {
            spec.batchnorm.push_back(b.get<bool>());
        }
    } else if (spec.dims.size() >= 2) {
        spec.batchnorm.assign(spec.dims.size() - 2, true);
    }
    return spec;
}

dstc::ArchPreset resolve_preset(const RunConfig& cfg, int num_classes, std::size_t d1, std::size_t d2) {
    if (cfg.preset == "custom") {
        if (cfg.custom_preset.is_null()) {
            throw dstc::ConfigError("preset custom requires a custom_preset block in the config");
        }
        try {
            dstc::ArchPreset preset;
            preset.name = "custom";
            preset.enc_x = subnet_spec_from_json(cfg.custom_preset, "enc_x");
            preset.enc_y = subnet_spec_from_json(cfg.custom_preset, "enc_y");
            preset.cls_x = subnet_spec_from_json(cfg.custom_preset, "cls_x");
            preset.cls_y = subnet_spec_from_json(cfg.custom_preset, "cls_y");
            preset.tr_xy = subnet_spec_from_json(cfg.custom_preset, "tr_xy");
            preset.tr_yx = subnet_spec_from_json(cfg.custom_preset, "tr_yx");
            return preset;
        } catch (const json::exception& e) {
            throw dstc::ConfigError(std::string("custom_preset block: ") + e.what());
        }
    }
    if (cfg.preset == "synthetic") {
        return dstc::synthetic_preset(num_classes, d1, d2, cfg.embed_dim);
    }
    return dstc::preset_by_name(cfg.preset, num_classes, d1, d2);
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw dstc::IoError(dstc::IoError::Kind::OpenFailed, "cannot open for writing: " + path);
    }
    os << content;
    if (!os) {
        throw dstc::IoError(dstc::IoError::Kind::WriteFailed, "write failed: " + path);
    }
}

// ----- synth -----------------------------------------------------------

int cmd_synth(const dstc::SyntheticSpec& spec, const std::string& out_dir) {
    const dstc::PairedDataset data = dstc::generate_synthetic(spec);
    const std::string manifest = dstc::save_dataset(out_dir, data);
    std::cout << "wrote " << manifest << " (" << data.size() << " pairs, " << data.num_classes
              << " classes)\n";
    return kExitOk;
}

// ----- train -----------------------------------------------------------

struct TrainOutcome {
    dstc::DstcModel model;
    dstc::TrainHistory history;
};

TrainOutcome run_training(const RunConfig& cfg, const dstc::PairedDataset& data) {
    const dstc::ArchPreset preset = resolve_preset(cfg, data.num_classes, data.dim_x(), data.dim_y());
    TrainOutcome outcome{
        dstc::build_model(preset, data.num_classes, data.dim_x(), data.dim_y(), cfg.train.seed), {}};
    outcome.history = dstc::train(outcome.model, data, cfg.train);
    return outcome;
}

int cmd_train(const RunConfig& cfg, const std::string& data_manifest, const std::string& out_dir) {
    const dstc::PairedDataset data = dstc::load_dataset(data_manifest);
    fs::create_directories(out_dir);
    write_text((fs::path(out_dir) / "config.json").string(), cfg.to_json().dump(2) + "\n");

    TrainOutcome outcome = run_training(cfg, data);

    dstc::save_model((fs::path(out_dir) / "model.bin").string(), outcome.model);
    dstc::write_history_csv((fs::path(out_dir) / "history.csv").string(), outcome.history);

    const dstc::RetrievalReport val =
        dstc::evaluate(outcome.model, data, dstc::Split::Val, dstc::Direction::Both, dstc::Metric::Cosine);
    dstc::write_report_csv((fs::path(out_dir) / "val_report.csv").string(), val);
    std::cout << dstc::report_summary(val);
    return kExitOk;
}

// ----- eval ------------------------------------------------------------

int cmd_eval(const std::string& model_path, const std::string& data_manifest, const std::string& split,
             const std::string& direction, const std::string& metrics_csv, const std::string& out_dir) {
    const dstc::DstcModel model = dstc::load_model(model_path);
    const dstc::PairedDataset data = dstc::load_dataset(data_manifest);
    dstc::check_model_data_compat(model, data.num_classes, data.dim_x(), data.dim_y());

    const dstc::Split sp = parse_split(split);
    const dstc::Direction dir = parse_direction(direction);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
    }
    for (const std::string& mname : split_list(metrics_csv)) {
        const dstc::Metric metric = parse_metric(mname);
        const dstc::RetrievalReport report = dstc::evaluate(model, data, sp, dir, metric);
        std::cout << dstc::report_summary(report);
        if (dir == dstc::Direction::Both) {
            // Also print the two directional mAPs the summary is built from.
            const double x2y = dstc::evaluate(model, data, sp, dstc::Direction::XtoY, metric).map;
            const double y2x = dstc::evaluate(model, data, sp, dstc::Direction::YtoX, metric).map;
            std::cout << "x2y mAP=" << x2y << " y2x mAP=" << y2x << "\n";
        }
        if (!out_dir.empty()) {
            const std::string name = std::string("report_") + dstc::direction_name(dir) + "_" +
                                     dstc::metric_name(metric) + ".csv";
            dstc::write_report_csv((fs::path(out_dir) / name).string(), report);
        }
    }
    return kExitOk;
}

// ----- ablate ----------------------------------------------------------

struct AblationRow {
    int id;
    bool ce;
    double alpha, beta, gamma, delta;
};

// The ten loss combinations of the ablation table.
const AblationRow kAblationRows[] = {
    {1, false, 1, 0, 0, 0},
    {2, false, 0, 1, 0, 0},
    {3, true, 1, 0, 0, 0},
    {4, true, 0, 1, 0, 0},
    {5, true, 1, 1, 0, 0},
    {6, true, 1, 0, 1, 0},
    {7, true, 0, 1, 0, 1},
    {8, true, 1, 1, 1, 0},
    {9, true, 1, 1, 0, 1},
    {10, true, 1, 1, 1, 1},
};

int cmd_ablate(const RunConfig& base_cfg, const std::string& data_manifest, const std::string& out_dir,
               const std::string& rows_csv, const std::string& train_metrics_csv) {
    const dstc::PairedDataset data = dstc::load_dataset(data_manifest);
    fs::create_directories(out_dir);

    std::vector<int> row_ids;
    for (const std::string& tok : split_list(rows_csv)) {
        const int id = std::stoi(tok);
        if (id < 1 || id > 10) {
            throw dstc::ConfigError("ablation rows must lie in 1..10, got " + tok);
        }
        for (int seen : row_ids) {
            if (seen == id) {
                throw dstc::ConfigError("duplicate ablation row " + tok);
            }
        }
        row_ids.push_back(id);
    }
    if (row_ids.empty()) {
        throw dstc::ConfigError("no ablation rows requested");
    }
    std::vector<dstc::Metric> train_metrics;
    for (const std::string& tok : split_list(train_metrics_csv)) {
        train_metrics.push_back(parse_metric(tok));
    }
    if (train_metrics.empty()) {
        throw dstc::ConfigError("no train metrics requested");
    }

    struct CellResult {
        double map_x2y = 0, map_y2x = 0, map_both = 0;
        double classavg_x2y = 0, classavg_y2x = 0, classavg_both = 0;
    };
    struct Task {
        AblationRow row;
        dstc::Metric train_metric;
        CellResult euc_cell, cos_cell; // per test metric
    };
    std::vector<Task> tasks;
    for (const int id : row_ids) {
        for (const dstc::Metric tm : train_metrics) {
            tasks.push_back({kAblationRows[id - 1], tm, {}, {}});
        }
    }

    std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("DSTC_THREADS")) {
        const unsigned long cap = std::strtoul(env, nullptr, 10);
        if (cap >= 1) {
            workers = std::min<std::size_t>(workers, cap);
        }
    }
    workers = std::min(workers, tasks.size());

    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex error_mutex;

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size() || failed.load()) {
                return;
            }
            Task& task = tasks[i];
            try {
                RunConfig cfg = base_cfg;
                cfg.train.stage2_include_ce = task.row.ce;
                cfg.train.stage2_weights.alpha = task.row.alpha;
                cfg.train.stage2_weights.beta = task.row.beta;
                cfg.train.stage2_weights.gamma = task.row.gamma;
                cfg.train.stage2_weights.delta = task.row.delta;
                cfg.train.stage2_weights.pointwise_metric = task.train_metric;
                // Derived deterministic seed per row.
                cfg.train.seed = base_cfg.train.seed + static_cast<std::uint64_t>(task.row.id);

                TrainOutcome outcome = run_training(cfg, data);
                for (const dstc::Metric test_metric : {dstc::Metric::Euclidean, dstc::Metric::Cosine}) {
                    const dstc::RetrievalReport x2y = dstc::evaluate(outcome.model, data, dstc::Split::Test,
                                                                     dstc::Direction::XtoY, test_metric);
                    const dstc::RetrievalReport y2x = dstc::evaluate(outcome.model, data, dstc::Split::Test,
                                                                     dstc::Direction::YtoX, test_metric);
                    CellResult cell;
                    cell.map_x2y = x2y.map;
                    cell.map_y2x = y2x.map;
                    cell.map_both = 0.5 * (x2y.map + y2x.map);
                    cell.classavg_x2y = x2y.class_avg_map;
                    cell.classavg_y2x = y2x.class_avg_map;
                    cell.classavg_both = 0.5 * (x2y.class_avg_map + y2x.class_avg_map);
                    (test_metric == dstc::Metric::Euclidean ? task.euc_cell : task.cos_cell) = cell;
                }
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!failed.exchange(true)) {
                    first_error = e.what();
                }
            }
        }
    };

    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back(worker);
    }
    for (std::thread& t : pool) {
        t.join();
    }
    if (failed.load()) {
        throw dstc::Error("ablation task failed: " + first_error);
    }

    std::ostringstream csv;
    csv << "row,ce,pt,dstc,cpt,cdstc,train_metric,"
           "euc_x2y,euc_y2x,euc_both,cos_x2y,cos_y2x,cos_both,"
           "classavg_x2y,classavg_y2x,classavg_both\n";
    for (const Task& task : tasks) {
        csv << task.row.id << "," << (task.row.ce ? 1 : 0) << "," << task.row.alpha << ","
            << task.row.beta << "," << task.row.gamma << "," << task.row.delta << ","
            << dstc::metric_name(task.train_metric) << "," << task.euc_cell.map_x2y << ","
            << task.euc_cell.map_y2x << "," << task.euc_cell.map_both << "," << task.cos_cell.map_x2y
            << "," << task.cos_cell.map_y2x << "," << task.cos_cell.map_both << ","
            << task.cos_cell.classavg_x2y << "," << task.cos_cell.classavg_y2x << ","
            << task.cos_cell.classavg_both << "\n";
    }
    const std::string path = (fs::path(out_dir) / "ablation.csv").string();
    write_text(path, csv.str());
    std::cout << "wrote " << path << " (" << tasks.size() << " rows)\n";
    return kExitOk;
}

// ----- gradcheck -------------------------------------------------------

struct GradCheckReport {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

int cmd_gradcheck(std::size_t max_dim, std::size_t batch, int trials, std::uint64_t seed,
                  bool perturb_bug) {
    using dstc::Batch;
    using dstc::DstcModel;
    using dstc::Metric;

    struct LossCase {
        std::string name;
        std::function<dstc::LossResult(DstcModel&, const Batch&)> run;
    };
    std::vector<LossCase> cases = {
        {"ce", [](DstcModel& m, const Batch& b) { return dstc::loss_ce(m, b); }},
        {"dstc", [](DstcModel& m, const Batch& b) { return dstc::loss_dstc(m, b); }},
        {"cdstc", [](DstcModel& m, const Batch& b) { return dstc::loss_cdstc(m, b); }},
        {"pc_euclidean",
         [](DstcModel& m, const Batch& b) { return dstc::loss_pc(m, b, Metric::Euclidean); }},
        {"pc_cosine", [](DstcModel& m, const Batch& b) { return dstc::loss_pc(m, b, Metric::Cosine); }},
        {"cpc_euclidean",
         [](DstcModel& m, const Batch& b) { return dstc::loss_cpc(m, b, Metric::Euclidean); }},
        {"cpc_cosine", [](DstcModel& m, const Batch& b) { return dstc::loss_cpc(m, b, Metric::Cosine); }},
        {"combined_1111",
         [](DstcModel& m, const Batch& b) {
             dstc::CombinedResult res = dstc::combined_loss(m, b, {1, 1, 1, 1, Metric::Euclidean});
             return dstc::LossResult{res.breakdown.total, std::move(res.grads)};
         }},
    };

    std::vector<GradCheckReport> reports(cases.size());
    for (std::size_t c = 0; c < cases.size(); ++c) {
        reports[c].name = cases[c].name;
    }

    dstc::Rng master(seed);
    const double h = 1e-6;
    for (int trial = 0; trial < trials; ++trial) {
        const std::size_t embed = 3 + master.next_index(std::max<std::size_t>(1, max_dim - 2));
        const std::size_t d1 = 2 + master.next_index(max_dim - 1);
        const std::size_t d2 = 2 + master.next_index(max_dim - 1);
        const int num_classes = 2 + static_cast<int>(master.next_index(3));

        dstc::ArchPreset preset;
        preset.enc_x = {{d1, embed + 1, embed}, {true}};
        preset.enc_y = {{d2, embed + 2, embed}, {true}};
        preset.cls_x = {{embed, static_cast<std::size_t>(num_classes)}, {}};
        preset.cls_y = {{embed, static_cast<std::size_t>(num_classes)}, {}};
        preset.tr_xy = {{embed, std::max<std::size_t>(2, embed / 2), embed}, {true}};
        preset.tr_yx = {{embed, std::max<std::size_t>(2, embed / 2), embed}, {true}};
        DstcModel model = dstc::build_model(preset, num_classes, d1, d2, master.next_u64());
        // Generic nonzero biases: zero biases can park pre-activations
        // exactly on the relu kink, where central differences are
        // ill-defined for any subgradient convention.
        for (dstc::Subnet which : dstc::kAllSubnets) {
            for (dstc::Layer& layer : model.subnet(which).layers) {
                if (auto* lin = std::get_if<dstc::LinearLayer>(&layer)) {
                    for (double& bias : lin->bias) {
                        bias = master.next_uniform(0.05, 0.3) * (master.next_index(2) == 0 ? 1.0 : -1.0);
                    }
                }
            }
        }

        Batch b;
        b.num_classes = num_classes;
        b.x = dstc::DenseMatrix(batch, d1);
        b.y = dstc::DenseMatrix(batch, d2);
        b.labels.resize(batch);
        for (std::size_t i = 0; i < batch; ++i) {
            b.labels[i] = static_cast<int>(i) % num_classes;
        }
        for (double& v : b.x.data) v = master.next_normal();
        for (double& v : b.y.data) v = master.next_normal();

        for (std::size_t c = 0; c < cases.size(); ++c) {
            DstcModel work = model;
            dstc::LossResult res = cases[c].run(work, b);
            if (perturb_bug && trial == 0 && c == 0) {
                auto& lg = std::get<dstc::LinearGrads>(res.grads.e_x.layers[0]);
                lg.weight(0, 0) += 1.0;
            }

            for (dstc::Subnet which : dstc::kAllSubnets) {
                // Flatten analytic grads in parameter order.
                std::vector<double> analytic;
                for (const dstc::LayerGrads& lg : res.grads.subnet(which).layers) {
                    if (const auto* l = std::get_if<dstc::LinearGrads>(&lg)) {
                        analytic.insert(analytic.end(), l->weight.data.begin(), l->weight.data.end());
                        analytic.insert(analytic.end(), l->bias.begin(), l->bias.end());
                    } else if (const auto* bn = std::get_if<dstc::BatchNormGrads>(&lg)) {
                        analytic.insert(analytic.end(), bn->gamma.begin(), bn->gamma.end());
                        analytic.insert(analytic.end(), bn->beta.begin(), bn->beta.end());
                    }
                }

                std::size_t flat = 0;
                auto probe = [&](std::vector<double>& params) {
                    for (double& p : params) {
                        const double saved = p;
                        p = saved + h;
                        DstcModel up_model = model;
                        const double up = cases[c].run(up_model, b).value;
                        p = saved - h;
                        DstcModel down_model = model;
                        const double down = cases[c].run(down_model, b).value;
                        p = saved;
                        const double fd = (up - down) / (2.0 * h);
                        reports[c].max_rel_err = std::max(reports[c].max_rel_err, rel_err(analytic[flat], fd));
                        ++reports[c].checked;
                        ++flat;
                    }
                };
                dstc::Mlp& net = model.subnet(which);
                for (dstc::Layer& layer : net.layers) {
                    if (auto* lin = std::get_if<dstc::LinearLayer>(&layer)) {
                        probe(lin->weight.data);
                        probe(lin->bias);
                    } else if (auto* bn = std::get_if<dstc::BatchNormLayer>(&layer)) {
                        probe(bn->gamma);
                        probe(bn->beta);
                    }
                }
            }
        }
    }

    bool all_pass = true;
    for (const GradCheckReport& r : reports) {
        const bool pass = r.max_rel_err <= 1e-5;
        all_pass = all_pass && pass;
        std::cout << (pass ? "PASS" : "FAIL") << " " << r.name << ": max rel err " << r.max_rel_err
                  << " over " << r.checked << " parameters (trials=" << trials << ", dims<=" << max_dim
                  << ", batch=" << batch << ")\n";
    }
    return all_pass ? kExitOk : kExitNumeric;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-modal retrieval with per-modality classifiers and translators"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic paired dataset");
    dstc::SyntheticSpec spec;
    std::string synth_out;
    synth->add_option("--classes", spec.num_classes, "Number of classes")->default_val(10);
    synth->add_option("--n-per-class", spec.samples_per_class, "Samples per class")->default_val(200);
    synth->add_option("--dx", spec.dim_x, "Modality x feature dim")->default_val(64);
    synth->add_option("--dy", spec.dim_y, "Modality y feature dim")->default_val(48);
    synth->add_option("--spread", spec.cluster_spread, "Cluster noise scale")->default_val(0.15);
    synth->add_option("--pair-noise", spec.pair_noise, "Fraction of re-matched pairs")->default_val(0.0);
    synth->add_option("--seed", spec.seed, "Generator seed")->default_val(0);
    synth->add_option("--out", synth_out, "Output directory")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "Two-stage training");
    std::string train_config, train_data, train_out;
    std::string opt_weights, opt_metric, opt_preset;
    double opt_stage1_lr = -1, opt_stage2_lr = -1;
    int opt_stage1_epochs = -1, opt_stage2_epochs = -1;
    long long opt_batch = -1, opt_embed = -1;
    long long opt_seed = -1;
    bool opt_no_stage1 = false, opt_no_early_stop = false;
    train_cmd->add_option("--config", train_config, "JSON config file");
    train_cmd->add_option("--data", train_data, "Dataset manifest path")->required();
    train_cmd->add_option("--out", train_out, "Output directory")->required();
    train_cmd->add_option("--preset", opt_preset, "audioset|wikipedia|pascal|synthetic|custom");
    train_cmd->add_option("--seed", opt_seed, "Seed override");
    train_cmd->add_option("--stage1-epochs", opt_stage1_epochs, "Stage-1 epochs");
    train_cmd->add_option("--stage2-epochs", opt_stage2_epochs, "Stage-2 epochs");
    train_cmd->add_option("--stage1-lr", opt_stage1_lr, "Stage-1 learning rate");
    train_cmd->add_option("--stage2-lr", opt_stage2_lr, "Stage-2 learning rate");
    train_cmd->add_option("--batch-size", opt_batch, "Batch size for both stages");
    train_cmd->add_option("--embed-dim", opt_embed, "Embedding dim (synthetic preset)");
    train_cmd->add_option("--stage2-weights", opt_weights, "alpha,beta,gamma,delta");
    train_cmd->add_option("--metric", opt_metric, "Pointwise training metric: euc|cos");
    train_cmd->add_flag("--no-stage1", opt_no_stage1, "Skip classifier pre-training");
    train_cmd->add_flag("--no-early-stop", opt_no_early_stop, "Disable early stopping");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Retrieval evaluation");
    std::string eval_model, eval_data, eval_split = "test", eval_direction = "both",
                eval_metrics = "cos", eval_out;
    eval_cmd->add_option("--model", eval_model, "Model file")->required();
    eval_cmd->add_option("--data", eval_data, "Dataset manifest path")->required();
    eval_cmd->add_option("--split", eval_split, "train|val|test");
    eval_cmd->add_option("--direction", eval_direction, "x2y|y2x|both");
    eval_cmd->add_option("--metric", eval_metrics, "Comma list of euc,cos");
    eval_cmd->add_option("--out", eval_out, "Directory for per-query CSV reports");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate loss-combination rows");
    std::string ab_config, ab_data, ab_out, ab_rows = "1,2,3,4,5,6,7,8,9,10", ab_train_metrics = "euc";
    long long ab_seed = -1;
    int ab_stage1_epochs = -1, ab_stage2_epochs = -1;
    ablate_cmd->add_option("--config", ab_config, "JSON config file");
    ablate_cmd->add_option("--data", ab_data, "Dataset manifest path")->required();
    ablate_cmd->add_option("--out", ab_out, "Output directory")->required();
    ablate_cmd->add_option("--rows", ab_rows, "Comma list of table rows (1..10)");
    ablate_cmd->add_option("--train-metrics", ab_train_metrics, "Comma list of euc,cos");
    ablate_cmd->add_option("--seed", ab_seed, "Base seed override");
    ablate_cmd->add_option("--stage1-epochs", ab_stage1_epochs, "Stage-1 epochs");
    ablate_cmd->add_option("--stage2-epochs", ab_stage2_epochs, "Stage-2 epochs");

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    std::size_t gc_dims = 8, gc_batch = 4;
    int gc_trials = 3;
    std::uint64_t gc_seed = 99;
    bool gc_perturb = false;
    grad_cmd->add_option("--dims", gc_dims, "Max feature/embed dim");
    grad_cmd->add_option("--batch", gc_batch, "Batch size");
    grad_cmd->add_option("--trials", gc_trials, "Number of random models");
    grad_cmd->add_option("--seed", gc_seed, "Seed");
    grad_cmd->add_flag("--perturb-bug", gc_perturb, "")->group(""); // test hook

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (synth->parsed()) {
            return cmd_synth(spec, synth_out);
        }
        if (train_cmd->parsed()) {
            RunConfig cfg = load_run_config(train_config);
            if (!opt_preset.empty()) cfg.preset = opt_preset;
            if (opt_seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(opt_seed);
            if (opt_stage1_epochs >= 0) cfg.train.stage1.epochs = opt_stage1_epochs;
            if (opt_stage2_epochs >= 0) cfg.train.stage2.epochs = opt_stage2_epochs;
            if (opt_stage1_lr > 0) cfg.train.stage1.lr = opt_stage1_lr;
            if (opt_stage2_lr > 0) cfg.train.stage2.lr = opt_stage2_lr;
            if (opt_batch > 0) {
                cfg.train.stage1.batch_size = static_cast<std::size_t>(opt_batch);
                cfg.train.stage2.batch_size = static_cast<std::size_t>(opt_batch);
            }
            if (opt_embed > 0) cfg.embed_dim = static_cast<std::size_t>(opt_embed);
            if (!opt_weights.empty()) {
                const std::vector<std::string> parts = split_list(opt_weights);
                if (parts.size() != 4) {
                    throw dstc::ConfigError("--stage2-weights expects alpha,beta,gamma,delta");
                }
                cfg.train.stage2_weights.alpha = std::stod(parts[0]);
                cfg.train.stage2_weights.beta = std::stod(parts[1]);
                cfg.train.stage2_weights.gamma = std::stod(parts[2]);
                cfg.train.stage2_weights.delta = std::stod(parts[3]);
                cfg.weights_explicit = true;
            }
            if (!cfg.weights_explicit) {
                const dstc::Metric keep = cfg.train.stage2_weights.pointwise_metric;
                cfg.train.stage2_weights = dstc::preset_loss_weights(cfg.preset);
                cfg.train.stage2_weights.pointwise_metric = keep;
            }
            if (!opt_metric.empty()) {
                cfg.train.stage2_weights.pointwise_metric = parse_metric(opt_metric);
            }
            if (opt_no_stage1) cfg.train.run_stage1 = false;
            if (opt_no_early_stop) cfg.train.early_stop = false;
            return cmd_train(cfg, train_data, train_out);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(eval_model, eval_data, eval_split, eval_direction, eval_metrics, eval_out);
        }
        if (ablate_cmd->parsed()) {
            RunConfig cfg = load_run_config(ab_config);
            if (ab_seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(ab_seed);
            if (ab_stage1_epochs >= 0) cfg.train.stage1.epochs = ab_stage1_epochs;
            if (ab_stage2_epochs >= 0) cfg.train.stage2.epochs = ab_stage2_epochs;
            return cmd_ablate(cfg, ab_data, ab_out, ab_rows, ab_train_metrics);
        }
        if (grad_cmd->parsed()) {
            return cmd_gradcheck(gc_dims, gc_batch, gc_trials, gc_seed, gc_perturb);
        }
    } catch (const dstc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const dstc::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const dstc::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
