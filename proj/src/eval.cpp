#include "dstc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace dstc {

namespace {

RetrievalReport evaluate_one_direction(const DstcModel& model, const PairedDataset& data, Split split,
                                       Direction direction, Metric metric) {
    const std::vector<std::size_t> indices = split_indices(data, split);
    if (indices.empty()) {
        throw ConfigError("evaluate: split is empty");
    }
    check_model_data_compat(model, data.num_classes, data.dim_x(), data.dim_y());

    const Batch split_batch = make_batch(data, indices);

    DenseMatrix queries;
    DenseMatrix gallery;
    if (direction == Direction::XtoY) {
        queries = mlp_eval(model.e_x, split_batch.x);
        gallery = mlp_eval(model.t_yx, mlp_eval(model.e_y, split_batch.y));
    } else {
        queries = mlp_eval(model.e_y, split_batch.y);
        gallery = mlp_eval(model.t_xy, mlp_eval(model.e_x, split_batch.x));
    }

    RetrievalReport report;
    report.direction = direction;
    report.metric = metric;

    for (std::size_t qi = 0; qi < indices.size(); ++qi) {
        QueryResult qr;
        qr.query_index = qi;
        qr.label = split_batch.labels[qi];

        std::vector<char> relevant(indices.size(), 0);
        bool has_positive = false;
        for (std::size_t gi = 0; gi < indices.size(); ++gi) {
            if (split_batch.labels[gi] == qr.label) {
                relevant[gi] = 1;
                has_positive = true;
            }
        }
        if (!has_positive) {
            qr.skipped = true;
            ++report.num_skipped;
            report.per_query.push_back(qr);
            continue;
        }

        const std::vector<double> scores = score(queries.row(qi), gallery, metric);
        const std::vector<std::size_t> ranking = rank(scores);
        qr.ap = average_precision(ranking, relevant);
        report.per_query.push_back(qr);
    }

    ApSummary summary = summarize_ap(report.per_query, data.num_classes);
    report.map = summary.map;
    report.class_avg_map = summary.class_avg_map;
    report.per_class_map = std::move(summary.per_class_map);
    return report;
}

} // namespace

ApSummary summarize_ap(const std::vector<QueryResult>& per_query, int num_classes) {
    ApSummary summary;
    summary.per_class_map.assign(static_cast<std::size_t>(num_classes),
                                 std::numeric_limits<double>::quiet_NaN());
    std::vector<double> class_ap_sum(static_cast<std::size_t>(num_classes), 0.0);
    std::vector<std::size_t> class_counts(static_cast<std::size_t>(num_classes), 0);

    double ap_sum = 0.0;
    std::size_t scored = 0;
    for (const QueryResult& qr : per_query) {
        if (qr.skipped) {
            continue;
        }
        ap_sum += qr.ap;
        ++scored;
        class_ap_sum[static_cast<std::size_t>(qr.label)] += qr.ap;
        ++class_counts[static_cast<std::size_t>(qr.label)];
    }
    if (scored == 0) {
        throw ConfigError("evaluate: every query was skipped");
    }
    summary.map = ap_sum / static_cast<double>(scored);

    double class_sum = 0.0;
    std::size_t class_n = 0;
    for (int c = 0; c < num_classes; ++c) {
        const auto uc = static_cast<std::size_t>(c);
        if (class_counts[uc] > 0) {
            summary.per_class_map[uc] = class_ap_sum[uc] / static_cast<double>(class_counts[uc]);
            class_sum += summary.per_class_map[uc];
            ++class_n;
        }
    }
    summary.class_avg_map = class_sum / static_cast<double>(class_n);
    return summary;
}

std::vector<double> score(std::span<const double> query, const DenseMatrix& gallery, Metric metric) {
    if (query.size() != gallery.cols) {
        throw DimensionError("score: query dim " + std::to_string(query.size()) +
                             " does not match gallery dim " + std::to_string(gallery.cols));
    }
    std::vector<double> scores(gallery.rows);

    if (metric == Metric::Euclidean) {
        for (std::size_t j = 0; j < gallery.rows; ++j) {
            double sq = 0.0;
            const double* row = gallery.data.data() + j * gallery.cols;
            for (std::size_t k = 0; k < gallery.cols; ++k) {
                const double d = query[k] - row[k];
                sq += d * d;
            }
            scores[j] = -sq;
        }
        return scores;
    }

    double qsq = 0.0;
    for (double v : query) {
        qsq += v * v;
    }
    const double qnorm = std::sqrt(qsq);
    if (qnorm == 0.0) {
        throw NumericError("score: cosine metric with a zero-norm query");
    }
    for (std::size_t j = 0; j < gallery.rows; ++j) {
        const double* row = gallery.data.data() + j * gallery.cols;
        double dot = 0.0;
        double gsq = 0.0;
        for (std::size_t k = 0; k < gallery.cols; ++k) {
            dot += query[k] * row[k];
            gsq += row[k] * row[k];
        }
        const double gnorm = std::sqrt(gsq);
        if (gnorm == 0.0) {
            throw NumericError("score: cosine metric with a zero-norm gallery row " + std::to_string(j));
        }
        scores[j] = dot / (qnorm * gnorm);
    }
    return scores;
}

std::vector<std::size_t> rank(std::span<const double> scores) {
    if (scores.empty()) {
        throw ConfigError("rank: empty score list");
    }
    for (double s : scores) {
        if (std::isnan(s)) {
            throw NumericError("rank: NaN score");
        }
    }
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(),
                     [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

double average_precision(const std::vector<std::size_t>& ranking, const std::vector<char>& relevant) {
    if (ranking.size() != relevant.size()) {
        throw DimensionError("average_precision: ranking and relevance lengths disagree");
    }
    std::size_t positives = 0;
    for (char r : relevant) {
        if (r) {
            ++positives;
        }
    }
    if (positives == 0) {
        throw NumericError("average_precision: undefined, no relevant items");
    }

    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < ranking.size(); ++r) {
        if (relevant[ranking[r]]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    }
    return sum / static_cast<double>(positives);
}

RetrievalReport evaluate(const DstcModel& model, const PairedDataset& data, Split split,
                         Direction direction, Metric metric) {
    if (direction != Direction::Both) {
        return evaluate_one_direction(model, data, split, direction, metric);
    }
    RetrievalReport x2y = evaluate_one_direction(model, data, split, Direction::XtoY, metric);
    RetrievalReport y2x = evaluate_one_direction(model, data, split, Direction::YtoX, metric);

    RetrievalReport both;
    both.direction = Direction::Both;
    both.metric = metric;
    both.map = 0.5 * (x2y.map + y2x.map);
    both.class_avg_map = 0.5 * (x2y.class_avg_map + y2x.class_avg_map);
    both.num_skipped = x2y.num_skipped + y2x.num_skipped;
    both.per_query = std::move(x2y.per_query);
    both.per_query.insert(both.per_query.end(), y2x.per_query.begin(), y2x.per_query.end());
    both.per_class_map.resize(x2y.per_class_map.size());
    for (std::size_t c = 0; c < both.per_class_map.size(); ++c) {
        both.per_class_map[c] = 0.5 * (x2y.per_class_map[c] + y2x.per_class_map[c]);
    }
    return both;
}

MetricGrid metric_grid(const DstcModel& euclidean_trained, const DstcModel& cosine_trained,
                       const PairedDataset& data, Split split) {
    MetricGrid grid;
    const DstcModel* models[2] = {&euclidean_trained, &cosine_trained};
    const Metric metrics[2] = {Metric::Euclidean, Metric::Cosine};
    for (int tr = 0; tr < 2; ++tr) {
        for (int te = 0; te < 2; ++te) {
            const RetrievalReport x2y = evaluate(*models[tr], data, split, Direction::XtoY, metrics[te]);
            const RetrievalReport y2x = evaluate(*models[tr], data, split, Direction::YtoX, metrics[te]);
            GridCell& cell = grid.cells[tr][te];
            cell.map_x2y = x2y.map;
            cell.map_y2x = y2x.map;
            cell.map_both = 0.5 * (x2y.map + y2x.map);
            cell.class_avg_both = 0.5 * (x2y.class_avg_map + y2x.class_avg_map);
        }
    }
    return grid;
}

namespace {

double argmax_accuracy(const DenseMatrix& logits, const std::vector<int>& labels) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols; ++j) {
            if (logits(i, j) > logits(i, best)) {
                best = j;
            }
        }
        if (static_cast<int>(best) == labels[i]) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows);
}

} // namespace

double classification_accuracy(const DstcModel& model, const PairedDataset& data, Split split,
                               int modality) {
    const std::vector<std::size_t> indices = split_indices(data, split);
    if (indices.empty()) {
        throw ConfigError("classification_accuracy: split is empty");
    }
    const Batch batch = make_batch(data, indices);
    const DenseMatrix logits = modality == 0 ? mlp_eval(model.c_x, mlp_eval(model.e_x, batch.x))
                                             : mlp_eval(model.c_y, mlp_eval(model.e_y, batch.y));
    return argmax_accuracy(logits, batch.labels);
}

double translated_accuracy(const DstcModel& model, const PairedDataset& data, Split split,
                           Direction direction) {
    if (direction == Direction::Both) {
        return 0.5 * (translated_accuracy(model, data, split, Direction::XtoY) +
                      translated_accuracy(model, data, split, Direction::YtoX));
    }
    const std::vector<std::size_t> indices = split_indices(data, split);
    if (indices.empty()) {
        throw ConfigError("translated_accuracy: split is empty");
    }
    const Batch batch = make_batch(data, indices);
    const DenseMatrix logits =
        direction == Direction::XtoY
            ? mlp_eval(model.c_y, mlp_eval(model.t_xy, mlp_eval(model.e_x, batch.x)))
            : mlp_eval(model.c_x, mlp_eval(model.t_yx, mlp_eval(model.e_y, batch.y)));
    return argmax_accuracy(logits, batch.labels);
}

const char* direction_name(Direction direction) {
    switch (direction) {
    case Direction::XtoY: return "x2y";
    case Direction::YtoX: return "y2x";
    case Direction::Both: return "both";
    }
    return "?";
}

const char* metric_name(Metric metric) {
    return metric == Metric::Euclidean ? "euclidean" : "cosine";
}

void write_report_csv(const std::string& path, const RetrievalReport& report) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw IoError(IoError::Kind::OpenFailed, "cannot open for writing: " + path);
    }
    os << "index,class,ap,skipped\n";
    for (const QueryResult& qr : report.per_query) {
        os << qr.query_index << "," << qr.label << "," << qr.ap << "," << (qr.skipped ? 1 : 0) << "\n";
    }
    if (!os) {
        throw IoError(IoError::Kind::WriteFailed, "write failed: " + path);
    }
}

std::string report_summary(const RetrievalReport& report) {
    std::ostringstream ss;
    ss << "direction=" << direction_name(report.direction) << " metric=" << metric_name(report.metric)
       << "\n";
    ss << "mAP=" << report.map << " class_avg_mAP=" << report.class_avg_map
       << " skipped=" << report.num_skipped << "\n";
    ss << "per-class mAP:";
    for (std::size_t c = 0; c < report.per_class_map.size(); ++c) {
        ss << " " << c << ":" << report.per_class_map[c];
    }
    ss << "\n";
    return ss.str();
}

} // namespace dstc
