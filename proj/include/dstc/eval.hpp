#pragma once

#include <span>
#include <string>
#include <vector>

#include "dstc/losses.hpp"

namespace dstc {

enum class Direction { XtoY, YtoX, Both };

struct QueryResult {
    std::size_t query_index = 0; // index into the evaluated split
    int label = 0;
    double ap = 0.0;
    bool skipped = false; // class absent from the gallery
};

struct RetrievalReport {
    Direction direction = Direction::XtoY;
    Metric metric = Metric::Cosine;
    std::vector<QueryResult> per_query;
    double map = 0.0;           // mean AP over scored queries
    double class_avg_map = 0.0; // per-class mean APs, averaged over classes
    std::vector<double> per_class_map; // NaN where a class has no queries
    std::size_t num_skipped = 0;
};

// Similarity of one query against every gallery row; higher is better.
// Euclidean: -|a-b|^2. Cosine: cos(a,b), zero-norm vectors rejected.
std::vector<double> score(std::span<const double> query, const DenseMatrix& gallery, Metric metric);

// Indices sorted by descending score, ties broken by ascending index.
std::vector<std::size_t> rank(std::span<const double> scores);

// AP over the full ranked gallery: mean over relevant ranks r of
// (relevant in top r) / r. Throws when no item is relevant.
double average_precision(const std::vector<std::size_t>& ranking, const std::vector<char>& relevant);

// Global mAP (mean over scored queries) and class-averaged mAP (per-class
// means, then averaged over classes with at least one query).
struct ApSummary {
    double map = 0.0;
    double class_avg_map = 0.0;
    std::vector<double> per_class_map; // NaN where a class has no queries
};

ApSummary summarize_ap(const std::vector<QueryResult>& per_query, int num_classes);

// Retrieval per the inference rule: for x->y the queries are E_x(x) and the
// gallery is T_yx(E_y(y)), translated into the query modality's space.
// Every split item queries the full opposite-modality split gallery;
// eval-mode forwards only. Direction::Both averages the two directional
// reports.
RetrievalReport evaluate(const DstcModel& model, const PairedDataset& data, Split split,
                         Direction direction, Metric metric);

// The 2x2 (train metric, test metric) mAP grid, three directions per cell.
struct GridCell {
    double map_x2y = 0.0;
    double map_y2x = 0.0;
    double map_both = 0.0;
    double class_avg_both = 0.0;
};

struct MetricGrid {
    // Indexed [train][test] with 0 = Euclidean, 1 = Cosine.
    GridCell cells[2][2];
};

MetricGrid metric_grid(const DstcModel& euclidean_trained, const DstcModel& cosine_trained,
                       const PairedDataset& data, Split split);

// Fraction of split samples whose own-modality classifier argmax matches
// the label. modality 0 = x, 1 = y.
double classification_accuracy(const DstcModel& model, const PairedDataset& data, Split split,
                               int modality);

// Translate-then-classify accuracy: for x2y, argmax C_y(T_xy(E_x(x)))
// against the label.
double translated_accuracy(const DstcModel& model, const PairedDataset& data, Split split,
                           Direction direction);

void write_report_csv(const std::string& path, const RetrievalReport& report);
std::string report_summary(const RetrievalReport& report);

const char* direction_name(Direction direction);
const char* metric_name(Metric metric);

} // namespace dstc
