#pragma once

#include <utility>

#include "dstc/model.hpp"

namespace dstc {

enum class Metric { Euclidean, Cosine };

// Coefficients of the combined objective: total = ce + alpha*pc +
// beta*dstc + gamma*cpc + delta*cdstc. The pointwise metric selects plain
// squared distance or row-normalize-then-squared-distance for pc/cpc.
struct LossWeights {
    double alpha = 1.0; // pc
    double beta = 1.0;  // dstc
    double gamma = 1.0; // cpc
    double delta = 1.0; // cdstc
    Metric pointwise_metric = Metric::Euclidean;
};

// Unweighted component values plus the weighted total.
struct LossBreakdown {
    double ce = 0.0;
    double pc = 0.0;
    double dstc = 0.0;
    double cpc = 0.0;
    double cdstc = 0.0;
    double total = 0.0;
};

// Parameter gradients for all six subnetworks.
struct ModelGrads {
    MlpGrads e_x, e_y, c_x, c_y, t_xy, t_yx;

    MlpGrads& subnet(Subnet which);
    const MlpGrads& subnet(Subnet which) const;
};

ModelGrads zero_model_grads(const DstcModel& model);

struct LossResult {
    double value = 0.0;
    ModelGrads grads;
};

struct CombinedResult {
    LossBreakdown breakdown;
    ModelGrads grads;
};

// Mean over rows of -log softmax(logits)[label], max-shift stabilized.
// Labels must be one-hot rows. grad = (softmax - labels) / N.
std::pair<double, DenseMatrix> softmax_cross_entropy(const DenseMatrix& logits, const DenseMatrix& labels);

// Classification of each modality in its own space: CE(C_x(E_x(x))) +
// CE(C_y(E_y(y))).
LossResult loss_ce(DstcModel& model, const Batch& batch);

// Class membership must survive translation: CE(C_y(T_xy(E_x(x)))) +
// CE(C_x(T_yx(E_y(y)))).
LossResult loss_dstc(DstcModel& model, const Batch& batch);

// Class membership must survive the full cycle: CE(C_x(T_yx(T_xy(E_x(x)))))
// + CE(C_y(T_xy(T_yx(E_y(y))))).
LossResult loss_cdstc(DstcModel& model, const Batch& batch);

// Mean squared distance between paired embeddings after translation.
LossResult loss_pc(DstcModel& model, const Batch& batch, Metric metric);

// Round-trip form: each embedding against its own double translation.
LossResult loss_cpc(DstcModel& model, const Batch& batch, Metric metric);

// All five terms through one shared forward; components reported
// unweighted, gradient is the weighted sum.
CombinedResult combined_loss(DstcModel& model, const Batch& batch, const LossWeights& weights);

// The trainer-facing engine. include_ce = false drops the CE term from the
// total and the gradient (used by the ablation rows without CE); paths
// controls which parts of the graph run, so CE-only training never touches
// the translators.
struct ObjectiveOptions {
    LossWeights weights;
    bool include_ce = true;
    PathMask paths = PathMask::all();
};

CombinedResult objective(DstcModel& model, const Batch& batch, const ObjectiveOptions& opts);

} // namespace dstc
