#include "dstc/losses.hpp"

#include <cmath>
#include <string>

namespace dstc {

namespace {

constexpr double kNormEps = 1e-12;

// Gradient accumulator for one activation; `any` skips dead branches.
struct ActGrad {
    DenseMatrix g;
    bool any = false;

    void ensure(std::size_t rows, std::size_t cols) {
        if (!any) {
            g = DenseMatrix(rows, cols);
        }
    }

    void add_scaled(const DenseMatrix& d, double scale) {
        ensure(d.rows, d.cols);
        for (std::size_t i = 0; i < d.size(); ++i) {
            g.data[i] += scale * d.data[i];
        }
        any = true;
    }
};

struct PairTerm {
    double value = 0.0;
    DenseMatrix grad_a;
    DenseMatrix grad_b;
};

// Pulls a gradient on u = a / max(|a|, eps) back to a, row by row.
DenseMatrix normalization_backward(const DenseMatrix& a, const DenseMatrix& u, const DenseMatrix& gu) {
    DenseMatrix ga(a.rows, a.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) {
            sq += a(i, j) * a(i, j);
        }
        const double norm = std::sqrt(sq);
        if (norm > kNormEps) {
            double dot = 0.0;
            for (std::size_t j = 0; j < a.cols; ++j) {
                dot += gu(i, j) * u(i, j);
            }
            const double inv = 1.0 / norm;
            for (std::size_t j = 0; j < a.cols; ++j) {
                ga(i, j) = (gu(i, j) - dot * u(i, j)) * inv;
            }
        } else {
            const double inv = 1.0 / kNormEps;
            for (std::size_t j = 0; j < a.cols; ++j) {
                ga(i, j) = gu(i, j) * inv;
            }
        }
    }
    return ga;
}

// (1/N) sum_i |a_i - b_i|^2, optionally on row-normalized vectors with the
// gradient flowing through the normalization.
PairTerm pointwise_term(const DenseMatrix& a, const DenseMatrix& b, Metric metric) {
    if (!a.same_shape(b)) {
        throw DimensionError("pointwise loss: embedding shapes disagree");
    }
    const double inv_n = 1.0 / static_cast<double>(a.rows);
    PairTerm term;

    if (metric == Metric::Euclidean) {
        term.grad_a = DenseMatrix(a.rows, a.cols);
        term.grad_b = DenseMatrix(a.rows, a.cols);
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = a.data[i] - b.data[i];
            term.value += d * d;
            term.grad_a.data[i] = 2.0 * inv_n * d;
            term.grad_b.data[i] = -2.0 * inv_n * d;
        }
        term.value *= inv_n;
        return term;
    }

    const DenseMatrix u = l2_normalize_rows(a, kNormEps);
    const DenseMatrix v = l2_normalize_rows(b, kNormEps);
    DenseMatrix gu(a.rows, a.cols);
    DenseMatrix gv(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = u.data[i] - v.data[i];
        term.value += d * d;
        gu.data[i] = 2.0 * inv_n * d;
        gv.data[i] = -2.0 * inv_n * d;
    }
    term.value *= inv_n;
    term.grad_a = normalization_backward(a, u, gu);
    term.grad_b = normalization_backward(b, v, gv);
    return term;
}

void require(bool present, const char* what) {
    if (!present) {
        throw ConfigError(std::string("objective: required activation path missing: ") + what);
    }
}

} // namespace

MlpGrads& ModelGrads::subnet(Subnet which) {
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

const MlpGrads& ModelGrads::subnet(Subnet which) const {
    return const_cast<ModelGrads*>(this)->subnet(which);
}

ModelGrads zero_model_grads(const DstcModel& model) {
    ModelGrads g;
    g.e_x = zero_grads_like(model.e_x);
    g.e_y = zero_grads_like(model.e_y);
    g.c_x = zero_grads_like(model.c_x);
    g.c_y = zero_grads_like(model.c_y);
    g.t_xy = zero_grads_like(model.t_xy);
    g.t_yx = zero_grads_like(model.t_yx);
    return g;
}

std::pair<double, DenseMatrix> softmax_cross_entropy(const DenseMatrix& logits, const DenseMatrix& labels) {
    if (!logits.same_shape(labels)) {
        throw DimensionError("softmax_cross_entropy: logits and labels shapes disagree");
    }
    const std::size_t n = logits.rows;
    const std::size_t c = logits.cols;
    if (n == 0) {
        throw DimensionError("softmax_cross_entropy: empty batch");
    }

    DenseMatrix grad(n, c);
    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);

    for (std::size_t i = 0; i < n; ++i) {
        std::size_t ones = 0;
        std::size_t target = 0;
        for (std::size_t j = 0; j < c; ++j) {
            const double z = labels(i, j);
            if (z == 1.0) {
                ++ones;
                target = j;
            } else if (z != 0.0) {
                throw ConfigError("softmax_cross_entropy: label row " + std::to_string(i) +
                                  " is not one-hot");
            }
        }
        if (ones != 1) {
            throw ConfigError("softmax_cross_entropy: label row " + std::to_string(i) + " is not one-hot");
        }

        double max_logit = logits(i, 0);
        for (std::size_t j = 1; j < c; ++j) {
            max_logit = std::max(max_logit, logits(i, j));
        }
        double sum_exp = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            sum_exp += std::exp(logits(i, j) - max_logit);
        }
        const double log_sum = max_logit + std::log(sum_exp);
        loss += (log_sum - logits(i, target)) * inv_n;

        const double inv_sum = 1.0 / sum_exp;
        for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(logits(i, j) - max_logit) * inv_sum;
            grad(i, j) = (p - labels(i, j)) * inv_n;
        }
    }
    return {loss, std::move(grad)};
}

CombinedResult objective(DstcModel& model, const Batch& batch, const ObjectiveOptions& opts) {
    const LossWeights& w = opts.weights;
    if (w.alpha < 0 || w.beta < 0 || w.gamma < 0 || w.delta < 0 ||
        !std::isfinite(w.alpha + w.beta + w.gamma + w.delta)) {
        throw ConfigError("objective: loss weights must be finite and non-negative");
    }

    ActivationBundle bundle = forward_paths(model, batch, Mode::Train, opts.paths);
    const DenseMatrix labels = one_hot(batch.labels, batch.num_classes);

    CombinedResult res;
    res.grads = zero_model_grads(model);

    ActGrad g_ex, g_ey, g_txy, g_tyx, g_rtx, g_rty;
    ActGrad g_lex, g_ley, g_ltxy, g_ltyx, g_lrtx, g_lrty;

    if (opts.include_ce) {
        require(bundle.lex.present && bundle.ley.present, "classifier logits");
        auto [lx, gx] = softmax_cross_entropy(bundle.lex.out, labels);
        auto [ly, gy] = softmax_cross_entropy(bundle.ley.out, labels);
        res.breakdown.ce = lx + ly;
        g_lex.add_scaled(gx, 1.0);
        g_ley.add_scaled(gy, 1.0);
    }

    if (bundle.txy.present && bundle.tyx.present) {
        // PC: each embedding against its partner's translation.
        const PairTerm pc_x = pointwise_term(bundle.ex.out, bundle.tyx.out, w.pointwise_metric);
        const PairTerm pc_y = pointwise_term(bundle.ey.out, bundle.txy.out, w.pointwise_metric);
        res.breakdown.pc = pc_x.value + pc_y.value;
        if (w.alpha > 0.0) {
            g_ex.add_scaled(pc_x.grad_a, w.alpha);
            g_tyx.add_scaled(pc_x.grad_b, w.alpha);
            g_ey.add_scaled(pc_y.grad_a, w.alpha);
            g_txy.add_scaled(pc_y.grad_b, w.alpha);
        }
    } else if (w.alpha > 0.0) {
        require(false, "translations for pc");
    }

    if (bundle.ltxy.present && bundle.ltyx.present) {
        auto [lt_xy, gt_xy] = softmax_cross_entropy(bundle.ltxy.out, labels);
        auto [lt_yx, gt_yx] = softmax_cross_entropy(bundle.ltyx.out, labels);
        res.breakdown.dstc = lt_xy + lt_yx;
        if (w.beta > 0.0) {
            g_ltxy.add_scaled(gt_xy, w.beta);
            g_ltyx.add_scaled(gt_yx, w.beta);
        }
    } else if (w.beta > 0.0) {
        require(false, "translated logits for dstc");
    }

    if (bundle.rtx.present && bundle.rty.present) {
        const PairTerm cpc_x = pointwise_term(bundle.ex.out, bundle.rtx.out, w.pointwise_metric);
        const PairTerm cpc_y = pointwise_term(bundle.ey.out, bundle.rty.out, w.pointwise_metric);
        res.breakdown.cpc = cpc_x.value + cpc_y.value;
        if (w.gamma > 0.0) {
            g_ex.add_scaled(cpc_x.grad_a, w.gamma);
            g_rtx.add_scaled(cpc_x.grad_b, w.gamma);
            g_ey.add_scaled(cpc_y.grad_a, w.gamma);
            g_rty.add_scaled(cpc_y.grad_b, w.gamma);
        }
    } else if (w.gamma > 0.0) {
        require(false, "round trips for cpc");
    }

    if (bundle.lrtx.present && bundle.lrty.present) {
        auto [lr_x, gr_x] = softmax_cross_entropy(bundle.lrtx.out, labels);
        auto [lr_y, gr_y] = softmax_cross_entropy(bundle.lrty.out, labels);
        res.breakdown.cdstc = lr_x + lr_y;
        if (w.delta > 0.0) {
            g_lrtx.add_scaled(gr_x, w.delta);
            g_lrty.add_scaled(gr_y, w.delta);
        }
    } else if (w.delta > 0.0) {
        require(false, "round-trip logits for cdstc");
    }

    res.breakdown.total = res.breakdown.ce + w.alpha * res.breakdown.pc + w.beta * res.breakdown.dstc +
                          w.gamma * res.breakdown.cpc + w.delta * res.breakdown.cdstc;

    // Reverse topological order; every contribution to an activation is
    // accumulated before the module producing it runs backward.
    if (g_lrtx.any) {
        BackwardResult br = mlp_backward(model.c_x, bundle.lrtx.cache, g_lrtx.g);
        accumulate(res.grads.c_x, br.grads);
        g_rtx.add_scaled(br.grad_input, 1.0);
    }
    if (g_lrty.any) {
        BackwardResult br = mlp_backward(model.c_y, bundle.lrty.cache, g_lrty.g);
        accumulate(res.grads.c_y, br.grads);
        g_rty.add_scaled(br.grad_input, 1.0);
    }
    if (g_rtx.any) {
        BackwardResult br = mlp_backward(model.t_yx, bundle.rtx.cache, g_rtx.g);
        accumulate(res.grads.t_yx, br.grads);
        g_txy.add_scaled(br.grad_input, 1.0);
    }
    if (g_rty.any) {
        BackwardResult br = mlp_backward(model.t_xy, bundle.rty.cache, g_rty.g);
        accumulate(res.grads.t_xy, br.grads);
        g_tyx.add_scaled(br.grad_input, 1.0);
    }
    if (g_ltxy.any) {
        BackwardResult br = mlp_backward(model.c_y, bundle.ltxy.cache, g_ltxy.g);
        accumulate(res.grads.c_y, br.grads);
        g_txy.add_scaled(br.grad_input, 1.0);
    }
    if (g_ltyx.any) {
        BackwardResult br = mlp_backward(model.c_x, bundle.ltyx.cache, g_ltyx.g);
        accumulate(res.grads.c_x, br.grads);
        g_tyx.add_scaled(br.grad_input, 1.0);
    }
    if (g_txy.any) {
        BackwardResult br = mlp_backward(model.t_xy, bundle.txy.cache, g_txy.g);
        accumulate(res.grads.t_xy, br.grads);
        g_ex.add_scaled(br.grad_input, 1.0);
    }
    if (g_tyx.any) {
        BackwardResult br = mlp_backward(model.t_yx, bundle.tyx.cache, g_tyx.g);
        accumulate(res.grads.t_yx, br.grads);
        g_ey.add_scaled(br.grad_input, 1.0);
    }
    if (g_lex.any) {
        BackwardResult br = mlp_backward(model.c_x, bundle.lex.cache, g_lex.g);
        accumulate(res.grads.c_x, br.grads);
        g_ex.add_scaled(br.grad_input, 1.0);
    }
    if (g_ley.any) {
        BackwardResult br = mlp_backward(model.c_y, bundle.ley.cache, g_ley.g);
        accumulate(res.grads.c_y, br.grads);
        g_ey.add_scaled(br.grad_input, 1.0);
    }
    if (g_ex.any) {
        BackwardResult br = mlp_backward(model.e_x, bundle.ex.cache, g_ex.g);
        accumulate(res.grads.e_x, br.grads);
    }
    if (g_ey.any) {
        BackwardResult br = mlp_backward(model.e_y, bundle.ey.cache, g_ey.g);
        accumulate(res.grads.e_y, br.grads);
    }

    return res;
}

LossResult loss_ce(DstcModel& model, const Batch& batch) {
    ObjectiveOptions opts;
    opts.weights = {0.0, 0.0, 0.0, 0.0, Metric::Euclidean};
    opts.include_ce = true;
    opts.paths = PathMask::ce_only();
    CombinedResult res = objective(model, batch, opts);
    return {res.breakdown.ce, std::move(res.grads)};
}

LossResult loss_dstc(DstcModel& model, const Batch& batch) {
    ObjectiveOptions opts;
    opts.weights = {0.0, 1.0, 0.0, 0.0, Metric::Euclidean};
    opts.include_ce = false;
    opts.paths = {false, true, true, false, false};
    CombinedResult res = objective(model, batch, opts);
    return {res.breakdown.dstc, std::move(res.grads)};
}

LossResult loss_cdstc(DstcModel& model, const Batch& batch) {
    ObjectiveOptions opts;
    opts.weights = {0.0, 0.0, 0.0, 1.0, Metric::Euclidean};
    opts.include_ce = false;
    opts.paths = {false, true, false, true, true};
    CombinedResult res = objective(model, batch, opts);
    return {res.breakdown.cdstc, std::move(res.grads)};
}

LossResult loss_pc(DstcModel& model, const Batch& batch, Metric metric) {
    ObjectiveOptions opts;
    opts.weights = {1.0, 0.0, 0.0, 0.0, metric};
    opts.include_ce = false;
    opts.paths = {false, true, false, false, false};
    CombinedResult res = objective(model, batch, opts);
    return {res.breakdown.pc, std::move(res.grads)};
}

LossResult loss_cpc(DstcModel& model, const Batch& batch, Metric metric) {
    ObjectiveOptions opts;
    opts.weights = {0.0, 0.0, 1.0, 0.0, metric};
    opts.include_ce = false;
    opts.paths = {false, true, false, true, false};
    CombinedResult res = objective(model, batch, opts);
    return {res.breakdown.cpc, std::move(res.grads)};
}

CombinedResult combined_loss(DstcModel& model, const Batch& batch, const LossWeights& weights) {
    ObjectiveOptions opts;
    opts.weights = weights;
    opts.include_ce = true;
    opts.paths = PathMask::all();
    return objective(model, batch, opts);
}

} // namespace dstc
