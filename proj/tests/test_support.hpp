#pragma once

// Shared oracles for the test suites. Everything here is written
// independently of the library kernels it checks: plain index loops, no
// calls into the implementation being verified.

#include <cmath>
#include <functional>
#include <vector>

#include "dstc/losses.hpp"
#include "dstc/matrix.hpp"
#include "dstc/model.hpp"
#include "dstc/nn.hpp"
#include "dstc/rng.hpp"

namespace testsupport {

// Naive ijk product with an explicit accumulator.
inline dstc::DenseMatrix naive_matmul(const dstc::DenseMatrix& a, const dstc::DenseMatrix& b) {
    dstc::DenseMatrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) {
                acc += a(i, k) * b(k, j);
            }
            out(i, j) = acc;
        }
    }
    return out;
}

// Brute-force AP: for every relevant rank, recount the hits above it from
// scratch, then average over the total number of positives.
inline double brute_force_ap(const std::vector<std::size_t>& ranking, const std::vector<char>& relevant) {
    std::size_t total_relevant = 0;
    for (char r : relevant) {
        if (r) {
            ++total_relevant;
        }
    }
    double sum = 0.0;
    for (std::size_t r = 0; r < ranking.size(); ++r) {
        if (!relevant[ranking[r]]) {
            continue;
        }
        std::size_t hits = 0;
        for (std::size_t q = 0; q <= r; ++q) {
            if (relevant[ranking[q]]) {
                ++hits;
            }
        }
        sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    return sum / static_cast<double>(total_relevant);
}

// Unstabilized softmax cross entropy, straight from the definition.
inline double naive_cross_entropy(const dstc::DenseMatrix& logits, const std::vector<int>& labels) {
    double loss = 0.0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        double denom = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) {
            denom += std::exp(logits(i, j));
        }
        const double p = std::exp(logits(i, static_cast<std::size_t>(labels[i]))) / denom;
        loss -= std::log(p);
    }
    return loss / static_cast<double>(logits.rows);
}

// Independent per-sample MLP forward: scalar loops, batch statistics
// recomputed directly.
inline dstc::DenseMatrix naive_mlp_forward(const dstc::Mlp& net, const dstc::DenseMatrix& input,
                                           bool train_mode) {
    dstc::DenseMatrix cur = input;
    for (const dstc::Layer& layer : net.layers) {
        if (const auto* lin = std::get_if<dstc::LinearLayer>(&layer)) {
            dstc::DenseMatrix next(cur.rows, lin->out_dim());
            for (std::size_t i = 0; i < cur.rows; ++i) {
                for (std::size_t j = 0; j < lin->out_dim(); ++j) {
                    double acc = lin->bias[j];
                    for (std::size_t k = 0; k < lin->in_dim(); ++k) {
                        acc += cur(i, k) * lin->weight(k, j);
                    }
                    next(i, j) = acc;
                }
            }
            cur = next;
        } else if (const auto* bn = std::get_if<dstc::BatchNormLayer>(&layer)) {
            dstc::DenseMatrix next(cur.rows, cur.cols);
            for (std::size_t j = 0; j < cur.cols; ++j) {
                double mean = bn->running_mean[j];
                double var = bn->running_var[j];
                if (train_mode) {
                    mean = 0.0;
                    for (std::size_t i = 0; i < cur.rows; ++i) {
                        mean += cur(i, j);
                    }
                    mean /= static_cast<double>(cur.rows);
                    var = 0.0;
                    for (std::size_t i = 0; i < cur.rows; ++i) {
                        var += (cur(i, j) - mean) * (cur(i, j) - mean);
                    }
                    var /= static_cast<double>(cur.rows);
                }
                for (std::size_t i = 0; i < cur.rows; ++i) {
                    next(i, j) =
                        bn->gamma[j] * (cur(i, j) - mean) / std::sqrt(var + bn->eps) + bn->beta[j];
                }
            }
            cur = next;
        } else {
            for (double& v : cur.data) {
                v = std::max(v, 0.0);
            }
        }
    }
    return cur;
}

// Central finite differences over every parameter of a net. `loss` must be
// a pure function of the current parameter values.
inline void finite_difference_params(dstc::Mlp& net, const std::function<double()>& loss,
                                     const std::function<void(std::size_t, double, double)>& report,
                                     double h = 1e-6) {
    std::size_t flat_index = 0;
    auto probe = [&](std::vector<double>& params) {
        for (double& p : params) {
            const double saved = p;
            p = saved + h;
            const double up = loss();
            p = saved - h;
            const double down = loss();
            p = saved;
            report(flat_index++, (up - down) / (2.0 * h), saved);
        }
    };
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

// Flattens analytic gradients in the same order finite_difference_params
// walks the parameters.
inline std::vector<double> flatten_grads(const dstc::MlpGrads& grads) {
    std::vector<double> flat;
    for (const dstc::LayerGrads& lg : grads.layers) {
        if (const auto* l = std::get_if<dstc::LinearGrads>(&lg)) {
            flat.insert(flat.end(), l->weight.data.begin(), l->weight.data.end());
            flat.insert(flat.end(), l->bias.begin(), l->bias.end());
        } else if (const auto* b = std::get_if<dstc::BatchNormGrads>(&lg)) {
            flat.insert(flat.end(), b->gamma.begin(), b->gamma.end());
            flat.insert(flat.end(), b->beta.begin(), b->beta.end());
        }
    }
    return flat;
}

// Relative error with a unit floor, so tiny gradients are compared
// absolutely.
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline dstc::DenseMatrix random_matrix(std::size_t rows, std::size_t cols, dstc::Rng& rng,
                                       double scale = 1.0) {
    dstc::DenseMatrix m(rows, cols);
    for (double& v : m.data) {
        v = scale * rng.next_normal();
    }
    return m;
}

// Fills a batch with gaussian features and cycling labels.
inline dstc::Batch random_batch(std::size_t n, std::size_t d1, std::size_t d2, int num_classes,
                                dstc::Rng& rng) {
    dstc::Batch batch;
    batch.num_classes = num_classes;
    batch.x = random_matrix(n, d1, rng);
    batch.y = random_matrix(n, d2, rng);
    batch.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        batch.labels[i] = static_cast<int>(i) % num_classes;
    }
    return batch;
}

// Moves every linear bias off zero. Zero biases can park a whole layer
// output exactly on the ReLU kink (a dead incoming row reproduces the bias
// verbatim), where finite differences cannot match any subgradient
// convention. Gradient-check nets therefore use generic biases.
inline void randomize_biases(dstc::Mlp& net, dstc::Rng& rng) {
    for (dstc::Layer& layer : net.layers) {
        if (auto* lin = std::get_if<dstc::LinearLayer>(&layer)) {
            for (double& b : lin->bias) {
                b = rng.next_uniform(0.05, 0.3) * (rng.next_index(2) == 0 ? 1.0 : -1.0);
            }
        }
    }
}

// A small random model for gradient checks; equal embed dims, batchnorm in
// encoders and translators, generic nonzero biases.
inline dstc::DstcModel random_tiny_model(std::size_t d1, std::size_t d2, std::size_t embed,
                                         int num_classes, std::uint64_t seed) {
    dstc::ArchPreset preset;
    preset.name = "custom";
    preset.enc_x = {{d1, embed + 2, embed}, {true}};
    preset.enc_y = {{d2, embed + 1, embed}, {true}};
    preset.cls_x = {{embed, static_cast<std::size_t>(num_classes)}, {}};
    preset.cls_y = {{embed, static_cast<std::size_t>(num_classes)}, {}};
    preset.tr_xy = {{embed, embed / 2 + 1, embed}, {true}};
    preset.tr_yx = {{embed, embed / 2 + 1, embed}, {true}};
    dstc::DstcModel model = dstc::build_model(preset, num_classes, d1, d2, seed);
    dstc::Rng rng(seed ^ 0x5eedb1a5ULL);
    for (dstc::Subnet which : dstc::kAllSubnets) {
        randomize_biases(model.subnet(which), rng);
    }
    return model;
}

} // namespace testsupport
