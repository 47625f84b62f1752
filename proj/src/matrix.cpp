#include "dstc/matrix.hpp"

#include <cmath>
#include <string>

namespace dstc {

namespace {

std::string shape_str(const DenseMatrix& m) {
    return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

} // namespace

DenseMatrix DenseMatrix::identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.rows) {
        throw DimensionError("matmul: inner dims disagree, " + shape_str(a) + " x " + shape_str(b));
    }
    DenseMatrix out(a.rows, b.cols);
    // ikj order keeps the b walk contiguous.
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        double* orow = out.data.data() + i * out.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) {
                continue;
            }
            const double* brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) {
                orow[j] += aik * brow[j];
            }
        }
    }
    return out;
}

DenseMatrix matmul_at_b(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows != b.rows) {
        throw DimensionError("matmul_at_b: row counts disagree, " + shape_str(a) + " vs " + shape_str(b));
    }
    DenseMatrix out(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* arow = a.data.data() + k * a.cols;
        const double* brow = b.data.data() + k * b.cols;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) {
                continue;
            }
            double* orow = out.data.data() + i * out.cols;
            for (std::size_t j = 0; j < b.cols; ++j) {
                orow[j] += aki * brow[j];
            }
        }
    }
    return out;
}

DenseMatrix matmul_a_bt(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.cols) {
        throw DimensionError("matmul_a_bt: col counts disagree, " + shape_str(a) + " vs " + shape_str(b));
    }
    DenseMatrix out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        double* orow = out.data.data() + i * out.cols;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.data.data() + j * b.cols;
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) {
                acc += arow[k] * brow[k];
            }
            orow[j] = acc;
        }
    }
    return out;
}

DenseMatrix transpose(const DenseMatrix& m) {
    DenseMatrix out(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            out(j, i) = m(i, j);
        }
    }
    return out;
}

DenseMatrix elementwise(EwOp op, const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("elementwise: shapes disagree, " + shape_str(a) + " vs " + shape_str(b));
    }
    DenseMatrix out(a.rows, a.cols);
    const std::size_t n = a.size();
    switch (op) {
    case EwOp::Add:
        for (std::size_t i = 0; i < n; ++i) out.data[i] = a.data[i] + b.data[i];
        break;
    case EwOp::Sub:
        for (std::size_t i = 0; i < n; ++i) out.data[i] = a.data[i] - b.data[i];
        break;
    case EwOp::Mul:
        for (std::size_t i = 0; i < n; ++i) out.data[i] = a.data[i] * b.data[i];
        break;
    case EwOp::Div:
        for (std::size_t i = 0; i < n; ++i) out.data[i] = a.data[i] / b.data[i];
        break;
    }
    return out;
}

DenseMatrix elementwise(EwOp op, const DenseMatrix& a, double b) {
    DenseMatrix out(a.rows, a.cols);
    const std::size_t n = a.size();
    switch (op) {
    case EwOp::Add:
        for (std::size_t i = 0; i < n; ++i) out.data[i] = a.data[i] + b;
        break;
    case EwOp::Sub:
        for (std::size_t i = 0; i < n; ++i) out.data[i] = a.data[i] - b;
        break;
    case EwOp::Mul:
        for (std::size_t i = 0; i < n; ++i) out.data[i] = a.data[i] * b;
        break;
    case EwOp::Div:
        for (std::size_t i = 0; i < n; ++i) out.data[i] = a.data[i] / b;
        break;
    }
    return out;
}

DenseMatrix l2_normalize_rows(const DenseMatrix& m, double eps) {
    if (eps <= 0.0) {
        throw ConfigError("l2_normalize_rows: eps must be positive");
    }
    DenseMatrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* src = m.data.data() + i * m.cols;
        double* dst = out.data.data() + i * m.cols;
        double sq = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            sq += src[j] * src[j];
        }
        // Rows already unit up to accumulated rounding pass through
        // unchanged, making normalization exactly idempotent.
        if (std::abs(sq - 1.0) <= 1e-10) {
            for (std::size_t j = 0; j < m.cols; ++j) {
                dst[j] = src[j];
            }
            continue;
        }
        const double inv = 1.0 / std::max(std::sqrt(sq), eps);
        for (std::size_t j = 0; j < m.cols; ++j) {
            dst[j] = src[j] * inv;
        }
    }
    return out;
}

std::vector<double> row_norms(const DenseMatrix& m) {
    std::vector<double> norms(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            sq += m(i, j) * m(i, j);
        }
        norms[i] = std::sqrt(sq);
    }
    return norms;
}

bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

bool all_finite(const DenseMatrix& m) {
    return all_finite(std::span<const double>(m.data));
}

} // namespace dstc
