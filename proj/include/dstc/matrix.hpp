#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dstc/errors.hpp"

namespace dstc {

// Row-major dense 2-D matrix of 64-bit reals. Rows are samples everywhere
// in this library. Values are treated as immutable once an operation has
// returned them; kernels are single-threaded and bit-deterministic.
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data; // rows * cols entries

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    static DenseMatrix identity(std::size_t n);

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }
};

enum class EwOp { Add, Sub, Mul, Div };

// a (m x k) times b (k x n). Throws DimensionError naming both shapes.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

// a^T * b, used for weight gradients without materializing the transpose.
DenseMatrix matmul_at_b(const DenseMatrix& a, const DenseMatrix& b);

// a * b^T, used for input gradients.
DenseMatrix matmul_a_bt(const DenseMatrix& a, const DenseMatrix& b);

DenseMatrix transpose(const DenseMatrix& m);

// Entrywise op on equally shaped matrices.
DenseMatrix elementwise(EwOp op, const DenseMatrix& a, const DenseMatrix& b);

// Entrywise op against a scalar broadcast to every entry.
DenseMatrix elementwise(EwOp op, const DenseMatrix& a, double b);

// Each row divided by max(its l2 norm, eps). eps must be positive.
DenseMatrix l2_normalize_rows(const DenseMatrix& m, double eps = 1e-12);

std::vector<double> row_norms(const DenseMatrix& m);

bool all_finite(const DenseMatrix& m);
bool all_finite(std::span<const double> v);

} // namespace dstc
