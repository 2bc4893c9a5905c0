#pragma once

#include <cstdint>
#include <tuple>
#include <vector>

#include "pcmf/common.hpp"
#include "pcmf/mat.hpp"

namespace pcmf {

// cells x genes matrix of non-negative integer counts (stored as doubles so
// downstream arithmetic needs no conversions). Constructible from dense
// entries or from a coordinate list with explicit dimensions; both normalize
// to the same internal state, so every operation treats them identically.
class CountMatrix {
  public:
    CountMatrix() = default;

    static CountMatrix from_dense(Mat entries);
    // triplets: (row, col, count); duplicate coordinates are rejected
    static CountMatrix from_coo(std::size_t n_rows, std::size_t n_cols,
                                const std::vector<std::tuple<std::size_t, std::size_t, double>>& triplets);

    std::size_t n_rows() const { return values_.rows(); }
    std::size_t n_cols() const { return values_.cols(); }
    double operator()(std::size_t i, std::size_t j) const { return values_(i, j); }
    const Mat& dense() const { return values_; }
    const double* row(std::size_t i) const { return values_.row(i); }

    std::size_t nnz() const;
    double total() const;
    bool all_zero() const { return nnz() == 0; }

    // keep[j] == true keeps column j; row count is preserved
    CountMatrix select_columns(const std::vector<std::uint8_t>& keep) const;

  private:
    explicit CountMatrix(Mat values) : values_(std::move(values)) {}
    Mat values_;
};

// Immutable nonzero structure used by the inference loops: CSR and CSC views
// over the same cell list, plus per-matrix constants.
struct CellData {
    std::size_t n = 0, m = 0, nnz = 0;

    // CSR: cells grouped by row
    std::vector<std::uint32_t> col;    // column of each nonzero cell
    std::vector<double> x;             // count of each nonzero cell
    std::vector<std::size_t> row_ptr;  // n + 1

    // CSC: indices into the CSR arrays, grouped by column
    std::vector<std::uint32_t> row_of;   // row of each CSC entry
    std::vector<std::size_t> cell_of;    // CSR position of each CSC entry
    std::vector<std::size_t> col_ptr;    // m + 1

    std::vector<double> nnz_per_col;  // number of nonzero cells per column
    double sum_log_fact = 0.0;        // sum over nonzero cells of log(x!)
    double total = 0.0;               // sum of all counts

    static CellData build(const CountMatrix& X);
};

}  // namespace pcmf
