#include "pcmf/count_matrix.hpp"

#include <cmath>
#include <cstdio>

#include "pcmf/special.hpp"

namespace pcmf {

namespace {

void validate_count(double v, std::size_t i, std::size_t j) {
    if (!std::isfinite(v) || v < 0.0 || std::floor(v) != v) {
        char buf[128];
        std::snprintf(buf, sizeof(buf),
                      "count matrix entry (%zu, %zu) must be a finite non-negative integer", i, j);
        throw input_error(buf);
    }
}

}  // namespace

CountMatrix CountMatrix::from_dense(Mat entries) {
    for (std::size_t i = 0; i < entries.rows(); ++i)
        for (std::size_t j = 0; j < entries.cols(); ++j) validate_count(entries(i, j), i, j);
    return CountMatrix(std::move(entries));
}

CountMatrix CountMatrix::from_coo(
    std::size_t n_rows, std::size_t n_cols,
    const std::vector<std::tuple<std::size_t, std::size_t, double>>& triplets) {
    Mat values(n_rows, n_cols, 0.0);
    std::vector<std::uint8_t> seen(n_rows * n_cols, 0);
    for (const auto& [i, j, v] : triplets) {
        require_input(i < n_rows && j < n_cols, "coordinate entry out of bounds");
        require_input(!seen[i * n_cols + j], "duplicate coordinate entry");
        seen[i * n_cols + j] = 1;
        validate_count(v, i, j);
        values(i, j) = v;
    }
    return CountMatrix(std::move(values));
}

std::size_t CountMatrix::nnz() const {
    std::size_t count = 0;
    const double* p = values_.data();
    for (std::size_t t = 0; t < values_.size(); ++t) count += p[t] != 0.0;
    return count;
}

double CountMatrix::total() const {
    double acc = 0.0;
    const double* p = values_.data();
    for (std::size_t t = 0; t < values_.size(); ++t) acc += p[t];
    return acc;
}

CountMatrix CountMatrix::select_columns(const std::vector<std::uint8_t>& keep) const {
    require_input(keep.size() == n_cols(), "column mask length mismatch");
    std::size_t kept = 0;
    for (auto k : keep) kept += k != 0;
    Mat out(n_rows(), kept);
    for (std::size_t i = 0; i < n_rows(); ++i) {
        std::size_t c = 0;
        for (std::size_t j = 0; j < n_cols(); ++j)
            if (keep[j]) out(i, c++) = values_(i, j);
    }
    return CountMatrix(std::move(out));
}

CellData CellData::build(const CountMatrix& X) {
    CellData d;
    d.n = X.n_rows();
    d.m = X.n_cols();
    d.row_ptr.assign(d.n + 1, 0);
    d.col_ptr.assign(d.m + 1, 0);
    d.nnz_per_col.assign(d.m, 0.0);

    for (std::size_t i = 0; i < d.n; ++i) {
        const double* row = X.row(i);
        for (std::size_t j = 0; j < d.m; ++j) {
            if (row[j] != 0.0) {
                d.col.push_back(static_cast<std::uint32_t>(j));
                d.x.push_back(row[j]);
                d.nnz_per_col[j] += 1.0;
                d.sum_log_fact += log_factorial(row[j]);
            }
            d.total += row[j];
        }
        d.row_ptr[i + 1] = d.col.size();
    }
    d.nnz = d.col.size();

    // CSC view over the CSR cells
    for (std::size_t c = 0; c < d.nnz; ++c) d.col_ptr[d.col[c] + 1] += 1;
    for (std::size_t j = 0; j < d.m; ++j) d.col_ptr[j + 1] += d.col_ptr[j];
    d.row_of.resize(d.nnz);
    d.cell_of.resize(d.nnz);
    std::vector<std::size_t> cursor(d.col_ptr.begin(), d.col_ptr.end() - 1);
    for (std::size_t i = 0; i < d.n; ++i) {
        for (std::size_t c = d.row_ptr[i]; c < d.row_ptr[i + 1]; ++c) {
            const std::size_t j = d.col[c];
            const std::size_t pos = cursor[j]++;
            d.row_of[pos] = static_cast<std::uint32_t>(i);
            d.cell_of[pos] = c;
        }
    }
    return d;
}

}  // namespace pcmf
