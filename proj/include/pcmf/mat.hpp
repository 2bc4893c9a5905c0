#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "pcmf/common.hpp"

namespace pcmf {

// Dense row-major matrix of doubles. Rows are contiguous so per-row kernels
// can operate on raw spans.
class Mat {
  public:
    Mat() : rows_(0), cols_(0) {}
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    void fill(double v) { data_.assign(data_.size(), v); }

    bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool operator==(const Mat& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

  private:
    std::size_t rows_, cols_;
    std::vector<double> data_;
};

// max(||A - B||_F / ||B||_F) building block: relative Frobenius gap with the
// previous iterate as reference. Returns +inf if the reference has zero norm
// and the difference does not.
inline double relative_frobenius_gap(const Mat& cur, const Mat& prev) {
    double num = 0.0, den = 0.0;
    const double* a = cur.data();
    const double* b = prev.data();
    for (std::size_t t = 0; t < cur.size(); ++t) {
        const double d = a[t] - b[t];
        num += d * d;
        den += b[t] * b[t];
    }
    if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return std::sqrt(num / den);
}

}  // namespace pcmf
