#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace nefes {

// Dense row-major 2D array of doubles. 1D data uses cols=1 or rows=1;
// scalars are 1x1. Image-like data stores rows = h*w, cols = channels,
// with the spatial extent tracked by the caller.
class Tensor {
  public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    static Tensor scalar(double v) {
        Tensor t(1, 1);
        t.data_[0] = v;
        return t;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double item() const {
        assert(size() == 1);
        return data_[0];
    }

    void fill(double v) { data_.assign(data_.size(), v); }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

}  // namespace nefes
