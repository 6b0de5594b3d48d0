#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mirf {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major f64 tensor. Rank is whatever the shape says; most of the
// engine works with rank 1 and 2.
class Tensor {
public:
    Tensor() = default;

    Tensor(std::vector<int64_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        if (static_cast<int64_t>(data_.size()) != numel_from_shape())
            throw Error("tensor: data length " + std::to_string(data_.size()) +
                        " does not match shape (numel " + std::to_string(numel_from_shape()) + ")");
    }

    static Tensor zeros(std::vector<int64_t> shape) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.check_shape();
        t.data_.assign(static_cast<size_t>(t.numel_from_shape()), 0.0);
        return t;
    }

    static Tensor full(std::vector<int64_t> shape, double v) {
        Tensor t = zeros(std::move(shape));
        for (double& x : t.data_) x = v;
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }

    int64_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    int64_t cols() const { return rank() == 1 ? 1 : shape_[1]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * cols() + j)]; }
    double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * cols() + j)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    int64_t numel_from_shape() const {
        int64_t n = 1;
        for (int64_t e : shape_) n *= e;
        return shape_.empty() ? 0 : n;
    }
    void check_shape() const {
        if (shape_.empty()) throw Error("tensor: empty shape");
        for (int64_t e : shape_)
            if (e <= 0) throw Error("tensor: non-positive extent in shape");
    }

    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

// Per-pixel integer label map, 0 = unlabeled/background.
struct LabelImage {
    int width = 0;
    int height = 0;
    std::vector<int32_t> ids;

    LabelImage() = default;
    LabelImage(int w, int h) : width(w), height(h), ids(static_cast<size_t>(w) * h, 0) {}

    int32_t& at(int u, int v) { return ids[static_cast<size_t>(v) * width + u]; }
    int32_t at(int u, int v) const { return ids[static_cast<size_t>(v) * width + u]; }
    size_t size() const { return ids.size(); }
};

}  // namespace mirf
