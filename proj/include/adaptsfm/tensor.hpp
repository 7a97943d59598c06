#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace adaptsfm {

/**
 * Dense row-major tensor of doubles.
 *
 * Small by design: shape + flat storage + indexing. All heavy lifting
 * (matmul, convolutions) lives in free functions or in the autodiff ops.
 */
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double value);
    static Tensor eye(int n);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> flat() { return {data_.data(), data_.size()}; }
    std::span<const double> flat() const { return {data_.data(), data_.size()}; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // 2-D / 3-D accessors; callers guarantee rank.
    double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    double& at(int i, int j, int k) {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    double at(int i, int j, int k) const {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    void fill(double value);
    bool all_finite() const;
    double max_abs() const;

    Tensor reshaped(std::vector<int> new_shape) const;

    std::string shape_str() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

/// C = A·B for 2-D tensors (M×K)·(K×N).
Tensor matmul(const Tensor& a, const Tensor& b);
/// y = M·x for a 2-D matrix and a 1-D vector.
Tensor matvec(const Tensor& m, const Tensor& x);
/// 2-D transpose.
Tensor transpose(const Tensor& a);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, double s);

/// Largest |a-b| over all entries; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Uniformly random tensor in [lo, hi) from the given stream.
Tensor random_uniform(std::vector<int> shape, class Rng& rng, double lo, double hi);
/// Gaussian-random tensor.
Tensor random_normal(std::vector<int> shape, class Rng& rng, double mean, double stddev);

} // namespace adaptsfm
