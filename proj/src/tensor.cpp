#include "adaptsfm/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

#include "adaptsfm/errors.hpp"
#include "adaptsfm/rng.hpp"

namespace adaptsfm {

namespace {
std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw InvalidInputError("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
} // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
        throw InvalidInputError("tensor data size does not match shape " + shape_str());
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::eye(int n) {
    Tensor t({n, n});
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

void Tensor::fill(double value) {
    for (auto& x : data_) x = value;
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double x : data_) m = std::max(m, std::abs(x));
    return m;
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
    if (static_cast<std::int64_t>(shape_numel(new_shape)) != numel())
        throw InvalidInputError("reshape changes element count");
    Tensor t = *this;
    t.shape_ = std::move(new_shape);
    return t;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw InvalidInputError("matmul shape mismatch " + a.shape_str() + " x " + b.shape_str());
    Tensor c({a.dim(0), b.dim(1)});
    CMapMat ma(a.data(), a.dim(0), a.dim(1));
    CMapMat mb(b.data(), b.dim(0), b.dim(1));
    MapMat mc(c.data(), c.dim(0), c.dim(1));
    mc.noalias() = ma * mb;
    return c;
}

Tensor matvec(const Tensor& m, const Tensor& x) {
    if (m.ndim() != 2 || x.ndim() != 1 || m.dim(1) != x.dim(0))
        throw InvalidInputError("matvec shape mismatch " + m.shape_str() + " x " + x.shape_str());
    Tensor y({m.dim(0)});
    for (int i = 0; i < m.dim(0); ++i) {
        double acc = 0.0;
        for (int j = 0; j < m.dim(1); ++j) acc += m.at(i, j) * x[j];
        y[i] = acc;
    }
    return y;
}

Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw InvalidInputError("transpose expects 2-D tensor");
    Tensor t({a.dim(1), a.dim(0)});
    for (int i = 0; i < a.dim(0); ++i)
        for (int j = 0; j < a.dim(1); ++j) t.at(j, i) = a.at(i, j);
    return t;
}

Tensor operator+(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw InvalidInputError("tensor add shape mismatch");
    Tensor c = a;
    for (std::int64_t i = 0; i < c.numel(); ++i) c[i] += b[i];
    return c;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw InvalidInputError("tensor sub shape mismatch");
    Tensor c = a;
    for (std::int64_t i = 0; i < c.numel(); ++i) c[i] -= b[i];
    return c;
}

Tensor operator*(const Tensor& a, double s) {
    Tensor c = a;
    for (std::int64_t i = 0; i < c.numel(); ++i) c[i] *= s;
    return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw InvalidInputError("max_abs_diff shape mismatch");
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Tensor random_uniform(std::vector<int> shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

Tensor random_normal(std::vector<int> shape, Rng& rng, double mean, double stddev) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(mean, stddev);
    return t;
}

} // namespace adaptsfm
