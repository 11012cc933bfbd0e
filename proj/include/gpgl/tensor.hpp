#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gpgl/errors.hpp"

namespace gpgl {

// Dense row-major tensor of 64-bit floats. The ops in autodiff.hpp only
// produce rank 0 (scalar), rank 1 (vector) and rank 2 (matrix) values.
// Immutable by convention once handed to a Tape.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<long> shape)
        : shape_(std::move(shape)), v_(count(shape_), 0.0) {}

    Tensor(std::vector<long> shape, std::vector<double> values)
        : shape_(std::move(shape)), v_(std::move(values)) {
        if (static_cast<long>(v_.size()) != count(shape_))
            throw ShapeError("Tensor: " + std::to_string(v_.size()) +
                             " values for shape " + shape_str());
    }

    static Tensor scalar(double v) { return Tensor({}, {v}); }

    static Tensor vector(std::vector<double> values) {
        const long n = static_cast<long>(values.size());
        return Tensor({n}, std::move(values));
    }

    static Tensor matrix(long rows, long cols, std::vector<double> values) {
        return Tensor({rows, cols}, std::move(values));
    }

    static Tensor zeros(std::vector<long> shape) { return Tensor(std::move(shape)); }

    [[nodiscard]] long rank() const { return static_cast<long>(shape_.size()); }
    [[nodiscard]] long size() const { return static_cast<long>(v_.size()); }
    [[nodiscard]] const std::vector<long>& shape() const { return shape_; }

    [[nodiscard]] long rows() const {
        if (rank() == 2) return shape_[0];
        if (rank() == 1) return 1;
        throw ShapeError("Tensor::rows on rank-" + std::to_string(rank()) + " tensor");
    }
    [[nodiscard]] long cols() const {
        if (rank() == 2) return shape_[1];
        if (rank() == 1) return shape_[0];
        throw ShapeError("Tensor::cols on rank-" + std::to_string(rank()) + " tensor");
    }

    double& operator[](long i) { return v_[static_cast<size_t>(i)]; }
    double operator[](long i) const { return v_[static_cast<size_t>(i)]; }

    double& operator()(long i, long j) { return v_[static_cast<size_t>(i * shape_[1] + j)]; }
    double operator()(long i, long j) const { return v_[static_cast<size_t>(i * shape_[1] + j)]; }

    [[nodiscard]] double item() const {
        if (size() != 1)
            throw ShapeError("Tensor::item on tensor of shape " + shape_str());
        return v_[0];
    }

    double* data() { return v_.data(); }
    [[nodiscard]] const double* data() const { return v_.data(); }
    [[nodiscard]] const std::vector<double>& values() const { return v_; }

    [[nodiscard]] bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    [[nodiscard]] bool all_finite() const {
        for (double x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    [[nodiscard]] std::string shape_str() const {
        std::ostringstream os;
        os << '(';
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) os << 'x';
            os << shape_[i];
        }
        os << ')';
        return os.str();
    }

  private:
    static long count(const std::vector<long>& shape) {
        long n = 1;
        for (long d : shape) n *= d;
        return n;
    }

    std::vector<long> shape_;
    std::vector<double> v_;
};

}  // namespace gpgl
