#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace vidguide {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float64 tensor. Immutable once constructed: kernels build a
// fresh std::vector and hand it over.
class Tensor {
   public:
    Tensor() : shape_{0} {}
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape);
    static Tensor filled(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor from(std::initializer_list<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& vec() const noexcept { return data_; }
    double operator[](std::size_t i) const { return data_[i]; }
    double item() const;

    Tensor reshaped(Shape shape) const;

    bool all_finite() const noexcept;
    double max_abs() const noexcept;
    double l2_norm() const noexcept;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

   private:
    Shape shape_;
    std::vector<double> data_;
};

// Bitwise equality, distinguishing -0.0 from 0.0 and matching NaN payloads.
bool bit_identical(const Tensor& a, const Tensor& b);

}  // namespace vidguide
