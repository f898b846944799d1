#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepsquare {

// Thrown for every contract violation detected before an operation runs
// (shape mismatch, out-of-range argument, malformed config).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense fp64 tensor, row-major. Feature maps are laid out N x H x W x C.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
    static Tensor vector(std::initializer_list<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double item() const;

    bool has_grad() const noexcept { return !grad_.empty(); }
    std::span<double> grad();  // allocates a zero buffer on first use
    std::span<const double> grad() const noexcept { return grad_; }
    void zero_grad();
    void clear_grad() { grad_.clear(); }

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

    Tensor reshaped(Shape shape) const;
    bool all_finite() const;

private:
    Shape shape_;
    std::vector<double> data_;
    std::vector<double> grad_;
    bool requires_grad_ = false;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace deepsquare
