#include "deepsquare/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace deepsquare {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

static void check_shape(const Shape& shape) {
    if (shape.empty()) throw Error("tensor shape must have at least one axis");
    for (auto d : shape)
        if (d == 0) throw Error("tensor extents must be positive, got " + shape_string(shape));
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_numel(shape_) != data_.size())
        throw Error("data length " + std::to_string(data_.size()) + " does not match shape " +
                    shape_string(shape_));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> flat;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
        if (r.size() != cols) throw Error("ragged matrix literal");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), cols}, std::move(flat));
}

double Tensor::item() const {
    if (data_.size() != 1) throw Error("item() requires a single-element tensor, got " + shape_string(shape_));
    return data_[0];
}

std::span<double> Tensor::grad() {
    if (grad_.empty()) grad_.assign(data_.size(), 0.0);
    return grad_;
}

void Tensor::zero_grad() {
    grad_.assign(data_.size(), 0.0);
}

Tensor Tensor::reshaped(Shape shape) const {
    Tensor t(std::move(shape), data_);
    t.requires_grad_ = requires_grad_;
    return t;
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace deepsquare
