#include "slca/tensor.hpp"

#include <cmath>
#include <sstream>

namespace slca {

std::string shape_to_string(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

namespace {
void validate_shape(const Shape& s) {
    for (auto e : s) {
        if (e <= 0) {
            throw ShapeError("tensor extents must be positive, got " + shape_to_string(s));
        }
    }
}
}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
        throw ShapeError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_to_string(shape_));
    }
    check_finite("tensor construction");
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

std::int64_t Tensor::spatial_numel() const {
    std::int64_t n = 1;
    for (std::size_t i = 1; i < shape_.size(); ++i) n *= shape_[i];
    return n;
}

void Tensor::fill(double v) {
    for (auto& x : data_) x = v;
}

bool Tensor::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

void Tensor::check_finite(const std::string& context) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i])) {
            throw ValueError("non-finite value at flat index " + std::to_string(i) +
                             " during " + context);
        }
    }
}

}  // namespace slca
