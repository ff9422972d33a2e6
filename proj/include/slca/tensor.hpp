#ifndef SLCA_TENSOR_HPP
#define SLCA_TENSOR_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace slca {

// Thrown when tensor shapes do not conform; message carries both shapes.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Thrown on invalid values (non-finite data, bad labels, bad config).
class ValueError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Thrown when a file cannot be opened, read, or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::int64_t>;

std::string shape_to_string(const Shape& s);
std::int64_t shape_numel(const Shape& s);

// Dense real tensor, channel-first: shape = [C, S...] with the last spatial
// axis fastest. Rank-1 tensors ([K]) carry vectors (pooled features, biases).
// Storage is 64-bit; checkpoint serialization narrows to f32.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);  // zero-filled
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double value);

    const Shape& shape() const { return shape_; }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

    std::int64_t channels() const { return shape_.empty() ? 0 : shape_[0]; }
    // Spatial extents (everything after the channel axis).
    Shape spatial() const { return Shape(shape_.begin() + 1, shape_.end()); }
    std::int64_t spatial_numel() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    void fill(double v);

    bool all_finite() const;
    // Throws ValueError if any element is NaN/Inf.
    void check_finite(const std::string& context) const;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Integer class labels over a spatial grid (0 background, 1 necrosis and
// non-enhancing, 2 edema, 3 enhancing).
struct LabelVolume {
    Shape spatial;
    std::vector<std::uint8_t> values;

    std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
};

}  // namespace slca

#endif
