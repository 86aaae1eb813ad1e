#include "archtune/numkernel/ndarray.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace archtune::nk {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

NdArray::NdArray(Shape shape, double fill) : shape_(std::move(shape)) {
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (shape_[i] == 0) throw ShapeError("dimension " + std::to_string(i) + " is zero");
    }
    data_.assign(shape_size(shape_), fill);
}

NdArray::NdArray(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (shape_[i] == 0) throw ShapeError("dimension " + std::to_string(i) + " is zero");
    }
    if (shape_size(shape_) != data_.size()) {
        throw ShapeError("shape " + shape_to_string(shape_) + " does not match buffer length " +
                         std::to_string(data_.size()));
    }
}

std::size_t NdArray::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(shape_.size()));
    }
    return shape_[axis];
}

double NdArray::item() const {
    if (data_.size() != 1) throw ShapeError("item() on array of size " + std::to_string(data_.size()));
    return data_[0];
}

void NdArray::fill(double v) {
    std::fill(data_.begin(), data_.end(), v);
}

bool NdArray::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

NdArray NdArray::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    return NdArray(std::move(shape), data_);
}

std::uint64_t NdArray::checksum() const noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    for (double v : data_) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof(double));
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

}  // namespace archtune::nk
