#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vicon {

using Shape = std::vector<int64_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d <= 0) throw std::invalid_argument("tensor dimension must be positive, got shape " + shape_str(s));
        n *= d;
    }
    return n;
}

/// Dense row-major tensor of real scalars.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), T(0)) {}
    Tensor(Shape s, T fill) : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), fill) {}
    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (numel_of(shape) != static_cast<int64_t>(data.size())) {
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        }
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t ndim() const { return static_cast<int64_t>(shape.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }

    // 2-D accessors; most of the model works on [rows, cols] matrices.
    int64_t rows() const { return shape.at(0); }
    int64_t cols() const { return shape.at(1); }
    T& at2(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
    const T& at2(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

    // 3-D accessor for [nx, ny, channels] fields.
    T& at3(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    const T& at3(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (T v : t.data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

template <typename T>
void require_finite(const Tensor<T>& t, const char* where) {
    if (!all_finite(t)) {
        throw std::runtime_error(std::string("non-finite values produced by ") + where);
    }
}

/// Boolean attention mask over a [rows, cols] score matrix; 1 = position may attend.
struct Mask {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<uint8_t> allowed;

    Mask() = default;
    Mask(int64_t r, int64_t c, uint8_t fill = 0)
        : rows(r), cols(c), allowed(static_cast<size_t>(r * c), fill) {}

    uint8_t at(int64_t r, int64_t c) const { return allowed[static_cast<size_t>(r * cols + c)]; }
    void set(int64_t r, int64_t c, uint8_t v) { allowed[static_cast<size_t>(r * cols + c)] = v; }

    bool operator==(const Mask& o) const {
        return rows == o.rows && cols == o.cols && allowed == o.allowed;
    }
};

}  // namespace vicon
