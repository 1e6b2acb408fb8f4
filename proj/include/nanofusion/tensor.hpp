#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "nanofusion/common.hpp"

namespace nf {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

// Dense N-dimensional array, row-major. Feature maps use [N, C, H, W].
template <typename T>
struct TensorT {
    Shape shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(Shape s) : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), T(0)) {
        for (int d : shape)
            if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape));
    }
    TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != shape_numel(shape))
            throw ShapeError("tensor data length does not match shape " + shape_str(shape));
    }

    static TensorT zeros(Shape s) { return TensorT(std::move(s)); }
    static TensorT full(Shape s, T v) {
        TensorT t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 4-D accessor for feature maps.
    T& at(int n, int c, int h, int w) {
        return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    const T& at(int n, int c, int h, int w) const {
        return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    // 2-D accessor for feature vectors / weight matrices.
    T& at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    const T& at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

    TensorT reshaped(Shape s) const {
        if (shape_numel(s) != numel())
            throw ShapeError("reshape " + shape_str(shape) + " -> " + shape_str(s) + " changes element count");
        TensorT t;
        t.shape = std::move(s);
        t.data = data;
        return t;
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    bool same_as(const TensorT& o) const { return shape == o.shape && data == o.data; }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
void check_shape(const TensorT<T>& t, const Shape& expect, const std::string& what) {
    if (t.shape != expect)
        throw ShapeError(what + ": expected " + shape_str(expect) + ", got " + shape_str(t.shape));
}

}  // namespace nf
