#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vot/errors.hpp"

namespace vot {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

// Dense row-major tensor. Values are immutable once handed to a tape;
// mutation happens only on freshly built tensors.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), T(0)) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
            throw ShapeError("data length does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }
    static Tensor ones(Shape s) { return full(std::move(s), T(1)); }
    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    const Shape& shape() const { return shape_; }
    int dim() const { return static_cast<int>(shape_.size()); }
    int size(int axis) const { return shape_.at(static_cast<size_t>(axis)); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    T& at(std::initializer_list<int> idx) { return data_[static_cast<size_t>(offset(idx))]; }
    const T& at(std::initializer_list<int> idx) const {
        return data_[static_cast<size_t>(offset(idx))];
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
        return out;
    }

    bool all_finite() const {
        if constexpr (std::is_floating_point_v<T>) {
            for (const T& v : data_)
                if (!std::isfinite(v)) return false;
        }
        return true;
    }

    // Bit-exact equality (shape and every value).
    bool same(const Tensor& o) const {
        return shape_ == o.shape_ && data_ == o.data_;
    }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel())
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(s) +
                             " changes element count");
        Tensor out = *this;
        out.shape_ = std::move(s);
        return out;
    }

private:
    std::int64_t offset(std::initializer_list<int> idx) const {
        if (static_cast<int>(idx.size()) != dim())
            throw ShapeError("index rank mismatch for shape " + shape_str(shape_));
        std::int64_t off = 0;
        int axis = 0;
        for (int i : idx) {
            off = off * shape_[static_cast<size_t>(axis)] + i;
            ++axis;
        }
        return off;
    }

    Shape shape_;
    std::vector<T> data_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace vot
