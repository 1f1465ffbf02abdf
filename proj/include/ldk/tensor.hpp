#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "ldk/common.hpp"

namespace ldk {

// Dense row-major tensor. Rank is dynamic; images and latents use
// [C,H,W] or batched [N,C,H,W], matrices [R,C], vectors [D].
using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {
        for (int d : shape_)
            LDK_CHECK(d >= 1, ErrKind::shape, "tensor", "non-positive dim in " + shape_str(shape_));
    }
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        LDK_CHECK(static_cast<int64_t>(data_.size()) == shape_numel(shape_), ErrKind::shape, "tensor",
                  "data size does not match " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // [N,C,H,W] addressing
    T& at4(int n, int c, int h, int w) {
        return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at4(int n, int c, int h, int w) const {
        return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    // [C,H,W] addressing
    T& at3(int c, int h, int w) {
        return data_[(static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }
    const T& at3(int c, int h, int w) const {
        return data_[(static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }

    Tensor reshaped(Shape s) const {
        LDK_CHECK(shape_numel(s) == size(), ErrKind::shape, "tensor",
                  "reshape " + shape_str(shape_) + " -> " + shape_str(s));
        Tensor out = *this;
        out.shape_ = std::move(s);
        return out;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out = Tensor<U>(shape_);
        for (int64_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
        return out;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* module) {
    LDK_CHECK(a.same_shape(b), ErrKind::shape, module,
              "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// In-place helpers for non-autodiff code paths (schedules, samplers, metrics).
template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "tensor");
    Tensor<T> out = a;
    for (int64_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "tensor");
    Tensor<T> out = a;
    for (int64_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

template <class T>
Tensor<T> operator*(const Tensor<T>& a, T s) {
    Tensor<T> out = a;
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= s;
    return out;
}

template <class T>
Tensor<T> axpy(T alpha, const Tensor<T>& x, const Tensor<T>& y) {  // alpha*x + y
    check_same_shape(x, y, "tensor");
    Tensor<T> out = y;
    for (int64_t i = 0; i < out.size(); ++i) out[i] += alpha * x[i];
    return out;
}

template <class T>
double sqnorm(const Tensor<T>& a) {
    double s = 0;
    for (int64_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(a[i]);
    return s;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "tensor");
    double m = 0;
    for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

}  // namespace ldk
