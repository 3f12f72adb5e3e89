#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ssp/aligned.hpp"
#include "ssp/errors.hpp"

namespace ssp {

using cplx = std::complex<double>;

/// Shape of a 4-axis array laid out as (n, c, h, w), row-major.
/// For fields: n = batch (or batch*time), c = channels, (h, w) = (nx, ny).
struct Shape4 {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t size() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    friend bool operator==(const Shape4&, const Shape4&) = default;

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

/// Dense 4-axis array. Value semantics; all storage is contiguous.
template <class T>
class Array4 {
public:
    Array4() = default;
    explicit Array4(Shape4 s, T fill = T{}) : shape_(s), data_(s.size(), fill) {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
            throw ShapeError("negative extent in shape " + s.str());
    }
    Array4(int n, int c, int h, int w, T fill = T{}) : Array4(Shape4{n, c, h, w}, fill) {}

    const Shape4& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    AlignedVector<T>& vec() { return data_; }
    const AlignedVector<T>& vec() const { return data_; }

    std::size_t index(int i, int ch, int y, int x) const {
        return ((static_cast<std::size_t>(i) * shape_.c + ch) * shape_.h + y) * shape_.w + x;
    }
    T& operator()(int i, int ch, int y, int x) { return data_[index(i, ch, y, x)]; }
    const T& operator()(int i, int ch, int y, int x) const { return data_[index(i, ch, y, x)]; }
    T& operator[](std::size_t k) { return data_[k]; }
    const T& operator[](std::size_t k) const { return data_[k]; }

    /// Pointer to the (h, w) plane of sample i, channel ch.
    T* plane(int i, int ch) { return data_.data() + index(i, ch, 0, 0); }
    const T* plane(int i, int ch) const { return data_.data() + index(i, ch, 0, 0); }
    /// Pointer to the (c, h, w) block of sample i.
    T* sample(int i) { return data_.data() + index(i, 0, 0, 0); }
    const T* sample(int i) const { return data_.data() + index(i, 0, 0, 0); }

    /// Reinterpret with a new shape of the same total size.
    Array4 reshaped(Shape4 s) const {
        if (s.size() != size())
            throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
        Array4 out = *this;
        out.shape_ = s;
        return out;
    }
    void reshape_inplace(Shape4 s) {
        if (s.size() != size())
            throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
        shape_ = s;
    }

    /// Samples [first, first+count) as a new array.
    Array4 slice(int first, int count) const {
        if (first < 0 || count < 0 || first + count > shape_.n)
            throw ShapeError("slice out of range");
        Array4 out(count, shape_.c, shape_.h, shape_.w);
        std::copy_n(sample(first), out.size(), out.data());
        return out;
    }
    void set_slice(int first, const Array4& src) {
        if (src.c() != c() || src.h() != h() || src.w() != w() || first + src.n() > n())
            throw ShapeError("set_slice shape mismatch");
        std::copy_n(src.data(), src.size(), sample(first));
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Array4& operator+=(const Array4& o) {
        check_same(o);
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
        return *this;
    }
    Array4& operator-=(const Array4& o) {
        check_same(o);
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
        return *this;
    }
    template <class S>
    Array4& operator*=(S s) {
        for (auto& v : data_) v *= s;
        return *this;
    }
    /// this += a * o
    template <class S>
    void axpy(S a, const Array4& o) {
        check_same(o);
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += a * o.data_[k];
    }

    friend Array4 operator+(Array4 a, const Array4& b) { return a += b; }
    friend Array4 operator-(Array4 a, const Array4& b) { return a -= b; }
    template <class S>
    friend Array4 operator*(S s, Array4 a) {
        return a *= s;
    }
    friend bool operator==(const Array4&, const Array4&) = default;

    void check_same(const Array4& o) const {
        if (!(o.shape_ == shape_))
            throw ShapeError("shape mismatch " + shape_.str() + " vs " + o.shape_.str());
    }

private:
    Shape4 shape_{};
    AlignedVector<T> data_;
};

using Tensor = Array4<double>;
using CTensor = Array4<cplx>;

inline bool is_finite(double v) { return std::isfinite(v); }
inline bool is_finite(const cplx& v) { return std::isfinite(v.real()) && std::isfinite(v.imag()); }

template <class T>
bool all_finite(const Array4<T>& a) {
    return std::all_of(a.vec().begin(), a.vec().end(), [](const T& v) { return is_finite(v); });
}

/// Sum of |x|^2 in storage order.
template <class T>
double sq_norm(const Array4<T>& a) {
    double s = 0.0;
    for (const auto& v : a.vec()) s += std::norm(v);
    return s;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    a.check_same(b);
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
    return m;
}

inline double max_abs_diff(const CTensor& a, const CTensor& b) {
    a.check_same(b);
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
    return m;
}

/// Mean of squared differences over all entries.
inline double mse(const Tensor& a, const Tensor& b) {
    a.check_same(b);
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return a.size() ? s / static_cast<double>(a.size()) : 0.0;
}

/// Gradient of mse(a, b) with respect to a, scaled by `scale`.
inline Tensor mse_grad(const Tensor& a, const Tensor& b, double scale = 1.0) {
    a.check_same(b);
    Tensor g(a.shape());
    const double f = a.size() ? 2.0 * scale / static_cast<double>(a.size()) : 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) g[k] = f * (a[k] - b[k]);
    return g;
}

inline double mse(const CTensor& a, const CTensor& b) {
    a.check_same(b);
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += std::norm(a[k] - b[k]);
    return a.size() ? s / static_cast<double>(a.size()) : 0.0;
}

/// Concatenate along the channel axis.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
        throw ShapeError("concat_channels: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    Tensor out(a.n(), a.c() + b.c(), a.h(), a.w());
    const std::size_t pa = static_cast<std::size_t>(a.c()) * a.h() * a.w();
    const std::size_t pb = static_cast<std::size_t>(b.c()) * b.h() * b.w();
    for (int i = 0; i < a.n(); ++i) {
        std::copy_n(a.sample(i), pa, out.sample(i));
        std::copy_n(b.sample(i), pb, out.sample(i) + pa);
    }
    return out;
}

/// Channels [first, first+count) of every sample.
inline Tensor channel_slice(const Tensor& a, int first, int count) {
    if (first < 0 || first + count > a.c()) throw ShapeError("channel_slice out of range");
    Tensor out(a.n(), count, a.h(), a.w());
    const std::size_t p = a.shape().plane();
    for (int i = 0; i < a.n(); ++i) std::copy_n(a.plane(i, first), p * count, out.sample(i));
    return out;
}

/// Swap the last two axes.
template <class T>
Array4<T> transpose_hw(const Array4<T>& a) {
    Array4<T> out(a.n(), a.c(), a.w(), a.h());
    for (int i = 0; i < a.n(); ++i)
        for (int ch = 0; ch < a.c(); ++ch) {
            const T* src = a.plane(i, ch);
            T* dst = out.plane(i, ch);
            for (int y = 0; y < a.h(); ++y)
                for (int x = 0; x < a.w(); ++x) dst[static_cast<std::size_t>(x) * a.h() + y] = src[static_cast<std::size_t>(y) * a.w() + x];
        }
    return out;
}

} // namespace ssp
