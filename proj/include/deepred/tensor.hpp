#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepred {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

/// Dense row-major tensor. Scalar type is a template parameter;
/// `Tensor` (double) is the default carrier for all solver math.
template <class T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

    TensorT(Shape shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_numel(shape_))
            throw std::invalid_argument("tensor: data size " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
    }

    const Shape& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    T operator[](std::size_t i) const { return data_[i]; }

    // (c,y,x) access for 3-d image tensors
    T& at3(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }
    T at3(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    TensorT& operator+=(const TensorT& o) {
        check_congruent(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    TensorT& operator-=(const TensorT& o) {
        check_congruent(o, "-=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    TensorT& operator*=(T a) {
        for (auto& v : data_) v *= a;
        return *this;
    }

    friend TensorT operator+(TensorT a, const TensorT& b) { return a += b; }
    friend TensorT operator-(TensorT a, const TensorT& b) { return a -= b; }
    friend TensorT operator*(T a, TensorT t) { return t *= a; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    T dot(const TensorT& o) const {
        check_congruent(o, "dot");
        T s = 0;
        for (std::size_t i = 0; i < data_.size(); ++i) s += data_[i] * o.data_[i];
        return s;
    }
    T squared_norm() const {
        T s = 0;
        for (T v : data_) s += v * v;
        return s;
    }
    T norm() const { return std::sqrt(squared_norm()); }

    T min() const {
        T m = data_.empty() ? T(0) : data_[0];
        for (T v : data_) m = v < m ? v : m;
        return m;
    }
    T max() const {
        T m = data_.empty() ? T(0) : data_[0];
        for (T v : data_) m = v > m ? v : m;
        return m;
    }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void clamp(T lo, T hi) {
        for (auto& v : data_) v = v < lo ? lo : (v > hi ? hi : v);
    }

    void check_congruent(const TensorT& o, const char* what) const {
        if (shape_ != o.shape_)
            throw std::invalid_argument(std::string("tensor ") + what + ": shape mismatch " +
                                        shape_str(shape_) + " vs " + shape_str(o.shape_));
    }

private:
    // zero extents are tolerated so operators may have genuinely empty ranges
    // (e.g. an all-false sampling mask)
    static std::size_t checked_numel(const Shape& s) { return shape_numel(s); }

    Shape shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<double>;
using TensorF = TensorT<float>;

}  // namespace deepred
