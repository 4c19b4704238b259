#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace advlab {

/// Ordered list of positive extents. Images use (height, width, channels).
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}
    explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
        for (auto d : dims_) {
            if (d == 0) {
                throw std::invalid_argument("Shape: every dimension must be >= 1, got " + str());
            }
        }
    }

    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t operator[](std::size_t i) const { return dims_.at(i); }
    const std::vector<std::size_t>& dims() const noexcept { return dims_; }

    std::size_t count() const noexcept {
        return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>{});
    }

    std::string str() const {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            os << (i ? "," : "") << dims_[i];
        }
        os << ')';
        return os.str();
    }

    friend bool operator==(const Shape&, const Shape&) = default;

private:
    std::vector<std::size_t> dims_;
};

/// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(shape_.count(), fill) {}
    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_.count()) {
            throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_.str());
        }
    }

    static Tensor vector(std::vector<double> values) {
        Shape s{values.size()};
        return Tensor(std::move(s), std::move(values));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    const double& operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Channel-last image access: (row, col, channel).
    double& at(std::size_t r, std::size_t c, std::size_t ch) {
        return data_[(r * shape_[1] + c) * shape_[2] + ch];
    }
    double at(std::size_t r, std::size_t c, std::size_t ch) const {
        return data_[(r * shape_[1] + c) * shape_[2] + ch];
    }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                                    b.shape().str());
    }
}

template <typename F>
Tensor map(const Tensor& t, F&& f) {
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
        out[i] = f(t[i]);
    }
    return out;
}

inline double sign(double v) noexcept { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline Tensor sign(const Tensor& t) {
    return map(t, [](double v) { return sign(v); });
}

/// Elementwise min(hi, max(lo, v)). `lo`/`hi` may match t's shape or hold a single element.
inline Tensor box_clamp(const Tensor& t, const Tensor& lo, const Tensor& hi) {
    auto compatible = [&](const Tensor& b) { return b.shape() == t.shape() || b.size() == 1; };
    if (!compatible(lo) || !compatible(hi)) {
        throw std::invalid_argument("box_clamp: bounds " + lo.shape().str() + "/" + hi.shape().str() +
                                    " not broadcastable to " + t.shape().str());
    }
    const bool lo_scalar = lo.size() == 1 && t.size() != 1;
    const bool hi_scalar = hi.size() == 1 && t.size() != 1;
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double l = lo[lo_scalar ? 0 : i];
        const double h = hi[hi_scalar ? 0 : i];
        if (l > h) {
            throw std::invalid_argument("box_clamp: lower bound exceeds upper bound at element " +
                                        std::to_string(i));
        }
        out[i] = std::min(h, std::max(l, t[i]));
    }
    return out;
}

inline Tensor clamp(const Tensor& t, double lo, double hi) {
    return map(t, [=](double v) { return std::min(hi, std::max(lo, v)); });
}

/// Indices of the k largest entries in non-increasing order; ties go to the lower index.
inline std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
    if (k == 0 || k > scores.size()) {
        throw std::invalid_argument("top_k: k=" + std::to_string(k) + " outside [1, " +
                                    std::to_string(scores.size()) + "]");
    }
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                          return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
                      });
    idx.resize(k);
    return idx;
}

inline std::vector<std::size_t> top_k(const Tensor& scores, std::size_t k) {
    if (scores.shape().rank() != 1) {
        throw std::invalid_argument("top_k: expected rank-1 scores, got " + scores.shape().str());
    }
    return top_k(scores.values(), k);
}

inline std::size_t argmax(std::span<const double> scores) { return top_k(scores, 1).front(); }

inline double linf_distance(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "linf_distance");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

inline double squared_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t) {
        s += v * v;
    }
    return s;
}

}  // namespace advlab
