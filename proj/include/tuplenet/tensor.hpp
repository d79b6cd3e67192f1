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

namespace tuplenet {

// ---------------------------------------------------------------------------
// Error types. Everything thrown by the library derives from Error.
// ---------------------------------------------------------------------------
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct InvalidArgument : Error {
    using Error::Error;
};
struct StateError : Error {
    using Error::Error;
};
struct LoadError : Error {
    using Error::Error;
};
struct TrainingError : Error {
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? " x " : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

// Dense row-major tensor. Runtime math uses float; the same kernels are
// instantiated with double for gradient checking.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }
    BasicTensor(std::initializer_list<std::size_t> shape, std::initializer_list<T> values)
        : BasicTensor(Shape(shape), std::vector<T>(values)) {}

    template <typename U>
    [[nodiscard]] BasicTensor<U> cast() const {
        return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t i) const { return shape_.at(i); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] std::span<T> data() noexcept { return data_; }
    [[nodiscard]] std::span<const T> data() const noexcept { return data_; }
    [[nodiscard]] std::vector<T>& storage() noexcept { return data_; }
    [[nodiscard]] const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    // 2-D access (rows x cols).
    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

    // 3-D access.
    T& operator()(std::size_t a, std::size_t b, std::size_t c) noexcept {
        return data_[(a * shape_[1] + b) * shape_[2] + c];
    }
    const T& operator()(std::size_t a, std::size_t b, std::size_t c) const noexcept {
        return data_[(a * shape_[1] + b) * shape_[2] + c];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void reshape(Shape s) {
        if (shape_numel(s) != data_.size())
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
        shape_ = std::move(s);
    }

    [[nodiscard]] bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <typename T>
BasicTensor<T> zeros_like(const BasicTensor<T>& t) {
    return BasicTensor<T>(t.shape());
}

inline void require_shape(const Shape& got, const Shape& want, const char* what) {
    if (got != want)
        throw ShapeError(std::string(what) + ": expected shape " + shape_str(want) + ", got " + shape_str(got));
}

// Trainable tensor with its gradient accumulator and momentum buffer.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor momentum;
    bool frozen = false;
    // Set by backward passes that actually route gradient into this parameter.
    // Optimizer steps skip parameters left untouched in a mini-batch.
    bool touched = false;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(value.shape()), momentum(value.shape()) {}

    void zero_grad() {
        grad.fill(0.0f);
        touched = false;
    }
};

}  // namespace tuplenet
