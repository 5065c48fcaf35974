#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "osnet/rng.hpp"

namespace osnet {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

// Dense row-major tensor, 1 to 4 dims in (batch, channel, height, width)
// order for 4-D data. Width is the fastest-varying axis. The gradient buffer
// is allocated lazily and always matches the data shape.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
    }

    TensorT(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
            throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
    }

    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    T& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
    T at(int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 4-D accessor; only valid for ndim()==4.
    T& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    T at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool v) { requires_grad_ = v; }

    bool has_grad() const { return grad_ != nullptr; }

    // Zero-initialized on first access.
    std::vector<T>& grad() {
        if (!grad_) grad_ = std::make_unique<std::vector<T>>(data_.size(), T(0));
        return *grad_;
    }

    void zero_grad() {
        if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
    }

    void drop_grad() { grad_.reset(); }

private:
    void validate_shape() const {
        if (shape_.empty() || shape_.size() > 4)
            throw std::invalid_argument("tensor rank must be 1..4, got shape " + shape_str(shape_));
        for (int64_t d : shape_)
            if (d <= 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<T> data_;
    bool requires_grad_ = false;
    std::unique_ptr<std::vector<T>> grad_;
};

template <typename T>
using TensorPtrT = std::shared_ptr<TensorT<T>>;

template <typename T>
TensorPtrT<T> make_tensor(Shape shape, T fill = T(0)) {
    return std::make_shared<TensorT<T>>(std::move(shape), fill);
}

template <typename T>
TensorPtrT<T> make_tensor(Shape shape, std::vector<T> data) {
    return std::make_shared<TensorT<T>>(std::move(shape), std::move(data));
}

template <typename T>
TensorPtrT<T> make_param(Shape shape, T fill = T(0)) {
    auto t = make_tensor<T>(std::move(shape), fill);
    t->set_requires_grad(true);
    return t;
}

template <typename T>
TensorPtrT<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    auto t = make_tensor<T>(std::move(shape));
    for (auto& v : t->values()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

}  // namespace osnet
