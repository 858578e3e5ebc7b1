#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace drophead {

// Thrown when a forward op produces (or is fed) a non-finite value.
class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class shape_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(std::span<const std::size_t> shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
struct TensorData {
    std::vector<std::size_t> shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
};

// Shared-storage value handle over a dense row-major array (rank 1 or 2;
// scalars are shape {1}).
template <typename T>
class Tensor {
public:
    using Data = TensorData<T>;

    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape) { return full(std::move(shape), T(0)); }

    static Tensor full(std::vector<std::size_t> shape, T v) {
        auto d = std::make_shared<Data>();
        d->shape = std::move(shape);
        d->value.assign(count(d->shape), v);
        return Tensor(std::move(d));
    }

    static Tensor from(std::vector<std::size_t> shape, std::vector<T> values) {
        if (count(shape) != values.size()) {
            throw shape_error("tensor: " + std::to_string(values.size()) +
                              " values do not fill shape " + shape_str(shape));
        }
        auto d = std::make_shared<Data>();
        d->shape = std::move(shape);
        d->value = std::move(values);
        return Tensor(std::move(d));
    }

    static Tensor scalar(T v) { return full({1}, v); }

    static Tensor param(std::vector<std::size_t> shape, std::vector<T> values) {
        Tensor t = from(std::move(shape), std::move(values));
        t.set_requires_grad(true);
        return t;
    }

    bool defined() const { return d_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return d_->shape; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t numel() const { return d_->value.size(); }
    std::size_t rows() const { return d_->shape[0]; }
    std::size_t cols() const { return d_->shape.size() > 1 ? d_->shape[1] : std::size_t(1); }

    std::span<T> values() { return d_->value; }
    std::span<const T> values() const { return d_->value; }

    T& at(std::size_t i) { return d_->value[i]; }
    T at(std::size_t i) const { return d_->value[i]; }
    T& operator()(std::size_t r, std::size_t c) { return d_->value[r * cols() + c]; }
    T operator()(std::size_t r, std::size_t c) const { return d_->value[r * cols() + c]; }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) { d_->requires_grad = rg; }

    bool has_grad() const { return !d_->grad.empty(); }

    std::span<T> grad() {
        ensure_grad();
        return d_->grad;
    }
    std::span<const T> grad() const {
        if (d_->grad.empty()) throw std::logic_error("tensor: grad not populated");
        return d_->grad;
    }

    void ensure_grad() {
        if (d_->grad.empty()) d_->grad.assign(d_->value.size(), T(0));
    }

    void zero_grad() {
        if (!d_->grad.empty()) d_->grad.assign(d_->grad.size(), T(0));
    }

    void accumulate_grad(std::span<const T> g) {
        ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) d_->grad[i] += g[i];
    }

    std::shared_ptr<Data> handle() const { return d_; }

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

private:
    explicit Tensor(std::shared_ptr<Data> d) : d_(std::move(d)) {}

    static std::size_t count(std::span<const std::size_t> shape) {
        if (shape.empty()) throw shape_error("tensor: rank-0 shape not supported, use {1}");
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        return n;
    }

    std::shared_ptr<Data> d_;
};

// Ordered record of executed ops. Backward replays the records in exact
// reverse execution order and accumulates (never overwrites) leaf grads.
template <typename T>
class Tape {
public:
    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

    std::size_t size() const { return nodes_.size(); }

    void backward(Tensor<T>& loss) {
        if (loss.numel() != 1) {
            throw std::logic_error("backward: loss must be scalar, got shape " +
                                   shape_str(loss.shape()));
        }
        if (used_) {
            throw std::logic_error("backward: tape already replayed; reset() it first");
        }
        used_ = true;
        loss.ensure_grad();
        loss.grad()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    void reset() {
        nodes_.clear();
        used_ = false;
    }

private:
    std::vector<std::function<void()>> nodes_;
    bool used_ = false;
};

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(static_cast<double>(t.at(i)))) {
            throw numeric_error(std::string(op) + ": non-finite value at flat index " +
                                std::to_string(i));
        }
    }
}

}  // namespace drophead
