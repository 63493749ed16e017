#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "puyun/errors.hpp"

namespace puyun {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("dimension sizes must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until the backward pass touches this node
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

}  // namespace detail

// Dense row-major tensor. TensorT is a cheap shared handle to its node;
// values are treated as immutable once an op has produced them. Gradient
// participation is opt-in per leaf and propagates through recorded ops.
template <typename T>
class TensorT {
public:
    using Scalar = T;

    TensorT() = default;

    static TensorT zeros(Shape shape) {
        TensorT t;
        t.node_ = std::make_shared<detail::Node<T>>();
        t.node_->value.assign(shape_numel(shape), T(0));
        t.node_->shape = std::move(shape);
        return t;
    }

    static TensorT full(Shape shape, T v) {
        TensorT t = zeros(std::move(shape));
        for (auto& x : t.node_->value) x = v;
        return t;
    }

    static TensorT scalar(T v) { return full({1}, v); }

    static TensorT from_vector(Shape shape, std::vector<T> values) {
        if (shape_numel(shape) != values.size()) {
            throw ShapeError("from_vector: " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
        }
        TensorT t;
        t.node_ = std::make_shared<detail::Node<T>>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(values);
        return t;
    }

    bool defined() const { return node_ != nullptr; }

    const Shape& shape() const { return checked()->shape; }

    int dim(std::size_t i) const {
        const auto& s = shape();
        if (i >= s.size()) throw ShapeError("dim index out of range");
        return s[i];
    }

    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const { return checked()->value.size(); }

    const std::vector<T>& values() const { return checked()->value; }
    // For filling freshly created tensors; never mutate a tensor that other
    // code already observes.
    std::vector<T>& raw_values() { return checked()->value; }

    T item() const {
        if (numel() != 1) throw UsageError("item(): tensor is not a scalar");
        return checked()->value[0];
    }

    T at(int c, int i, int j) const {
        const auto& s = shape();
        if (s.size() != 3) throw ShapeError("at(c,i,j) needs a rank-3 tensor");
        return checked()->value[(static_cast<std::size_t>(c) * s[1] + i) * s[2] + j];
    }

    bool requires_grad() const { return checked()->requires_grad; }
    void set_requires_grad(bool b) { checked()->requires_grad = b; }

    bool has_grad() const { return !checked()->grad.empty(); }
    const std::vector<T>& grad() const {
        const auto* n = checked();
        if (n->grad.empty()) throw UsageError("grad(): no gradient recorded for this tensor");
        return n->grad;
    }
    void zero_grad() { checked()->grad.assign(checked()->value.size(), T(0)); }

    // Deep copy of the values; the copy starts detached from any tape.
    TensorT clone() const {
        TensorT t;
        t.node_ = std::make_shared<detail::Node<T>>();
        t.node_->shape = checked()->shape;
        t.node_->value = checked()->value;
        return t;
    }

    template <typename U>
    TensorT<U> cast() const {
        std::vector<U> out(numel());
        const auto& v = values();
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<U>(v[i]);
        return TensorT<U>::from_vector(shape(), std::move(out));
    }

    std::shared_ptr<detail::Node<T>> node() const { return node_; }

    bool same_node(const TensorT& other) const { return node_ == other.node_; }

private:
    detail::Node<T>* checked() const {
        if (!node_) throw UsageError("use of undefined tensor");
        return node_.get();
    }

    std::shared_ptr<detail::Node<T>> node_;
};

// Records the op sequence of one forward evaluation. Construction installs
// the tape as the current one for this thread; ops record themselves while a
// tape is current and an input participates in gradients. One tape serves a
// single forward/backward pair and is consumed by backward().
template <typename T>
class TapeT {
public:
    TapeT() : prev_(current_) { current_ = this; }

    ~TapeT() {
        if (current_ == this) current_ = prev_;
    }

    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    static TapeT* current() { return current_; }

    void record(std::shared_ptr<detail::Node<T>> out, std::function<void()> backward) {
        if (consumed_) throw UsageError("tape already consumed by backward()");
        records_.push_back({std::move(out), std::move(backward)});
    }

    std::size_t size() const { return records_.size(); }
    bool consumed() const { return consumed_; }

    // Seeds d(loss)/d(loss)=1 and replays the op records in reverse. Ops
    // whose output never received a gradient are skipped; they cannot be
    // ancestors of the loss.
    void backward(const TensorT<T>& loss) {
        if (consumed_) throw UsageError("backward(): tape already consumed");
        if (loss.numel() != 1) throw UsageError("backward(): loss must be a scalar tensor");
        loss.node()->ensure_grad();
        loss.node()->grad[0] += T(1);
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
            if (it->out->grad.empty()) continue;
            it->fn();
        }
        consumed_ = true;
        records_.clear();
    }

private:
    struct Record {
        std::shared_ptr<detail::Node<T>> out;
        std::function<void()> fn;
    };

    std::vector<Record> records_;
    bool consumed_ = false;
    TapeT* prev_ = nullptr;

    static thread_local TapeT* current_;
};

template <typename T>
thread_local TapeT<T>* TapeT<T>::current_ = nullptr;

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

}  // namespace puyun
