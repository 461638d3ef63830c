#pragma once

// Dense row-major tensors plus the reverse-mode tape they hang off of.
// Everything is templated on the scalar type: float is the production
// precision, double exists so gradients can be verified against central
// finite differences at tight tolerances.

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace mseg {

template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient actually reaches this tensor
    bool requires_grad = false;

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    int dim(size_t i) const { return shape.at(i); }

    static std::shared_ptr<TensorT> zeros(std::vector<int> shape, bool requires_grad = false) {
        auto t = std::make_shared<TensorT>();
        t->shape = std::move(shape);
        for (int d : t->shape)
            if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
        t->data.assign(size_t(t->numel()), T(0));
        t->requires_grad = requires_grad;
        return t;
    }
    static std::shared_ptr<TensorT> full(std::vector<int> shape, T value) {
        auto t = zeros(std::move(shape));
        for (auto& v : t->data) v = value;
        return t;
    }

    // Gradient buffer, allocated (as zeros) on first touch.
    T* grad_buf() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad.data();
    }
    T grad_at(int64_t i) const { return grad.empty() ? T(0) : grad[size_t(i)]; }
    void zero_grad() { grad.clear(); }
};

template <typename T>
using TensorPtrT = std::shared_ptr<TensorT<T>>;

using Tensor = TensorT<float>;
using TensorPtr = TensorPtrT<float>;

// Ordered record of backward closures. Ops push one closure each in
// execution order; backward() replays them once in reverse. A second
// backward() without reset() is an error because gradients would
// double-accumulate silently.
template <typename T>
class TapeT {
  public:
    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

    void backward(const TensorPtrT<T>& loss) {
        if (done_) throw std::logic_error("backward already ran on this tape; reset() first");
        if (!loss || loss->numel() != 1)
            throw std::invalid_argument("backward needs a scalar loss");
        if (!loss->requires_grad)
            throw std::invalid_argument("loss is not connected to this tape");
        done_ = true;
        loss->grad_buf()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    void reset() {
        nodes_.clear();
        done_ = false;
    }
    size_t size() const { return nodes_.size(); }

  private:
    std::vector<std::function<void()>> nodes_;
    bool done_ = false;
};

using Tape = TapeT<float>;

}  // namespace mseg
