#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sail/common.hpp"

namespace sail {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense 64-bit tensor with an optional gradient buffer of the same shape.
// Value-semantic handle over shared storage; ops never mutate their inputs'
// data, so tensors are effectively immutable once written by an op.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, double fill, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    double* data() { return impl_->data.data(); }
    const double* data() const { return impl_->data.data(); }
    std::vector<double>& vec() { return impl_->data; }
    const std::vector<double>& vec() const { return impl_->data; }

    // scalar convenience, asserts numel == 1
    double value() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }
    bool is_leaf() const { return impl_->leaf; }
    void set_leaf(bool v) { impl_->leaf = v; }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    // Allocates a zero grad buffer on first use. Tensor is a shared handle,
    // so gradient accumulation is possible through const copies (closures).
    double* grad() const {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
        return impl_->grad.data();
    }
    const std::vector<double>& grad_vec() const { return impl_->grad; }
    void zero_grad() const {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
    }
    // Releases the grad buffer entirely (has_grad() becomes false).
    void drop_grad() const { impl_->grad.clear(); }

    // Deep copy of values only (leaf, no grad, no history).
    Tensor detached_copy() const;

    bool all_finite() const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    struct Impl {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;  // empty until first gradient write
        bool requires_grad = false;
        bool leaf = true;
    };
    std::shared_ptr<Impl> impl_;
};

// Reverse-mode tape. Constructing a Tape makes it the active tape for the
// current thread (nesting allowed); ops record backward closures onto it when
// any input requires a gradient. One tape per training/attribution run; tapes
// are never shared across threads.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    void record(const Tensor& out, std::function<void()> backward_fn) {
        outputs_.push_back(out);
        nodes_.push_back(std::move(backward_fn));
    }
    size_t node_count() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and replays recorded nodes in reverse. Grads
    // of intermediate (op output) tensors are cleared first, so repeated
    // calls accumulate into leaf gradients only.
    void backward_from(Tensor loss);

private:
    std::vector<std::function<void()>> nodes_;
    std::vector<Tensor> outputs_;
    Tape* parent_ = nullptr;
};

// Backward on the thread's active tape. `loss` must be scalar.
void backward(const Tensor& loss);

// True when an op called now should record onto a tape.
inline bool recording() { return Tape::active() != nullptr; }

}  // namespace sail
