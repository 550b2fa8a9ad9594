#include "sail/tensor.hpp"

#include <cmath>
#include <sstream>

namespace sail {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
    impl_ = std::make_shared<Impl>();
    int64_t n = shape_numel(shape);
    impl_->shape = std::move(shape);
    impl_->data.assign(static_cast<size_t>(n), fill);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return Tensor(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    int64_t n = shape_numel(shape);
    if (n != static_cast<int64_t>(data.size()))
        throw ShapeError("from_data: " + std::to_string(data.size()) + " values for shape " +
                         shape_str(shape));
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_data({1}, {v}, requires_grad);
}

double Tensor::value() const {
    if (numel() != 1) throw ShapeError("value(): tensor has " + std::to_string(numel()) + " elements");
    return impl_->data[0];
}

Tensor Tensor::detached_copy() const {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : impl_->data)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() {
    parent_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() { g_active_tape = parent_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::backward_from(Tensor loss) {
    if (loss.numel() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    for (auto& t : outputs_)
        if (!t.is_leaf()) t.drop_grad();
    loss.grad()[0] += 1.0;
    for (size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
}

void backward(const Tensor& loss) {
    Tape* t = Tape::active();
    if (!t) throw Error("backward: no active tape");
    t->backward_from(loss);
}

}  // namespace sail
