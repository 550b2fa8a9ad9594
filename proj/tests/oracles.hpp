#pragma once

// Finite-difference gradient oracle shared by the unit and acceptance tests.
// Analytic gradients come from one taped reverse pass; numeric gradients from
// central differences re-running the forward without a tape.

#include <cmath>
#include <functional>
#include <vector>

#include "sail/ops.hpp"
#include "sail/tensor.hpp"

namespace oracle {

using Forward = std::function<sail::Tensor(void)>;

// Max relative error between analytic and central-difference gradients over
// every element of every tensor in `inputs`. Elements where both gradients
// are below `tiny` are skipped (relative error is meaningless near zero).
inline double fd_max_rel_err(const Forward& f, std::vector<sail::Tensor> inputs,
                             double h = 1e-5, double tiny = 1e-7) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    {
        sail::Tape tape;
        sail::Tensor loss = f();
        sail::backward(loss);
    }
    double worst = 0.0;
    for (auto& t : inputs) {
        std::vector<double> analytic(t.numel(), 0.0);
        if (t.has_grad()) analytic = t.grad_vec();
        for (int64_t i = 0; i < t.numel(); ++i) {
            double orig = t.data()[i];
            t.data()[i] = orig + h;
            double fp = f().value();
            t.data()[i] = orig - h;
            double fm = f().value();
            t.data()[i] = orig;
            double numeric = (fp - fm) / (2.0 * h);
            double a = analytic[static_cast<size_t>(i)];
            double denom = std::max(std::fabs(a), std::fabs(numeric));
            if (denom < tiny) continue;
            worst = std::max(worst, std::fabs(a - numeric) / denom);
        }
    }
    for (auto& t : inputs) t.zero_grad();
    return worst;
}

inline sail::Tensor rand_tensor(sail::Shape shape, sail::Rng& rng, double lo = -1.0,
                                double hi = 1.0) {
    sail::Tensor t = sail::Tensor::zeros(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i)
        t.data()[i] = lo + (hi - lo) * rng.uniform();
    return t;
}

}  // namespace oracle
