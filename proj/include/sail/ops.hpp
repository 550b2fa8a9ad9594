#pragma once

#include <vector>

#include "sail/mask.hpp"
#include "sail/tensor.hpp"

namespace sail {

// All ops allocate a fresh output tensor and, when a tape is active and any
// input requires a gradient, record a backward closure. Inputs are never
// mutated. 4-D tensors are [B,C,H,W] row-major.

// elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
// t is a scalar tensor: out = t*a + (1-t)*b
Tensor lerp(const Tensor& a, const Tensor& b, const Tensor& t);
// x: [B,C,H,W], s: [B,C]; out[b,c,:,:] = x[b,c,:,:] * s[b,c]
Tensor channel_scale(const Tensor& x, const Tensor& s);

// activations
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x);            // [B,K], rows
Tensor softmax_channels(const Tensor& x);   // [B,C,H,W], per-pixel over C

// convolution & pooling
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);
Tensor max_pool2d(const Tensor& x, int k, int stride);
Tensor global_avg_pool(const Tensor& x);    // [B,C,H,W] -> [B,C]
Tensor adaptive_avg_pool(const Tensor& x, int outH, int outW);
Tensor bilinear_upsample(const Tensor& x, int outH, int outW);

// structural
Tensor concat_channels(const Tensor& a, const Tensor& b);

// reductions
Tensor sum(const Tensor& x);                            // scalar
Tensor pick(const Tensor& x, int64_t flat_index);       // scalar

// losses
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor pixel_nll(const Tensor& probs, const std::vector<LayerMask>& targets);
Tensor dice_loss(const Tensor& probs, const std::vector<LayerMask>& targets);
Tensor dice_loss(const Tensor& probs, const LayerMask& target);  // B == 1

// non-differentiable utility: per-pixel argmax of [B,C,H,W] probs for sample b
LayerMask argmax_mask(const Tensor& probs, int b);

}  // namespace sail
