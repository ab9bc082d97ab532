#pragma once

#include <vector>

#include "cdseg/tensor.hpp"

namespace cdseg::ad {

// Convolution over a single [C,H,W] image with zero padding.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding);

Tensor upsample_nearest(const Tensor& input, int factor);

Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

// Per-pixel softmax over the channel axis of a [C,H,W] tensor.
Tensor softmax_channels(const Tensor& x);

// Flattens each input and stacks them as rows of an [N,D] tensor.
Tensor stack_rows(const std::vector<Tensor>& rows);

}  // namespace cdseg::ad
