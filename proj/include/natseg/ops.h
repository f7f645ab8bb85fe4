#ifndef NATSEG_OPS_H_
#define NATSEG_OPS_H_

#include <vector>

#include "natseg/tensor.h"

namespace natseg {

// Elementwise a + b. Shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);

// Elementwise a * b.
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, Real factor);

// Scalar (1,1,1,1) reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Channel concatenation, a's channels first. n, h, w must agree.
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor concat_channels(const std::vector<Tensor>& parts);

// Channels [begin, begin + count).
Tensor slice_channels(const Tensor& x, int begin, int count);

// Splits into consecutive channel blocks of the given sizes (must sum to c).
std::vector<Tensor> split_channels(const Tensor& x, const std::vector<int>& sizes);

// Stacks (1, c, h, w) tensors along the batch axis.
Tensor stack_batch(const std::vector<Tensor>& items);

}  // namespace natseg

#endif  // NATSEG_OPS_H_
