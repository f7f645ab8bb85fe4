#ifndef NATSEG_ADAM_H_
#define NATSEG_ADAM_H_

#include <cstdint>
#include <vector>

#include "natseg/nn.h"

namespace natseg {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  // One buffer per parameter, in ParamList order, sized like the parameter.
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;

  static AdamState make(const ParamList& params, double lr);
};

// One Adam update from the gradients stored on `params`. A parameter without
// a gradient buffer is treated as having zero gradient. Every gradient is
// checked before anything is written, so a NaN or infinity aborts the whole
// step with a NumericError naming the parameter and leaves params and state
// untouched. clip_norm > 0 rescales the gradients so their global L2 norm is
// at most clip_norm.
void adam_step(const ParamList& params, AdamState& state, double clip_norm = 0.0);

}  // namespace natseg

#endif  // NATSEG_ADAM_H_
