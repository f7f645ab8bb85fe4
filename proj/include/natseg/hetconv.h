#ifndef NATSEG_HETCONV_H_
#define NATSEG_HETCONV_H_

#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include "natseg/nn.h"

namespace natseg {

inline constexpr int kHetGroups = 3;

// Three 3x3 convolutions over equal channel slices, concatenated to c_out and
// added to a 1x1 convolution of the whole input. Only the 1x1 branch carries
// a bias. The three group kernels are stored as one groups=3 weight tensor
// (c_out, c_in/3, 3, 3); group g owns output rows [g*c_out/3, (g+1)*c_out/3).
struct HetConvLayer {
  Conv2dParams grouped;    // k=3, groups=3, no bias
  Conv2dParams pointwise;  // k=1, groups=1, with bias
  int stride = 1;

  static HetConvLayer make(int c_in, int c_out, int stride, std::uint64_t seed);

  int c_in() const { return pointwise.c_in(); }
  int c_out() const { return pointwise.c_out(); }

  // Weight-only view of group g as an ungrouped conv on its channel slice.
  Conv2dParams group(int g) const;

  std::int64_t param_count() const;
  std::int64_t weight_count() const;
  void collect(ParamList& out, const std::string& prefix) const;
};

// Throws ConfigError unless c_in and c_out are divisible by 3.
void validate_hetconv_channels(int c_in, int c_out);

Tensor hetconv_forward(const Tensor& x, const HetConvLayer& layer);

// Either a plain 3x3 conv (V1) or a HetConv (V2).
using UnitConv = std::variant<Conv2dParams, HetConvLayer>;

Tensor apply_conv(const Tensor& x, const UnitConv& conv);
std::int64_t param_count(const UnitConv& conv);

enum class ConvKind { kPlain, kHet };

struct ShortcutProjection {
  Conv2dParams conv;  // 1x1, stride matched, no bias
  BatchNormState bn;
};

// Pre-activation residual unit:
//   out = shortcut(x) + conv2(relu(bn2(conv1(relu(bn1(x))))))
// The shortcut is the identity unless stride != 1 or c_in != c_out, in which
// case it is a strided 1x1 conv followed by BN.
struct ResidualUnit {
  ConvKind kind = ConvKind::kPlain;
  int c_in = 0;
  int c_out = 0;
  int stride = 1;
  BatchNormState bn1;
  UnitConv conv1;
  BatchNormState bn2;
  UnitConv conv2;
  std::optional<ShortcutProjection> shortcut;

  static ResidualUnit make(ConvKind kind, int c_in, int c_out, int stride,
                           std::uint64_t seed);

  void set_mode(NormMode mode);
  std::int64_t param_count() const;
  void collect(ParamList& out, const std::string& prefix) const;
  void collect_buffers(BufferList& out, const std::string& prefix);
};

Tensor residual_unit_forward(const Tensor& x, ResidualUnit& unit);

std::int64_t param_count(const HetConvLayer& layer);
std::int64_t param_count(const ResidualUnit& unit);

}  // namespace natseg

#endif  // NATSEG_HETCONV_H_
