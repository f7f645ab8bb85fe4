#include "natseg/hetconv.h"

#include <cassert>

#include "natseg/ops.h"
#include "natseg/rng.h"

namespace natseg {

void validate_hetconv_channels(int c_in, int c_out) {
  if (c_in % kHetGroups != 0 || c_out % kHetGroups != 0) {
    throw ConfigError("hetconv: c_in=" + std::to_string(c_in) + " and c_out=" +
                      std::to_string(c_out) + " must both be divisible by 3");
  }
}

HetConvLayer HetConvLayer::make(int c_in, int c_out, int stride, std::uint64_t seed) {
  validate_hetconv_channels(c_in, c_out);
  HetConvLayer layer;
  layer.grouped = Conv2dParams::make(c_in, c_out, 3, stride, kHetGroups, false,
                                     mix_seed(seed, 1));
  layer.pointwise = Conv2dParams::make(c_in, c_out, 1, stride, 1, true, mix_seed(seed, 2));
  layer.stride = stride;
  return layer;
}

Conv2dParams HetConvLayer::group(int g) const {
  const Shape& ws = grouped.weight.shape();
  const int rows = ws.n / kHetGroups;
  const std::int64_t per = static_cast<std::int64_t>(rows) * ws.c * ws.h * ws.w;
  auto src = grouped.weight.data().subspan(static_cast<std::size_t>(g * per),
                                           static_cast<std::size_t>(per));
  Conv2dParams p;
  p.weight = Tensor::from_data(Shape{rows, ws.c, ws.h, ws.w},
                               std::vector<Real>(src.begin(), src.end()));
  p.stride = grouped.stride;
  p.padding = grouped.padding;
  p.groups = 1;
  return p;
}

std::int64_t HetConvLayer::weight_count() const {
  return grouped.weight.numel() + pointwise.weight.numel();
}

std::int64_t HetConvLayer::param_count() const {
  return grouped.param_count() + pointwise.param_count();
}

void HetConvLayer::collect(ParamList& out, const std::string& prefix) const {
  grouped.collect(out, prefix + ".grouped");
  pointwise.collect(out, prefix + ".pointwise");
}

Tensor hetconv_forward(const Tensor& x, const HetConvLayer& layer) {
  if (x.shape().c != layer.c_in()) {
    throw ShapeError("hetconv: input has " + std::to_string(x.shape().c) +
                     " channels, layer expects " + std::to_string(layer.c_in()));
  }
  Tensor groups = conv2d(x, layer.grouped);
  Tensor point = conv2d(x, layer.pointwise);
  return add(groups, point);
}

Tensor apply_conv(const Tensor& x, const UnitConv& conv) {
  if (const auto* plain = std::get_if<Conv2dParams>(&conv)) return conv2d(x, *plain);
  return hetconv_forward(x, std::get<HetConvLayer>(conv));
}

std::int64_t param_count(const UnitConv& conv) {
  if (const auto* plain = std::get_if<Conv2dParams>(&conv)) return plain->param_count();
  return std::get<HetConvLayer>(conv).param_count();
}

std::int64_t param_count(const HetConvLayer& layer) { return layer.param_count(); }

namespace {

UnitConv make_unit_conv(ConvKind kind, int c_in, int c_out, int stride,
                        std::uint64_t seed) {
  if (kind == ConvKind::kHet) return HetConvLayer::make(c_in, c_out, stride, seed);
  return Conv2dParams::make(c_in, c_out, 3, stride, 1, true, seed);
}

void collect_conv(const UnitConv& conv, ParamList& out, const std::string& prefix) {
  std::visit([&](const auto& c) { c.collect(out, prefix); }, conv);
}

}  // namespace

ResidualUnit ResidualUnit::make(ConvKind kind, int c_in, int c_out, int stride,
                                std::uint64_t seed) {
  ResidualUnit u;
  u.kind = kind;
  u.c_in = c_in;
  u.c_out = c_out;
  u.stride = stride;
  u.bn1 = BatchNormState::make(c_in);
  u.conv1 = make_unit_conv(kind, c_in, c_out, stride, mix_seed(seed, 11));
  u.bn2 = BatchNormState::make(c_out);
  u.conv2 = make_unit_conv(kind, c_out, c_out, 1, mix_seed(seed, 12));
  if (stride != 1 || c_in != c_out) {
    ShortcutProjection proj;
    proj.conv = Conv2dParams::make(c_in, c_out, 1, stride, 1, false, mix_seed(seed, 13));
    proj.bn = BatchNormState::make(c_out);
    u.shortcut = std::move(proj);
  }
  return u;
}

void ResidualUnit::set_mode(NormMode mode) {
  bn1.mode = mode;
  bn2.mode = mode;
  if (shortcut) shortcut->bn.mode = mode;
}

std::int64_t ResidualUnit::param_count() const {
  std::int64_t total = bn1.param_count() + natseg::param_count(conv1) +
                       bn2.param_count() + natseg::param_count(conv2);
  if (shortcut) total += shortcut->conv.param_count() + shortcut->bn.param_count();
  return total;
}

std::int64_t param_count(const ResidualUnit& unit) { return unit.param_count(); }

void ResidualUnit::collect(ParamList& out, const std::string& prefix) const {
  bn1.collect(out, prefix + ".bn1");
  collect_conv(conv1, out, prefix + ".conv1");
  bn2.collect(out, prefix + ".bn2");
  collect_conv(conv2, out, prefix + ".conv2");
  if (shortcut) {
    shortcut->conv.collect(out, prefix + ".shortcut.conv");
    shortcut->bn.collect(out, prefix + ".shortcut.bn");
  }
}

void ResidualUnit::collect_buffers(BufferList& out, const std::string& prefix) {
  bn1.collect_buffers(out, prefix + ".bn1");
  bn2.collect_buffers(out, prefix + ".bn2");
  if (shortcut) shortcut->bn.collect_buffers(out, prefix + ".shortcut.bn");
}

Tensor residual_unit_forward(const Tensor& x, ResidualUnit& unit) {
  if (x.shape().c != unit.c_in) {
    throw ShapeError("residual unit: input has " + std::to_string(x.shape().c) +
                     " channels, unit expects " + std::to_string(unit.c_in));
  }
  Tensor h = relu(batch_norm(x, unit.bn1));
  h = apply_conv(h, unit.conv1);
  h = relu(batch_norm(h, unit.bn2));
  h = apply_conv(h, unit.conv2);

  Tensor skip = x;
  if (unit.shortcut) {
    skip = batch_norm(conv2d(x, unit.shortcut->conv), unit.shortcut->bn);
  }
  // Guaranteed by construction; a mismatch here is a bug, not bad input.
  assert(skip.shape() == h.shape());
  if (skip.shape() != h.shape()) {
    throw StateError("residual unit: branch " + h.shape().str() +
                     " and shortcut " + skip.shape().str() + " disagree");
  }
  return add(skip, h);
}

}  // namespace natseg
