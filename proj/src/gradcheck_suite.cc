#include "natseg/gradcheck_suite.h"

#include <cstdio>
#include <functional>

#include "natseg/hetconv.h"
#include "natseg/kernels.h"
#include "natseg/model.h"
#include "natseg/nat.h"
#include "natseg/objectives.h"
#include "natseg/ops.h"
#include "natseg/rng.h"

namespace natseg {
namespace {

class Inputs {
 public:
  explicit Inputs(std::uint64_t seed) : seed_(seed) {}

  Tensor operator()(Shape s, double lo = -1.0, double hi = 1.0, bool grad = false) {
    return Tensor::create(s, fill::Uniform{mix_seed(seed_, next_++), lo, hi}, grad);
  }
  std::uint64_t seed() { return mix_seed(seed_, next_++); }

 private:
  std::uint64_t seed_;
  std::uint64_t next_ = 0;
};

Tensor binary_mask(Shape s, std::uint64_t seed) {
  Tensor t = Tensor::create(s, fill::Uniform{seed, 0.0, 1.0});
  for (Real& v : t.mutable_data()) v = v < Real(0.4) ? 1 : 0;
  return t;
}

class Suite {
 public:
  void add(const std::string& name, const ScalarFn& f, const ParamList& params,
           GradCheckOptions opts = {}) {
    out.push_back({name, grad_check(f, params, opts)});
  }
  std::vector<NamedCheck> out;
};

}  // namespace

std::vector<NamedCheck> gradcheck_ops(std::uint64_t seed) {
  Inputs in(seed);
  Suite s;
  const Shape sh{2, 3, 4, 5};
  // Batch norm over a handful of elements per channel curves sharply, so
  // anything that normalises takes a finer step.
  GradCheckOptions fine;
  fine.step = kGradStep / 10;

  {
    auto a = in(sh, -1, 1, true), b = in(sh, -1, 1, true), w = in(sh);
    s.add("elementwise_add", [=] { return sum(mul(add(a, b), w)); }, {{"a", a}, {"b", b}});
    s.add("elementwise_mul", [=] { return sum(mul(mul(a, b), w)); }, {{"a", a}, {"b", b}});
    s.add("scale_mean", [=] { return mean(mul(scale(a, Real(1.5)), w)); }, {{"a", a}});
  }
  {
    auto a = in(Shape{1, 2, 4, 4}, -1, 1, true), b = in(Shape{1, 3, 4, 4}, -1, 1, true);
    auto w = in(Shape{1, 5, 4, 4});
    s.add("concat_channels", [=] { return sum(mul(concat_channels(a, b), w)); }, {{"a", a}, {"b", b}});
    auto w2 = in(Shape{1, 2, 4, 4});
    s.add("slice_channels", [=] { return sum(mul(slice_channels(concat_channels(a, b), 2, 2), w2)); },
          {{"a", a}, {"b", b}});
  }
  const kernels::ConvAlgorithm prior = kernels::conv_algorithm();
  const std::pair<const char*, kernels::ConvAlgorithm> algos[] = {
      {"reference", kernels::ConvAlgorithm::kReference},
      {"direct", kernels::ConvAlgorithm::kDirect},
      {"im2col", kernels::ConvAlgorithm::kIm2col}};
  for (const auto& [label, algo] : algos) {
    kernels::set_conv_algorithm(algo);
    auto x = in(Shape{1, 6, 6, 6}, -1, 1, true);
    auto p = Conv2dParams::make(6, 6, 3, 2, 3, true, in.seed());
    auto w = in(Shape{1, 6, 3, 3});
    ParamList params{{"x", x}};
    p.collect(params, "conv");
    s.add(std::string("conv2d_") + label, [=] { return sum(mul(conv2d(x, p), w)); }, params);
  }
  kernels::set_conv_algorithm(prior);
  {
    auto x = in(Shape{2, 4, 3, 3}, -1, 1, true);
    auto p = Conv2dParams::make(4, 5, 1, 1, 1, true, in.seed());
    auto w = in(Shape{2, 5, 3, 3});
    ParamList params{{"x", x}};
    p.collect(params, "pw");
    s.add("pointwise_conv", [=] { return sum(mul(pointwise_conv(x, p), w)); }, params);
  }
  for (NormMode mode : {NormMode::kTrain, NormMode::kEval}) {
    auto x = in(Shape{2, 3, 3, 3}, -1, 1, true);
    auto bn = BatchNormState::make(3);
    bn.mode = mode;
    for (Real& v : bn.running_var) v = Real(0.7);
    auto w = in(Shape{2, 3, 3, 3});
    ParamList params{{"x", x}};
    bn.collect(params, "bn");
    s.add(mode == NormMode::kTrain ? "batch_norm_train" : "batch_norm_eval",
          [=] {
            BatchNormState copy = bn;
            return sum(mul(batch_norm(x, copy), w));
          },
          params, fine);
  }
  {
    auto x = in(sh, -1, 1, true), w = in(sh);
    s.add("relu", [=] { return sum(mul(relu(x), w)); }, {{"x", x}});
    s.add("sigmoid", [=] { return sum(mul(sigmoid(x), w)); }, {{"x", x}});
    s.add("softmax_lastdim", [=] { return sum(mul(softmax_lastdim(x), w)); }, {{"x", x}});
    auto w2 = in(Shape{2, 3, 8, 10});
    s.add("upsample_nearest2x", [=] { return sum(mul(upsample_nearest2x(x), w2)); }, {{"x", x}});
  }
  {
    auto layer = HetConvLayer::make(6, 6, 2, in.seed());
    auto x = in(Shape{1, 6, 6, 6}, -1, 1, true);
    auto w = in(Shape{1, 6, 3, 3});
    ParamList params{{"x", x}};
    layer.collect(params, "het");
    s.add("hetconv", [=] { return sum(mul(hetconv_forward(x, layer), w)); }, params);
  }
  for (ConvKind kind : {ConvKind::kPlain, ConvKind::kHet}) {
    auto unit = ResidualUnit::make(kind, 3, 6, 2, in.seed());
    auto x = in(Shape{2, 3, 6, 6}, -1, 1, true);
    auto w = in(Shape{2, 6, 3, 3});
    ParamList params{{"x", x}};
    unit.collect(params, "unit");
    s.add(kind == ConvKind::kPlain ? "residual_unit_plain" : "residual_unit_het",
          [=] {
            ResidualUnit copy = unit;
            return sum(mul(residual_unit_forward(x, copy), w));
          },
          params, fine);
  }
  {
    NATConfig cfg;
    cfg.dim = 4;
    auto params = NATParams::make(cfg, in.seed());
    // Scaled up so the attention weights are far from uniform.
    for (auto* p : {&params.proj_q, &params.proj_k, &params.proj_v}) {
      for (Real& v : p->weight.mutable_data()) v *= 25;
    }
    for (Real& v : params.bias_table.mutable_data()) v *= 25;
    auto x = in(Shape{1, 4, 4, 5}, -1, 1, true);
    auto w = in(Shape{1, 4, 4, 5});
    ParamList list{{"x", x}};
    params.collect(list, "nat");
    s.add("nat_forward", [=] { return sum(mul(nat_forward(x, params, cfg), w)); }, list, fine);
  }
  {
    auto p = in(Shape{1, 1, 4, 4}, 0.1, 0.9, true);
    auto z = in(Shape{1, 1, 4, 4}, -3, 3, true);
    auto y = binary_mask(Shape{1, 1, 4, 4}, in.seed());
    s.add("bce_loss", [=] { return bce_loss(p, y); }, {{"pred", p}}, fine);
    s.add("bce_with_logits_loss", [=] { return bce_with_logits_loss(z, y); }, {{"logits", z}});
    s.add("soft_iou_loss", [=] { return soft_iou_loss(p, y); }, {{"pred", p}}, fine);
  }
  return s.out;
}

std::vector<NamedCheck> gradcheck_model(std::uint64_t seed) {
  Suite s;
  for (Variant v : {Variant::kV1, Variant::kV2}) {
    auto cfg = ModelConfig::desk(v);
    cfg.seed = seed;
    Model m(cfg);
    const Tensor x = Tensor::create(Shape{1, 3, 48, 48}, fill::Uniform{mix_seed(seed, 1), 0.0, 1.0});
    // One horizontal road across the tile.
    Tensor y = Tensor::create(Shape{1, 1, 48, 48});
    for (int c = 0; c < 48; ++c) y.mutable_data()[30 * 48 + c] = 1;
    s.add("model_" + variant_name(v),
          [&m, x, y] { return bce_with_logits_loss(m.forward_logits(x), y); }, m.parameters(),
          GradCheckOptions::model_scope(seed));
  }
  return s.out;
}

std::string render_checks(const std::vector<NamedCheck>& checks) {
  std::string out;
  int failed = 0;
  char line[256];
  for (const auto& c : checks) {
    std::snprintf(line, sizeof(line), "%-24s max_rel_err=%.3e checked=%d excluded=%d %s\n",
                  c.name.c_str(), c.report.max_relative_error, c.report.checked,
                  c.report.excluded, c.report.passed ? "PASS" : "FAIL");
    out += line;
    if (!c.report.passed) {
      ++failed;
      out += c.report.render();
    }
  }
  std::snprintf(line, sizeof(line), "%zu checks, %d failed\n", checks.size(), failed);
  out += line;
  return out;
}

bool all_passed(const std::vector<NamedCheck>& checks) {
  for (const auto& c : checks) {
    if (!c.report.passed) return false;
  }
  return true;
}

}  // namespace natseg
