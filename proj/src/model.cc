#include "natseg/model.h"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "natseg/ops.h"
#include "natseg/rng.h"

namespace natseg {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kV1: return "v1";
    case Variant::kV2: return "v2";
    case Variant::kResUNet: return "resunet";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "v1") return Variant::kV1;
  if (s == "v2") return Variant::kV2;
  if (s == "resunet" || s == "baseline") return Variant::kResUNet;
  throw ConfigError("unknown variant '" + name + "' (expected v1, v2 or resunet)");
}

std::array<int, 4> stage_widths(Variant variant, int base_width) {
  if (variant == Variant::kV2 && base_width == kPublishedV2Widths[0]) return kPublishedV2Widths;
  return {base_width, 2 * base_width, 4 * base_width, 8 * base_width};
}

ModelConfig ModelConfig::make(Variant variant, int input_size, int base_width,
                              std::uint64_t seed) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.input_h = input_size;
  cfg.input_w = input_size;
  cfg.base_width = base_width;
  cfg.widths = stage_widths(variant, base_width);
  cfg.nat.dim = cfg.widths[3];
  cfg.seed = seed;
  return cfg;
}

ModelConfig ModelConfig::paper(Variant variant) {
  return make(variant, 384, variant == Variant::kV2 ? 66 : 64);
}

ModelConfig ModelConfig::desk(Variant variant) {
  return make(variant, 48, variant == Variant::kV2 ? 12 : 16);
}

void ModelConfig::validate() const {
  if (input_h < 8 || input_w < 8 || input_h % 8 != 0 || input_w % 8 != 0) {
    throw ConfigError("input_size: input size must be divisible by 8 (got " +
                      std::to_string(input_h) + "x" + std::to_string(input_w) + ")");
  }
  for (int i = 0; i < 4; ++i) {
    if (widths[i] < 1) throw ConfigError("widths: stage widths must be >= 1");
    if (variant == Variant::kV2 && widths[i] % kHetGroups != 0) {
      throw ConfigError("base_width: V2 needs every stage width divisible by 3 (stage " +
                        std::to_string(i + 1) + " has " + std::to_string(widths[i]) + ")");
    }
  }
  if (has_nat()) {
    if (nat.dim != widths[3]) {
      throw ConfigError("nat.dim: must equal the bridge width " + std::to_string(widths[3]));
    }
    validate_nat_config(nat);
    if (nat.window > std::min(input_h, input_w) / 8) {
      throw ConfigError("nat.window: window " + std::to_string(nat.window) +
                        " exceeds the bridge feature map " + std::to_string(input_h / 8) +
                        "x" + std::to_string(input_w / 8));
    }
  }
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto& w = cfg_.widths;
  const ConvKind kind = cfg_.conv_kind();
  const auto seed = [&](int unit) { return mix_seed(cfg_.seed, static_cast<std::uint64_t>(unit)); };
  e1 = ResidualUnit::make(kind, 3, w[0], 1, seed(1));
  e2 = ResidualUnit::make(kind, w[0], w[1], 2, seed(2));
  e3 = ResidualUnit::make(kind, w[1], w[2], 2, seed(3));
  bridge = ResidualUnit::make(kind, w[2], w[3], 2, seed(4));
  if (cfg_.has_nat()) nat = NATParams::make(cfg_.nat, seed(5));
  d1 = ResidualUnit::make(kind, w[3] + w[2], w[2], 1, seed(6));
  d2 = ResidualUnit::make(kind, w[2] + w[1], w[1], 1, seed(7));
  d3 = ResidualUnit::make(kind, w[1] + w[0], w[0], 1, seed(8));
  head = Conv2dParams::make(w[0], 1, 1, 1, 1, true, seed(9));
  set_mode(NormMode::kTrain);
}

Tensor Model::forward(const Tensor& x) { return sigmoid(forward_logits(x)); }

Tensor Model::forward_logits(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.c != 3 || s.h != cfg_.input_h || s.w != cfg_.input_w) {
    throw ShapeError("model: expected (n,3," + std::to_string(cfg_.input_h) + "," +
                     std::to_string(cfg_.input_w) + ") input, got " + s.str());
  }
  Tensor s1 = residual_unit_forward(x, e1);
  Tensor s2 = residual_unit_forward(s1, e2);
  Tensor s3 = residual_unit_forward(s2, e3);
  Tensor b = residual_unit_forward(s3, bridge);
  if (nat) b = nat_forward(b, *nat, cfg_.nat);
  Tensor u = residual_unit_forward(concat_channels(upsample_nearest2x(b), s3), d1);
  u = residual_unit_forward(concat_channels(upsample_nearest2x(u), s2), d2);
  u = residual_unit_forward(concat_channels(upsample_nearest2x(u), s1), d3);
  return conv2d(u, head);
}

void Model::set_mode(NormMode mode) {
  mode_ = mode;
  for (ResidualUnit* u : {&e1, &e2, &e3, &bridge, &d1, &d2, &d3}) u->set_mode(mode);
}

ParamList Model::parameters() const {
  ParamList out;
  e1.collect(out, "e1");
  e2.collect(out, "e2");
  e3.collect(out, "e3");
  bridge.collect(out, "bridge");
  if (nat) nat->collect(out, "nat");
  d1.collect(out, "d1");
  d2.collect(out, "d2");
  d3.collect(out, "d3");
  head.collect(out, "head");
  return out;
}

BufferList Model::buffers() {
  BufferList out;
  e1.collect_buffers(out, "e1");
  e2.collect_buffers(out, "e2");
  e3.collect_buffers(out, "e3");
  bridge.collect_buffers(out, "bridge");
  d1.collect_buffers(out, "d1");
  d2.collect_buffers(out, "d2");
  d3.collect_buffers(out, "d3");
  return out;
}

std::int64_t Model::param_count() const {
  std::int64_t total = 0;
  for (const auto& p : parameters()) total += p.tensor.numel();
  return total;
}

namespace {

// Closed-form counts so that paper-scale summaries need no weight allocation.
std::int64_t conv_count(ConvKind kind, std::int64_t ci, std::int64_t co) {
  if (kind == ConvKind::kPlain) return 9 * ci * co + co;
  return co * (ci / kHetGroups) * 9 + ci * co + co;
}

std::string filter_text(ConvKind kind, int c_out) {
  std::ostringstream os;
  if (kind == ConvKind::kPlain) {
    os << "3*3*" << c_out;
  } else {
    os << "[3*(3*3*" << c_out / kHetGroups << ")]+[1*(1*1*" << c_out << ")]";
  }
  return os.str();
}

void unit_rows(const std::string& name, ConvKind kind, int c_in, int c_out, int stride,
               int out_h, int out_w, const std::string& note, std::vector<LayerSummaryRow>& rows) {
  std::int64_t first = 2LL * c_in + conv_count(kind, c_in, c_out);
  if (stride != 1 || c_in != c_out) first += static_cast<std::int64_t>(c_in) * c_out + 2LL * c_out;
  rows.push_back({name, filter_text(kind, c_out) + note, stride, out_h, out_w, c_out, first});
  rows.push_back({name, filter_text(kind, c_out) + note, 1, out_h, out_w, c_out,
                  2LL * c_out + conv_count(kind, c_out, c_out)});
}

}  // namespace

std::vector<LayerSummaryRow> summarize(const ModelConfig& cfg) {
  cfg.validate();
  const int h = cfg.input_h, w = cfg.input_w;
  const auto& c = cfg.widths;
  const ConvKind kind = cfg.conv_kind();
  std::vector<LayerSummaryRow> rows;
  rows.push_back({"Input", "-", 0, h, w, 3, 0});
  unit_rows("E1", kind, 3, c[0], 1, h, w, "", rows);
  unit_rows("E2", kind, c[0], c[1], 2, h / 2, w / 2, "", rows);
  unit_rows("E3", kind, c[1], c[2], 2, h / 4, w / 4, "", rows);
  // The published V2 table prints the bridge groups as 3*(3*3*84), which
  // cannot concatenate to 510 channels; the c_out/3 rule gives 170.
  std::string bridge_note;
  if (cfg.variant == Variant::kV2 && cfg.widths == kPublishedV2Widths) {
    bridge_note = " (published table lists 3*(3*3*84); 3*84 != 510)";
  }
  unit_rows("Bridge", kind, c[2], c[3], 2, h / 8, w / 8, bridge_note, rows);
  if (cfg.has_nat()) rows.push_back({"NAT", "-", 1, h / 8, w / 8, c[3], nat_param_count(cfg.nat)});
  unit_rows("D1", kind, c[3] + c[2], c[2], 1, h / 4, w / 4, "", rows);
  unit_rows("D2", kind, c[2] + c[1], c[1], 1, h / 2, w / 2, "", rows);
  unit_rows("D3", kind, c[1] + c[0], c[0], 1, h, w, "", rows);
  rows.push_back({"Output", "1*1", 1, h, w, 1, static_cast<std::int64_t>(c[0]) + 1});
  return rows;
}

std::string render_summary_text(const std::vector<LayerSummaryRow>& rows) {
  std::vector<std::array<std::string, 5>> cells;
  cells.push_back({"Unit", "Filter", "Stride", "Output size", "Params"});
  std::int64_t total = 0;
  std::string previous;
  for (const auto& r : rows) {
    std::ostringstream shape;
    shape << r.out_h << " * " << r.out_w << " * " << r.out_c;
    // Second row of a unit is left blank, as in the architecture table.
    const std::string unit = r.unit == previous ? "" : r.unit;
    previous = r.unit;
    cells.push_back({unit, r.filter, r.stride == 0 ? "-" : std::to_string(r.stride),
                     shape.str(), std::to_string(r.params)});
    total += r.params;
  }
  std::array<std::size_t, 5> width{};
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream os;
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      os << std::left << std::setw(static_cast<int>(width[i])) << row[i];
      if (i + 1 < row.size()) os << "  ";
    }
    os << "\n";
  }
  os << "Total params: " << total << "\n";
  return os.str();
}

std::string render_summary_csv(const std::vector<LayerSummaryRow>& rows) {
  std::ostringstream os;
  os << "unit,filter,stride,out_h,out_w,out_c,params\n";
  for (const auto& r : rows) {
    os << r.unit << "," << r.filter << "," << (r.stride == 0 ? std::string("-") : std::to_string(r.stride))
       << "," << r.out_h << "," << r.out_w << "," << r.out_c << "," << r.params << "\n";
  }
  return os.str();
}

}  // namespace natseg
