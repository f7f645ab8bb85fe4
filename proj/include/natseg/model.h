#ifndef NATSEG_MODEL_H_
#define NATSEG_MODEL_H_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "natseg/hetconv.h"
#include "natseg/nat.h"

namespace natseg {

enum class Variant {
  kV1,       // plain 3x3 convs + NAT
  kV2,       // HetConv + NAT
  kResUNet,  // plain 3x3 convs, no NAT
};

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

// Channel widths of E1, E2, E3 and the bridge as published for V2. They do
// not follow a doubling rule, so base_width 66 on V2 selects them verbatim.
inline constexpr std::array<int, 4> kPublishedV2Widths = {66, 126, 252, 510};

// base * (1, 2, 4, 8), or the published V2 schedule for (V2, 66).
std::array<int, 4> stage_widths(Variant variant, int base_width);

struct ModelConfig {
  Variant variant = Variant::kV2;
  int input_h = 48;
  int input_w = 48;
  int base_width = 12;
  std::array<int, 4> widths = {12, 24, 48, 96};
  NATConfig nat;  // nat.dim is always widths[3]
  std::uint64_t seed = 0;

  // Widths derived from (variant, base_width); nat.dim synced.
  static ModelConfig make(Variant variant, int input_size, int base_width,
                          std::uint64_t seed = 0);
  // 384 x 384, base 64 (V1 / baseline) or 66 (V2).
  static ModelConfig paper(Variant variant);
  // 48 x 48, base 16 (V1 / baseline) or 12 (V2).
  static ModelConfig desk(Variant variant);

  bool has_nat() const { return variant != Variant::kResUNet; }
  ConvKind conv_kind() const {
    return variant == Variant::kV2 ? ConvKind::kHet : ConvKind::kPlain;
  }

  // Throws ConfigError naming the offending field.
  void validate() const;
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  // (n, 3, H, W) image batch -> (n, 1, H, W) road probabilities.
  Tensor forward(const Tensor& x);
  // The same pass without the final sigmoid.
  Tensor forward_logits(const Tensor& x);

  void set_mode(NormMode mode);
  NormMode mode() const { return mode_; }

  ParamList parameters() const;
  BufferList buffers();
  std::int64_t param_count() const;
  const ModelConfig& config() const { return cfg_; }

  ResidualUnit e1, e2, e3, bridge;
  std::optional<NATParams> nat;
  ResidualUnit d1, d2, d3;
  Conv2dParams head;

 private:
  ModelConfig cfg_;
  NormMode mode_ = NormMode::kTrain;
};

struct LayerSummaryRow {
  std::string unit;
  std::string filter;
  int stride = 0;  // 0 renders as "-"
  int out_h = 0;
  int out_w = 0;
  int out_c = 0;
  std::int64_t params = 0;
};

// One row per layer of the architecture table: Input, two conv rows for each
// residual unit (E1..E3, Bridge, D1..D3), NAT, Output. A unit's shortcut
// projection is counted in its first row, pre-activation BN with its conv.
std::vector<LayerSummaryRow> summarize(const ModelConfig& cfg);

std::string render_summary_text(const std::vector<LayerSummaryRow>& rows);
std::string render_summary_csv(const std::vector<LayerSummaryRow>& rows);

}  // namespace natseg

#endif  // NATSEG_MODEL_H_
