#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tsl/recurrent.hpp"
#include "tsl/tensor.hpp"

namespace tsl {

enum class LayerKind {
  full_conv,
  separable_conv,
  bottleneck_lstm,
  conv_lstm,
  conv_gru,
  averaging,
  box_head,
};

const char* layer_kind_name(LayerKind k);
LayerKind parse_layer_kind(const std::string& s);

struct LayerDesc {
  std::string name;
  LayerKind kind{LayerKind::separable_conv};
  int kernel{3};
  int stride{1};
  int in_ch{0};
  int out_ch{0};
  BottleneckForm form{BottleneckForm::table1};
  bool bias{false};
  // Producing layer for branches (box heads); empty means the previous layer.
  std::string input;
  // For box heads: anchor scale of the source feature map.
  double anchor_scale{0.0};

  bool is_recurrent() const {
    return kind == LayerKind::bottleneck_lstm || kind == LayerKind::conv_lstm ||
           kind == LayerKind::conv_gru || kind == LayerKind::averaging;
  }
};

enum class PlacementKind {
  none,
  single_conv13,
  stacked_conv13,
  conv13_fm_prefix,  // Conv13 plus FM1..FMk
  all_feature_maps,
  single_after,
};

struct Placement {
  PlacementKind kind{PlacementKind::single_conv13};
  int fm_prefix{0};        // for conv13_fm_prefix
  std::string after;       // for single_after
  std::string str() const;
};

Placement parse_placement(const std::string& s);

struct BuildOptions {
  double alpha{1.0};
  int resolution{320};
  Placement placement{};
  LayerKind lstm_type{LayerKind::bottleneck_lstm};
  BottleneckForm form{BottleneckForm::table1};
  bool toy{false};
  int num_classes{30};  // foreground classes; background is class 0
  // Table-2-style ablation override: permit an LSTM before Conv13.
  bool allow_early_placement{false};
  // Fig.-4-style override of the bottleneck output width (0 = 0.25x rule).
  int lstm_channels{0};
};

struct ArchSpec {
  std::vector<LayerDesc> layers;
  double alpha{1.0};
  int resolution{320};
  std::string placement;
  bool toy{false};
  int num_classes{30};
  std::vector<double> aspect_ratios{1.0, 2.0, 0.5};

  const LayerDesc* find(const std::string& name) const;
  int anchors_per_cell() const { return static_cast<int>(aspect_ratios.size()); }
};

// Extended width multiplier: alpha_base = a, alpha_ssd = 0.5a, alpha_lstm = 0.25a.
// Round half up, floor 1.
enum class NetworkPart { base, ssd, lstm };
int scale_channels(int base, NetworkPart part, double alpha);

// Emits the Conv1..Conv13 + FM1..FM4 stack (or the shortened toy stack) with
// recurrent layers injected per the placement strategy, plus one box head per
// detection scale.
ArchSpec build_arch(const BuildOptions& opts);

std::string serialize_arch(const ArchSpec& spec);
ArchSpec parse_arch(const std::string& text);
void save_arch(const ArchSpec& spec, const std::string& path);
ArchSpec load_arch(const std::string& path);

}  // namespace tsl
