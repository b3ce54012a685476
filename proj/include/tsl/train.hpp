#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tsl/model.hpp"
#include "tsl/video.hpp"

namespace tsl {

struct TrainConfig {
  int unroll{10};
  double lr{0.002};
  double decay{0.9};
  double eps{1e-8};
  int batch{4};
  int steps{200};
  std::uint64_t seed{1};
  std::string freeze_through;  // freeze layers up to and including this name
  bool augment{true};          // horizontal flip, consistent across a window
};

// TSL_SEED overrides the configured seed when set.
std::uint64_t resolve_seed(std::uint64_t config_seed);

struct RmspropState {
  std::map<std::string, std::vector<float>> v;
};

// v <- decay v + (1-decay) g^2;  w <- w - lr g / sqrt(v + eps)
void rmsprop_step(ParamStore& weights,
                  const std::map<std::string, std::vector<float>>& grads,
                  RmspropState& state, double lr, double decay = 0.9,
                  double eps = 1e-8);

struct TransferReport {
  std::vector<std::string> copied;
  std::vector<std::string> shape_mismatch;  // name exists, dims differ (kept fresh)
  std::vector<std::string> missing;         // in target only
  std::vector<std::string> unused;          // in source only
  std::string str() const;
};

// Copies every parameter whose name and shape match; everything else is
// reported so stage-2 can diagnose a checkpoint/spec mismatch by layer name.
TransferReport transfer_params(const ParamStore& from, ModelInstance& to);

// All layer names up to and including `through` on the main chain.
std::set<std::string> frozen_layers(const ArchSpec& spec, const std::string& through);

// Unrolled forward over consecutive frames on one tape with zero initial
// state; loss is the mean per-frame multibox loss.
struct WindowRefs {
  int loss{-1};
  std::vector<int> frame_losses;
};
WindowRefs window_forward(Tape<float>& tp, const ModelInstance& model,
                          const WeightRefs& w, const std::vector<Anchor>& anchors,
                          const std::vector<Tensor>& frames,
                          const std::vector<FrameGroundTruth>& gt);

struct TrainResult {
  std::vector<double> losses;  // one entry per optimizer step
};

// Stage 1: single-frame training (unroll forced to 1, no state).
TrainResult train_stage1(ModelInstance& model, const Dataset& data,
                         const TrainConfig& cfg);

// Stage 2: loads the stage-1 weights, freezes cfg.freeze_through and below,
// trains on unrolled windows with truncated backpropagation.
TrainResult train_stage2(ModelInstance& model, const ParamStore& stage1,
                         const Dataset& data, const TrainConfig& cfg);

// mAP over seeded 20-frame minival segments, state reset per segment,
// occluding each gt box with probability p.
double evaluate_model(const ModelInstance& model, const Dataset& data,
                      double occlusion_p, std::uint64_t seed);

struct AblationRow {
  std::string variant;
  double map{0};
  std::int64_t params{0};   // full-scale dims for paper comparison
  std::int64_t mac{0};
};
std::string ablation_csv(const std::vector<AblationRow>& rows);

// kind in {placement, layer_type, bottleneck_dim, multi_placement, occlusion};
// trains toy models per variant and reports full-scale cost columns.
std::vector<AblationRow> run_ablation(const std::string& kind, const TrainConfig& cfg,
                                      int n_train_videos, int n_eval_videos);

// Occlusion-robustness comparison: stage-1 single-frame baseline vs a
// width-preserving Bottleneck-LSTM finetuned from it, both evaluated on the
// same videos (which keep their intrinsic blankout flicker) across an
// occlusion grid. Budgets are the tuned toy defaults (~45 s per seed).
struct ProtocolResult {
  std::vector<double> ps{0.0, 0.25, 0.5, 0.75};
  std::vector<double> baseline_map;
  std::vector<double> lstm_map;
};
ProtocolResult occlusion_protocol(std::uint64_t seed, int n_train_videos = 60,
                                  int n_eval_videos = 12, int stage1_steps = 1500,
                                  int stage2_steps = 1000);

}  // namespace tsl
