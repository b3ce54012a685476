#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tsl/arch.hpp"
#include "tsl/checkpoint.hpp"
#include "tsl/detection.hpp"

namespace tsl {

// A realized network: the spec plus concrete weights. Partition boundaries
// (Eq.-1 sub-networks g_0..g_m) fall at the recurrent layers.
struct ModelInstance {
  ArchSpec spec;
  ParamStore params;
  std::vector<std::size_t> recurrent_sites;  // indices into spec.layers

  int m() const { return static_cast<int>(recurrent_sites.size()); }
};

// Parameter names for one layer, in deterministic order.
std::vector<ParamSpec> layer_param_specs(const LayerDesc& l);

// Builds weights for the spec with seeded He-style initialization.
ModelInstance compose(const ArchSpec& spec, std::uint64_t seed);

// Recurrent state carried between frames. Tensors start empty; lstm/gru slots
// are zero-filled at first use, averaging passes the first frame through.
struct ModelState {
  std::vector<Tensor> h, c;
};
ModelState make_state(const ModelInstance& model);

// --- tape-level API (training shares one tape across an unrolled window) ---

struct WeightRefs {
  std::map<std::string, int> ref;
  int at(const std::string& name) const;
  bool has(const std::string& name) const { return ref.count(name) != 0; }
};

// Registers every parameter as a tape input; layers named in `frozen` (and
// non-trainable uses) get requires_grad = false.
WeightRefs register_weights(Tape<float>& tp, const ModelInstance& model,
                            const std::set<std::string>& frozen = {},
                            bool trainable = true);

struct FrameRefs {
  std::vector<int> heads;                 // raw head outputs, spec head order
  std::vector<RecurrentStateRefs> state;  // new state per recurrent site
};

// One frame through the network. `state` entries with h < 0 are treated as
// the zero/first-frame state.
FrameRefs model_forward(Tape<float>& tp, const ModelInstance& model,
                        const WeightRefs& w, int input,
                        const std::vector<RecurrentStateRefs>& state);

// Flattens all head outputs into per-anchor (1,1,A,C+1) logits and (1,1,A,4)
// box offsets, in anchor order matching build_anchors.
struct HeadRefs {
  int logits{-1};
  int loc{-1};
};
HeadRefs flatten_heads(Tape<float>& tp, const ModelInstance& model,
                       const std::vector<int>& heads);

// Anchor list in head-output order for the spec at its input resolution.
std::vector<Anchor> build_anchors(const ArchSpec& spec);

// --- inference ---

struct InferenceConfig {
  double score_thresh{0.01};
  double nms_iou{0.5};
  int max_detections{100};
};

struct StepResult {
  std::vector<Detection> detections;
  ModelState state;
};

StepResult step_frame(const ModelInstance& model, const Tensor& frame,
                      const ModelState& state, const InferenceConfig& cfg = {});

std::vector<std::vector<Detection>> run_sequence(const ModelInstance& model,
                                                 const std::vector<Tensor>& frames,
                                                 const InferenceConfig& cfg = {});

}  // namespace tsl
