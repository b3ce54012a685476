#pragma once

#include <cstdint>
#include <vector>

#include "tsl/detection.hpp"
#include "tsl/tensor.hpp"

namespace tsl {

struct VideoParams {
  int resolution{64};
  int length{40};
  int num_objects{2};
  int num_classes{3};   // class <-> shape: 1 circle, 2 square, 3 triangle
  double speed{2.0};    // pixels per frame; jitter scales with it
  double jitter{0.5};   // per-frame positional noise, pixels
  double blankout_p{0.0};  // per-object per-frame chance of not being drawn
  double pixel_noise{0.0};
};

struct VideoSequence {
  std::vector<Tensor> frames;            // (1,res,res,3) in [0,1]
  std::vector<FrameGroundTruth> gt;      // tracks objects; boxes exact
  std::uint64_t seed{0};
};

// Colored geometric shapes with constant velocity plus jitter, bouncing at
// the borders. Deterministic per seed; speed 0 yields identical frames.
VideoSequence generate_video(std::uint64_t seed, const VideoParams& params);

// Occludes each gt box independently with probability p: a zeroed rectangle
// with sides drawn uniformly in [H/2, 3H/4] x [W/2, 3W/4] of the box, placed
// fully inside it. Ground truth is unchanged.
VideoSequence occlude(const VideoSequence& seq, double p, std::uint64_t seed);

struct Dataset {
  std::vector<VideoSequence> videos;
};

Dataset make_dataset(int n_videos, const VideoParams& params, std::uint64_t seed);

}  // namespace tsl
