#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tsl/tape.hpp"

namespace tsl {

// Boxes are (cx, cy, w, h) in normalized image coordinates.
struct Box {
  double cx{0}, cy{0}, w{0}, h{0};
};

struct Anchor {
  Box box;
  int fm_index{0};
};

struct Detection {
  int cls{0};  // 0 is background and never emitted
  double score{0};
  Box box;
};

struct GroundTruthBox {
  int cls{0};
  Box box;
};
using FrameGroundTruth = std::vector<GroundTruthBox>;

// One anchor set per feature map; scales[i] pairs with fm_shapes[i]. Each cell
// gets one anchor per aspect ratio with area scale^2.
std::vector<Anchor> generate_anchors(const std::vector<std::pair<int, int>>& fm_shapes,
                                     const std::vector<double>& scales,
                                     const std::vector<double>& aspect_ratios);

double iou(const Box& a, const Box& b);

// Center-offset / log-size encoding relative to an anchor, SSD variance
// constants 0.1 (center) and 0.2 (size).
std::array<double, 4> encode_box(const Box& gt, const Box& anchor);
Box decode_box(const std::array<double, 4>& offsets, const Box& anchor);

struct AnchorTarget {
  int cls{0};  // 0 = background
  std::array<double, 4> offsets{0, 0, 0, 0};
};

// Bipartite best match (every gt claims its best anchor) plus threshold
// matching for the rest. Throws on an empty anchor list.
std::vector<AnchorTarget> assign_targets(const std::vector<Anchor>& anchors,
                                         const FrameGroundTruth& gt,
                                         double match_thresh = 0.5);

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh = 0.5,
                           int max_out = 100);

struct EvalResult {
  std::vector<double> per_class_ap;  // indexed by class id; 0 unused
  double map{0};
};

// mAP at the given IoU threshold, all-point interpolation, averaged over
// classes with at least one ground-truth instance.
EvalResult evaluate_map(const std::vector<std::vector<Detection>>& detections,
                        const std::vector<FrameGroundTruth>& ground_truth,
                        int num_classes, double iou_thresh = 0.5);

struct MinivalSegment {
  int video{0};
  int start{0};
  int length{0};
};

// One contiguous window per video (whole video if shorter), seeded.
std::vector<MinivalSegment> select_minival(const std::vector<int>& video_lengths,
                                           std::uint64_t seed, int window = 20);

// One detection per line: "frame_id class score cx cy w h".
std::string detections_to_text(const std::vector<std::vector<Detection>>& per_frame);
std::vector<std::vector<Detection>> detections_from_text(const std::string& text);

template <class T>
struct MultiboxLossParts {
  T pos_ce{0}, neg_ce{0}, loc{0};
  int npos{0}, nneg{0};
};

// SSD multibox loss over one frame's predictions. `logits` is (1,1,A,C+1),
// `loc` is (1,1,A,4). Hard negatives are picked by descending loss up to
// neg_ratio per positive and each scaled by neg_scale; with no positives a
// floor of min(zero_pos_floor, available) negatives keeps the gradient alive.
// The total is normalized by max(1, npos).
template <class T>
typename Tape<T>::Ref multibox_loss(Tape<T>& tp, typename Tape<T>::Ref logits,
                                    typename Tape<T>::Ref loc,
                                    const std::vector<AnchorTarget>& targets,
                                    T neg_scale = T(0.3), int neg_ratio = 10,
                                    int zero_pos_floor = 30,
                                    MultiboxLossParts<T>* parts = nullptr) {
  const TensorT<T>& lv = tp.value(logits);
  const TensorT<T>& bv = tp.value(loc);
  const int a_count = lv.dims.w;
  const int nc = lv.dims.c;  // classes incl. background
  check(lv.dims.n == 1 && lv.dims.h == 1, "logits must be (1,1,A,C), got " + lv.dims.str());
  check(bv.dims.n == 1 && bv.dims.h == 1 && bv.dims.w == a_count && bv.dims.c == 4,
        "loc must be (1,1,A,4) matching logits, got " + bv.dims.str());
  check(static_cast<int>(targets.size()) == a_count,
        "target count " + std::to_string(targets.size()) + " != anchor count " +
            std::to_string(a_count));

  // Per-anchor softmax probabilities and cross-entropy.
  std::vector<T> probs(static_cast<std::size_t>(a_count) * nc);
  std::vector<T> ce(a_count);
  for (int i = 0; i < a_count; ++i) {
    const T* row = lv.data.data() + static_cast<std::size_t>(i) * nc;
    T mx = row[0];
    for (int c = 1; c < nc; ++c) mx = std::max(mx, row[c]);
    T z = T(0);
    for (int c = 0; c < nc; ++c) z += std::exp(row[c] - mx);
    for (int c = 0; c < nc; ++c)
      probs[static_cast<std::size_t>(i) * nc + c] = std::exp(row[c] - mx) / z;
    int cls = targets[i].cls;
    check(cls >= 0 && cls < nc, "target class out of range");
    ce[i] = -(row[cls] - mx - std::log(z));
  }

  std::vector<int> positives, negatives;
  for (int i = 0; i < a_count; ++i)
    (targets[i].cls > 0 ? positives : negatives).push_back(i);
  const int npos = static_cast<int>(positives.size());
  int want = npos > 0 ? neg_ratio * npos : zero_pos_floor;
  int nneg = std::min<int>(want, static_cast<int>(negatives.size()));
  std::partial_sort(negatives.begin(), negatives.begin() + nneg, negatives.end(),
                    [&](int a, int b) { return ce[a] > ce[b]; });
  negatives.resize(nneg);

  const T norm = T(1) / T(std::max(1, npos));
  T pos_ce = T(0), neg_ce = T(0), loc_sum = T(0);
  std::vector<T> loc_grad(static_cast<std::size_t>(a_count) * 4, T(0));
  for (int i : positives) {
    pos_ce += ce[i];
    for (int d = 0; d < 4; ++d) {
      T diff = bv.data[static_cast<std::size_t>(i) * 4 + d] - T(targets[i].offsets[d]);
      T ad = std::abs(diff);
      loc_sum += ad < T(1) ? T(0.5) * diff * diff : ad - T(0.5);
      loc_grad[static_cast<std::size_t>(i) * 4 + d] =
          ad < T(1) ? diff : (diff > T(0) ? T(1) : T(-1));
    }
  }
  for (int i : negatives) neg_ce += ce[i];

  if (parts) {
    parts->pos_ce = pos_ce;
    parts->neg_ce = neg_ce;
    parts->loc = loc_sum;
    parts->npos = npos;
    parts->nneg = nneg;
  }

  TensorT<T> out(Shape{1, 1, 1, 1});
  out.data[0] = (pos_ce + neg_scale * neg_ce + loc_sum) * norm;
  check(std::isfinite(out.data[0]), "multibox loss is not finite");
  bool ng = tp.needs_grad(logits) || tp.needs_grad(loc);
  auto back = [logits, loc, targets, probs = std::move(probs),
               loc_grad = std::move(loc_grad), positives, negatives, nc, neg_scale,
               norm, self = static_cast<typename Tape<T>::Ref>(tp.size())](Tape<T>& t) {
    const T g = t.grad(self)[0];
    if (t.needs_grad(logits)) {
      std::vector<T>& gl = t.grad(logits);
      auto accumulate = [&](int i, T w) {
        int cls = targets[i].cls;
        for (int c = 0; c < nc; ++c) {
          T p = probs[static_cast<std::size_t>(i) * nc + c];
          gl[static_cast<std::size_t>(i) * nc + c] += w * (p - (c == cls ? T(1) : T(0)));
        }
      };
      for (int i : positives) accumulate(i, g * norm);
      for (int i : negatives) accumulate(i, g * norm * neg_scale);
    }
    if (t.needs_grad(loc)) {
      std::vector<T>& gb = t.grad(loc);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * norm * loc_grad[i];
    }
  };
  return tp.adopt(std::move(out), ng,
                  ng ? std::function<void(Tape<T>&)>(back)
                     : std::function<void(Tape<T>&)>());
}

}  // namespace tsl
