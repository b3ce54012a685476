#include "tsl/detection.hpp"

#include <algorithm>
#include <random>
#include <sstream>

namespace tsl {

std::vector<Anchor> generate_anchors(const std::vector<std::pair<int, int>>& fm_shapes,
                                     const std::vector<double>& scales,
                                     const std::vector<double>& aspect_ratios) {
  check(fm_shapes.size() == scales.size(), "need one scale per feature map");
  check(!aspect_ratios.empty(), "need at least one aspect ratio");
  std::vector<Anchor> anchors;
  for (std::size_t k = 0; k < fm_shapes.size(); ++k) {
    auto [h, w] = fm_shapes[k];
    check(h >= 1 && w >= 1, "feature map extent must be positive");
    check(scales[k] > 0, "anchor scale must be positive");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (double r : aspect_ratios) {
          check(r > 0, "aspect ratio must be positive");
          Anchor a;
          a.box.cx = (x + 0.5) / w;
          a.box.cy = (y + 0.5) / h;
          a.box.w = scales[k] * std::sqrt(r);
          a.box.h = scales[k] / std::sqrt(r);
          a.fm_index = static_cast<int>(k);
          anchors.push_back(a);
        }
  }
  return anchors;
}

double iou(const Box& a, const Box& b) {
  double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2;
  double ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
  double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2;
  double by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
  double ix = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  double iy = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  double inter = ix * iy;
  double uni = a.w * a.h + b.w * b.h - inter;
  return uni <= 0 ? 0.0 : inter / uni;
}

namespace {
constexpr double kCenterVar = 0.1;
constexpr double kSizeVar = 0.2;
}  // namespace

std::array<double, 4> encode_box(const Box& gt, const Box& anchor) {
  check(gt.w > 0 && gt.h > 0 && anchor.w > 0 && anchor.h > 0,
        "encode_box needs positive extents");
  return {(gt.cx - anchor.cx) / (anchor.w * kCenterVar),
          (gt.cy - anchor.cy) / (anchor.h * kCenterVar),
          std::log(gt.w / anchor.w) / kSizeVar, std::log(gt.h / anchor.h) / kSizeVar};
}

Box decode_box(const std::array<double, 4>& offsets, const Box& anchor) {
  Box b;
  b.cx = offsets[0] * kCenterVar * anchor.w + anchor.cx;
  b.cy = offsets[1] * kCenterVar * anchor.h + anchor.cy;
  b.w = anchor.w * std::exp(offsets[2] * kSizeVar);
  b.h = anchor.h * std::exp(offsets[3] * kSizeVar);
  b.cx = std::clamp(b.cx, -0.1, 1.1);
  b.cy = std::clamp(b.cy, -0.1, 1.1);
  b.w = std::clamp(b.w, 1e-4, 1.2);
  b.h = std::clamp(b.h, 1e-4, 1.2);
  return b;
}

std::vector<AnchorTarget> assign_targets(const std::vector<Anchor>& anchors,
                                         const FrameGroundTruth& gt,
                                         double match_thresh) {
  check(!anchors.empty(), "cannot assign targets with an empty anchor list");
  const int na = static_cast<int>(anchors.size());
  std::vector<int> match(na, -1);       // gt index per anchor
  std::vector<double> match_iou(na, 0);
  std::vector<bool> forced(na, false);

  // Threshold matching: each anchor takes its best gt if above threshold.
  for (int i = 0; i < na; ++i) {
    int best = -1;
    double bv = 0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      double v = iou(anchors[i].box, gt[g].box);
      if (v > bv) {
        bv = v;
        best = static_cast<int>(g);
      }
    }
    match_iou[i] = bv;
    if (best >= 0 && bv >= match_thresh) match[i] = best;
  }

  // Greedy bipartite pass: repeatedly take the highest-IoU (gt, anchor) pair
  // among unclaimed gts and unclaimed anchors, so every gt with any overlap
  // gets an anchor even below the threshold.
  std::vector<bool> gt_claimed(gt.size(), false);
  for (std::size_t round = 0; round < gt.size(); ++round) {
    int bg = -1, ba = -1;
    double bv = 0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (gt_claimed[g]) continue;
      for (int i = 0; i < na; ++i) {
        if (forced[i]) continue;
        double v = iou(anchors[i].box, gt[g].box);
        if (v > bv) {
          bv = v;
          bg = static_cast<int>(g);
          ba = i;
        }
      }
    }
    if (bg < 0) break;  // remaining gts have no overlap with any free anchor
    match[ba] = bg;
    match_iou[ba] = bv;
    forced[ba] = true;
    gt_claimed[bg] = true;
  }

  std::vector<AnchorTarget> out(na);
  for (int i = 0; i < na; ++i) {
    if (match[i] < 0) continue;
    const GroundTruthBox& g = gt[match[i]];
    check(g.cls >= 1, "ground-truth class ids start at 1");
    out[i].cls = g.cls;
    out[i].offsets = encode_box(g.box, anchors[i].box);
  }
  return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh, int max_out) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    if (static_cast<int>(kept.size()) >= max_out) break;
    bool suppressed = false;
    for (const Detection& k : kept)
      if (k.cls == d.cls && iou(k.box, d.box) > iou_thresh) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

EvalResult evaluate_map(const std::vector<std::vector<Detection>>& detections,
                        const std::vector<FrameGroundTruth>& ground_truth,
                        int num_classes, double iou_thresh) {
  check(detections.size() == ground_truth.size(),
        "detections and ground truth must cover the same frames");
  EvalResult res;
  res.per_class_ap.assign(num_classes + 1, 0.0);
  int classes_with_gt = 0;
  for (int cls = 1; cls <= num_classes; ++cls) {
    struct Cand {
      int frame;
      double score;
      const Box* box;
    };
    std::vector<Cand> cands;
    int total_gt = 0;
    for (std::size_t f = 0; f < ground_truth.size(); ++f) {
      for (const auto& g : ground_truth[f])
        if (g.cls == cls) ++total_gt;
      for (const auto& d : detections[f])
        if (d.cls == cls) cands.push_back({static_cast<int>(f), d.score, &d.box});
    }
    if (total_gt == 0) continue;
    ++classes_with_gt;
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.score > b.score; });

    std::vector<std::vector<bool>> used(ground_truth.size());
    for (std::size_t f = 0; f < ground_truth.size(); ++f)
      used[f].assign(ground_truth[f].size(), false);

    std::vector<int> tp(cands.size(), 0);
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const auto& gt = ground_truth[cands[i].frame];
      int best = -1;
      double bv = iou_thresh;
      for (std::size_t g = 0; g < gt.size(); ++g) {
        if (gt[g].cls != cls || used[cands[i].frame][g]) continue;
        double v = iou(*cands[i].box, gt[g].box);
        if (v >= bv) {
          bv = v;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) {
        tp[i] = 1;
        used[cands[i].frame][best] = true;
      }
    }

    // All-point interpolation: area under the precision envelope.
    std::vector<double> recall, precision;
    int hits = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      hits += tp[i];
      recall.push_back(static_cast<double>(hits) / total_gt);
      precision.push_back(static_cast<double>(hits) / static_cast<double>(i + 1));
    }
    for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
      precision[i] = std::max(precision[i], precision[i + 1]);
    double ap = 0, prev_r = 0;
    for (std::size_t i = 0; i < recall.size(); ++i) {
      ap += (recall[i] - prev_r) * precision[i];
      prev_r = recall[i];
    }
    res.per_class_ap[cls] = ap;
  }
  if (classes_with_gt > 0) {
    double s = 0;
    for (double ap : res.per_class_ap) s += ap;
    res.map = s / classes_with_gt;
  }
  return res;
}

std::vector<MinivalSegment> select_minival(const std::vector<int>& video_lengths,
                                           std::uint64_t seed, int window) {
  check(window >= 1, "minival window must be at least one frame");
  std::mt19937_64 rng(seed);
  std::vector<MinivalSegment> out;
  for (std::size_t v = 0; v < video_lengths.size(); ++v) {
    int len = video_lengths[v];
    check(len >= 1, "empty video in minival selection");
    MinivalSegment seg;
    seg.video = static_cast<int>(v);
    if (len <= window) {
      seg.start = 0;
      seg.length = len;
    } else {
      std::uniform_int_distribution<int> d(0, len - window);
      seg.start = d(rng);
      seg.length = window;
    }
    out.push_back(seg);
  }
  return out;
}

std::string detections_to_text(const std::vector<std::vector<Detection>>& per_frame) {
  std::ostringstream out;
  for (std::size_t f = 0; f < per_frame.size(); ++f)
    for (const Detection& d : per_frame[f])
      out << f << " " << d.cls << " " << d.score << " " << d.box.cx << " " << d.box.cy
          << " " << d.box.w << " " << d.box.h << "\n";
  return out.str();
}

std::vector<std::vector<Detection>> detections_from_text(const std::string& text) {
  std::vector<std::vector<Detection>> frames;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t f;
    Detection d;
    check(static_cast<bool>(ls >> f >> d.cls >> d.score >> d.box.cx >> d.box.cy >>
                            d.box.w >> d.box.h),
          "malformed detection line: " + line);
    if (f >= frames.size()) frames.resize(f + 1);
    frames[f].push_back(d);
  }
  return frames;
}

}  // namespace tsl
