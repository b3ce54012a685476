#include "tsl/video.hpp"

#include <cmath>
#include <random>

namespace tsl {

namespace {

struct ObjectState {
  double cx, cy, vx, vy, size;
  int cls;
};

struct Color {
  float r, g, b;
};

Color class_color(int cls) {
  static const Color palette[] = {{0.90f, 0.20f, 0.20f},
                                  {0.20f, 0.90f, 0.20f},
                                  {0.25f, 0.35f, 0.95f},
                                  {0.90f, 0.80f, 0.20f},
                                  {0.80f, 0.25f, 0.85f},
                                  {0.20f, 0.85f, 0.85f}};
  return palette[(cls - 1) % 6];
}

bool inside_shape(int cls, double px, double py, double cx, double cy, double s) {
  double dx = px - cx, dy = py - cy;
  switch ((cls - 1) % 3) {
    case 0:  // circle
      return dx * dx + dy * dy <= (s / 2) * (s / 2);
    case 1:  // square
      return std::abs(dx) <= s / 2 && std::abs(dy) <= s / 2;
    default: {  // point-up triangle filling the bounding box
      double t = (py - (cy - s / 2)) / s;
      return t >= 0 && t <= 1 && std::abs(dx) <= (s / 2) * t;
    }
  }
}

void draw(Tensor& frame, const ObjectState& o) {
  const int res = frame.dims.h;
  Color col = class_color(o.cls);
  int y0 = std::max(0, static_cast<int>(std::floor(o.cy - o.size / 2)));
  int y1 = std::min(res - 1, static_cast<int>(std::ceil(o.cy + o.size / 2)));
  int x0 = std::max(0, static_cast<int>(std::floor(o.cx - o.size / 2)));
  int x1 = std::min(res - 1, static_cast<int>(std::ceil(o.cx + o.size / 2)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (inside_shape(o.cls, x + 0.5, y + 0.5, o.cx, o.cy, o.size)) {
        std::size_t base = (static_cast<std::size_t>(y) * res + x) * 3;
        frame.data[base + 0] = col.r;
        frame.data[base + 1] = col.g;
        frame.data[base + 2] = col.b;
      }
}

void bounce(double& p, double& v, double lo, double hi) {
  while (p < lo || p > hi) {
    if (p < lo) {
      p = 2 * lo - p;
      v = -v;
    } else {
      p = 2 * hi - p;
      v = -v;
    }
  }
}

}  // namespace

VideoSequence generate_video(std::uint64_t seed, const VideoParams& params) {
  check(params.resolution >= 16, "video resolution too small");
  check(params.length >= 1 && params.num_objects >= 1, "empty video request");
  check(params.num_classes >= 1, "need at least one class");
  std::mt19937_64 rng(seed);
  const int res = params.resolution;
  const double jitter = params.speed == 0 ? 0.0 : params.jitter;

  std::vector<ObjectState> objects;
  std::uniform_real_distribution<double> usize(res * 0.18, res * 0.34);
  std::uniform_real_distribution<double> uangle(0.0, 2.0 * 3.14159265358979323846);
  for (int i = 0; i < params.num_objects; ++i) {
    ObjectState o;
    o.cls = 1 + static_cast<int>(rng() % params.num_classes);
    o.size = usize(rng);
    std::uniform_real_distribution<double> upos(o.size / 2, res - o.size / 2);
    o.cx = upos(rng);
    o.cy = upos(rng);
    double ang = uangle(rng);
    o.vx = params.speed * std::cos(ang);
    o.vy = params.speed * std::sin(ang);
    objects.push_back(o);
  }

  std::normal_distribution<double> njit(0.0, jitter);
  std::uniform_real_distribution<double> unoise(-params.pixel_noise, params.pixel_noise);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  VideoSequence seq;
  seq.seed = seed;
  for (int t = 0; t < params.length; ++t) {
    if (t > 0)
      for (ObjectState& o : objects) {
        o.cx += o.vx + (jitter > 0 ? njit(rng) : 0.0);
        o.cy += o.vy + (jitter > 0 ? njit(rng) : 0.0);
        bounce(o.cx, o.vx, o.size / 2, res - o.size / 2);
        bounce(o.cy, o.vy, o.size / 2, res - o.size / 2);
      }
    Tensor frame(Shape{1, res, res, 3});
    for (auto& v : frame.data) v = 0.10f;
    FrameGroundTruth gt;
    for (const ObjectState& o : objects) {
      bool visible = params.blankout_p == 0 || u01(rng) >= params.blankout_p;
      if (visible) draw(frame, o);
      GroundTruthBox g;
      g.cls = o.cls;
      g.box = {o.cx / res, o.cy / res, o.size / res, o.size / res};
      gt.push_back(g);  // tracked even when blanked out
    }
    if (params.pixel_noise > 0)
      for (auto& v : frame.data)
        v = std::clamp(v + static_cast<float>(unoise(rng)), 0.0f, 1.0f);
    seq.frames.push_back(std::move(frame));
    seq.gt.push_back(std::move(gt));
  }
  return seq;
}

VideoSequence occlude(const VideoSequence& seq, double p, std::uint64_t seed) {
  check(p >= 0.0 && p <= 1.0, "occlusion probability must be in [0, 1]");
  VideoSequence out = seq;
  if (p == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (std::size_t t = 0; t < out.frames.size(); ++t) {
    Tensor& frame = out.frames[t];
    const int res = frame.dims.h;
    for (const GroundTruthBox& g : out.gt[t]) {
      if (u01(rng) >= p) continue;
      // box pixel extent, clipped to the image
      int bx0 = std::max(0, static_cast<int>(std::lround((g.box.cx - g.box.w / 2) * res)));
      int by0 = std::max(0, static_cast<int>(std::lround((g.box.cy - g.box.h / 2) * res)));
      int bx1 = std::min(res, static_cast<int>(std::lround((g.box.cx + g.box.w / 2) * res)));
      int by1 = std::min(res, static_cast<int>(std::lround((g.box.cy + g.box.h / 2) * res)));
      int bw = bx1 - bx0, bh = by1 - by0;
      if (bw < 2 || bh < 2) continue;
      std::uniform_int_distribution<int> dw(bw / 2, bw * 3 / 4);
      std::uniform_int_distribution<int> dh(bh / 2, bh * 3 / 4);
      int w = dw(rng), h = dh(rng);
      std::uniform_int_distribution<int> dx(bx0, bx1 - w);
      std::uniform_int_distribution<int> dy(by0, by1 - h);
      int x0 = dx(rng), y0 = dy(rng);
      for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) {
          std::size_t base = (static_cast<std::size_t>(y) * res + x) * 3;
          frame.data[base + 0] = frame.data[base + 1] = frame.data[base + 2] = 0.0f;
        }
    }
  }
  return out;
}

Dataset make_dataset(int n_videos, const VideoParams& params, std::uint64_t seed) {
  Dataset d;
  for (int i = 0; i < n_videos; ++i)
    d.videos.push_back(generate_video(seed * 7919u + i, params));
  return d;
}

}  // namespace tsl
