#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>

#include "tsl/cost_model.hpp"
#include "tsl/train.hpp"

using namespace tsl;

namespace {

ArchSpec toy_spec(const std::string& placement) {
  BuildOptions o;
  o.toy = true;
  o.resolution = 64;
  o.num_classes = 3;
  o.placement = parse_placement(placement);
  return build_arch(o);
}

VideoParams quick_params() {
  VideoParams p;
  p.resolution = 64;
  p.length = 12;
  p.num_objects = 2;
  p.speed = 2.0;
  return p;
}

bool frames_equal(const Tensor& a, const Tensor& b) { return a.data == b.data; }

}  // namespace

TEST_CASE("video generation determinism and statics") {
  VideoParams p = quick_params();
  VideoSequence a = generate_video(42, p);
  VideoSequence b = generate_video(42, p);
  REQUIRE(a.frames.size() == 12);
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    CHECK(frames_equal(a.frames[i], b.frames[i]));
    REQUIRE(a.gt[i].size() == b.gt[i].size());
    for (std::size_t g = 0; g < a.gt[i].size(); ++g) {
      CHECK(a.gt[i][g].cls == b.gt[i][g].cls);
      CHECK(a.gt[i][g].box.cx == b.gt[i][g].box.cx);
    }
  }
  CHECK(!frames_equal(generate_video(43, p).frames[0], a.frames[0]));

  p.speed = 0.0;
  VideoSequence s = generate_video(7, p);
  for (std::size_t i = 1; i < s.frames.size(); ++i) {
    CHECK(frames_equal(s.frames[i], s.frames[0]));
    CHECK(s.gt[i][0].box.cx == s.gt[0][0].box.cx);
  }
}

TEST_CASE("objects bounce and stay within bounds; displacement is bounded") {
  VideoParams p = quick_params();
  p.length = 40;
  p.speed = 4.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    VideoSequence v = generate_video(seed, p);
    for (std::size_t t = 0; t < v.gt.size(); ++t)
      for (std::size_t g = 0; g < v.gt[t].size(); ++g) {
        const Box& b = v.gt[t][g].box;
        CHECK(b.cx - b.w / 2 >= -1e-9);
        CHECK(b.cx + b.w / 2 <= 1 + 1e-9);
        CHECK(b.cy - b.h / 2 >= -1e-9);
        CHECK(b.cy + b.h / 2 <= 1 + 1e-9);
        if (t > 0) {
          const Box& prev = v.gt[t - 1][g].box;
          double bound = (p.speed + 5 * p.jitter) / p.resolution;
          CHECK(std::abs(b.cx - prev.cx) <= 2 * bound);
          CHECK(std::abs(b.cy - prev.cy) <= 2 * bound);
        }
      }
  }
}

TEST_CASE("occlusion: identity at p=0, size bounds at p=1") {
  // hand-built video: uniform white frame, one exact 8x8 box
  VideoSequence v;
  Tensor frame(Shape{1, 64, 64, 3});
  for (auto& x : frame.data) x = 1.0f;
  v.frames = {frame};
  v.gt = {{{1, {0.5, 0.5, 8.0 / 64, 8.0 / 64}}}};

  VideoSequence same = occlude(v, 0.0, 5);
  CHECK(frames_equal(same.frames[0], v.frames[0]));
  CHECK_THROWS_AS(occlude(v, 1.5, 5), std::invalid_argument);

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    VideoSequence occ = occlude(v, 1.0, seed);
    CHECK(occ.gt[0][0].box.cx == v.gt[0][0].box.cx);  // gt untouched
    // find the zeroed rectangle
    int x0 = 64, x1 = -1, y0 = 64, y1 = -1, zeros = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (occ.frames[0].data[(y * 64 + x) * 3] == 0.0f) {
          ++zeros;
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
        }
    int w = x1 - x0 + 1, h = y1 - y0 + 1;
    REQUIRE(zeros > 0);
    CHECK(zeros == w * h);  // a solid rectangle
    CHECK(w >= 4);
    CHECK(w <= 6);
    CHECK(h >= 4);
    CHECK(h <= 6);
    CHECK(x0 >= 28);
    CHECK(x1 <= 35);
    CHECK(y0 >= 28);
    CHECK(y1 <= 35);
    // reproducible
    VideoSequence occ2 = occlude(v, 1.0, seed);
    CHECK(frames_equal(occ.frames[0], occ2.frames[0]));
  }
}

TEST_CASE("occlusion frequency over 10^4 boxes lands within p +/- 0.02") {
  VideoSequence v;
  Tensor frame(Shape{1, 64, 64, 3});
  for (auto& x : frame.data) x = 1.0f;
  for (int i = 0; i < 100; ++i) {
    v.frames.push_back(frame);
    FrameGroundTruth gt;
    for (int g = 0; g < 100; ++g) {
      // disjoint 10x10 grid of 6-pixel boxes
      double cx = (2 + (g % 10) * 6 + 3.0) / 64;
      double cy = (2 + (g / 10) * 6 + 3.0) / 64;
      gt.push_back({1, {cx, cy, 6.0 / 64, 6.0 / 64}});
    }
    v.gt.push_back(gt);
  }
  const double p = 0.3;
  VideoSequence occ = occlude(v, p, 99);
  int occluded = 0, total = 0;
  for (std::size_t t = 0; t < occ.frames.size(); ++t)
    for (const auto& g : occ.gt[t]) {
      ++total;
      int x0 = static_cast<int>(std::lround((g.box.cx - g.box.w / 2) * 64));
      int y0 = static_cast<int>(std::lround((g.box.cy - g.box.h / 2) * 64));
      bool zero = false;
      for (int y = y0; y < y0 + 6 && !zero; ++y)
        for (int x = x0; x < x0 + 6 && !zero; ++x)
          zero = occ.frames[t].data[(y * 64 + x) * 3] == 0.0f;
      if (zero) ++occluded;
    }
  CHECK(total == 10000);
  CHECK(std::abs(static_cast<double>(occluded) / total - p) < 0.02);
}

TEST_CASE("rmsprop") {
  ParamStore w;
  Tensor t(Shape{1, 1, 1, 4});
  t.data = {1.0f, -2.0f, 3.0f, 0.5f};
  w.add("x", t);
  RmspropState st;

  SUBCASE("zero gradient leaves weights unchanged") {
    rmsprop_step(w, {{"x", {0, 0, 0, 0}}}, st, 0.01);
    CHECK(w.at("x").data == t.data);
  }
  SUBCASE("first step closed form") {
    std::vector<float> g = {0.5f, -1.0f, 2.0f, 0.0f};
    rmsprop_step(w, {{"x", g}}, st, 0.01, 0.9, 1e-8);
    for (int i = 0; i < 4; ++i) {
      double expect = t.data[i] - 0.01 * g[i] / std::sqrt(0.1 * g[i] * g[i] + 1e-8);
      CHECK(w.at("x").data[i] == doctest::Approx(expect).epsilon(1e-6));
    }
  }
  SUBCASE("identical runs produce identical trajectories") {
    ParamStore w2;
    w2.add("x", t);
    RmspropState st2;
    for (int s = 0; s < 5; ++s) {
      std::vector<float> g = {0.1f * s, -0.2f, 0.3f, 0.01f};
      rmsprop_step(w, {{"x", g}}, st, 0.01);
      rmsprop_step(w2, {{"x", g}}, st2, 0.01);
    }
    CHECK(w.at("x").data == w2.at("x").data);
  }
}

TEST_CASE("TSL_SEED overrides the configured seed") {
  unsetenv("TSL_SEED");
  CHECK(resolve_seed(5) == 5);
  setenv("TSL_SEED", "1234", 1);
  CHECK(resolve_seed(5) == 1234);
  unsetenv("TSL_SEED");
}

TEST_CASE("parameter transfer reports name and shape diffs") {
  ModelInstance a = compose(toy_spec("none"), 1);
  ModelInstance b = compose(toy_spec("single_conv13"), 2);
  TransferReport rep = transfer_params(a.params, b);
  CHECK(!rep.copied.empty());
  // lstm params are fresh; the head behind it changed input width
  bool lstm_missing = false;
  for (const auto& n : rep.missing) lstm_missing = lstm_missing || n.find("/lstm/") != std::string::npos;
  CHECK(lstm_missing);
  bool head_mismatch = false;
  for (const auto& n : rep.shape_mismatch)
    head_mismatch = head_mismatch || n.rfind("Head_Conv7/", 0) == 0;
  CHECK(head_mismatch);
  for (const auto& n : rep.copied)
    CHECK(a.params.at(n).data == b.params.at(n).data);
  CHECK(rep.str().find("shape_mismatch") != std::string::npos);
}

TEST_CASE("frozen layer selection") {
  ArchSpec spec = toy_spec("single_conv13");
  auto f = frozen_layers(spec, "Conv7");
  CHECK(f.count("Conv1") == 1);
  CHECK(f.count("Conv7") == 1);
  CHECK(f.count("Conv7/lstm") == 0);
  CHECK(f.count("FM1") == 0);
  CHECK(f.count("Head_Conv7") == 0);
  CHECK(frozen_layers(spec, "").empty());
  CHECK_THROWS_AS(frozen_layers(spec, "Conv99"), std::invalid_argument);
}

TEST_CASE("unroll equivalence: window loss equals mean of carried per-frame losses") {
  ModelInstance model = compose(toy_spec("single_conv13"), 3);
  VideoParams p = quick_params();
  VideoSequence video = generate_video(11, p);
  std::vector<Anchor> anchors = build_anchors(model.spec);
  const int L = 6;
  std::vector<Tensor> frames(video.frames.begin(), video.frames.begin() + L);
  std::vector<FrameGroundTruth> gt(video.gt.begin(), video.gt.begin() + L);

  Tape<float> tp;
  WeightRefs w = register_weights(tp, model, {}, false);
  WindowRefs wr = window_forward(tp, model, w, anchors, frames, gt);
  float window_loss = tp.value(wr.loss).data[0];

  // manual stepping: fresh tape per frame, state carried as constants
  ModelState s = make_state(model);
  float mean = 0.0f;
  for (int t = 0; t < L; ++t) {
    Tape<float> ft;
    WeightRefs fw = register_weights(ft, model, {}, false);
    std::vector<RecurrentStateRefs> srefs;
    for (std::size_t i = 0; i < model.recurrent_sites.size(); ++i) {
      RecurrentStateRefs r;
      if (!s.h[i].data.empty()) {
        r.h = ft.constant(s.h[i]);
        r.c = ft.constant(s.c[i]);
      }
      srefs.push_back(r);
    }
    FrameRefs fr = model_forward(ft, model, fw, ft.constant(frames[t]), srefs);
    for (std::size_t i = 0; i < fr.state.size(); ++i) {
      s.h[i] = ft.value(fr.state[i].h);
      if (fr.state[i].c >= 0) s.c[i] = ft.value(fr.state[i].c);
    }
    HeadRefs hr = flatten_heads(ft, model, fr.heads);
    int loss = multibox_loss(ft, hr.logits, hr.loc, assign_targets(anchors, gt[t]));
    mean += ft.value(loss).data[0];
    CHECK(ft.value(loss).data[0] == tp.value(wr.frame_losses[t]).data[0]);
  }
  mean /= L;
  CHECK(window_loss == doctest::Approx(mean).epsilon(1e-6));
}

TEST_CASE("stage 1 training reduces the loss and is bitwise reproducible") {
  unsetenv("TSL_SEED");
  VideoParams p = quick_params();
  p.length = 20;
  Dataset data = make_dataset(8, p, 31);
  TrainConfig cfg;
  cfg.steps = 60;
  cfg.batch = 2;
  cfg.lr = 0.002;
  cfg.seed = 5;

  ModelInstance m1 = compose(toy_spec("none"), 6);
  TrainResult r1 = train_stage1(m1, data, cfg);
  REQUIRE(r1.losses.size() == 60);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += r1.losses[i];
    tail += r1.losses[50 + i];
  }
  CHECK(tail < head);
  for (double l : r1.losses) CHECK(std::isfinite(l));

  ModelInstance m2 = compose(toy_spec("none"), 6);
  TrainResult r2 = train_stage1(m2, data, cfg);
  CHECK(r1.losses == r2.losses);
  for (const auto& [name, t] : m1.params.map())
    CHECK(t.data == m2.params.at(name).data);
}

TEST_CASE("stage 2 freezes the base network bitwise") {
  unsetenv("TSL_SEED");
  VideoParams p = quick_params();
  p.length = 20;
  Dataset data = make_dataset(6, p, 33);
  TrainConfig cfg;
  cfg.steps = 20;
  cfg.batch = 1;
  cfg.unroll = 4;
  cfg.seed = 7;

  ModelInstance base = compose(toy_spec("none"), 8);
  TrainConfig c1 = cfg;
  train_stage1(base, data, c1);

  ModelInstance joint = compose(toy_spec("single_conv13"), 9);
  TrainConfig c2 = cfg;
  c2.freeze_through = "Conv7";
  train_stage2(joint, base.params, data, c2);

  std::set<std::string> frozen = frozen_layers(joint.spec, "Conv7");
  bool some_changed = false;
  for (const auto& [name, t] : joint.params.map()) {
    std::string layer = name.substr(0, name.find('/'));
    bool is_frozen = frozen.count(layer) == 1 && name.find("/lstm/") == std::string::npos;
    if (is_frozen) {
      CHECK(t.data == base.params.at(name).data);
    } else if (base.params.has(name) &&
               base.params.at(name).dims == t.dims) {
      some_changed = some_changed || t.data != base.params.at(name).data;
    }
  }
  CHECK(some_changed);

  // stage 2 without a matching checkpoint fails with a named diff
  ModelInstance other = compose(toy_spec("single_conv13"), 10);
  ParamStore empty;
  CHECK_THROWS_AS(train_stage2(other, empty, data, c2), std::invalid_argument);
  TrainConfig bad = cfg;
  CHECK_THROWS_AS(train_stage2(other, base.params, data, bad), std::invalid_argument);
}

TEST_CASE("evaluation runs with occlusion and stays in range") {
  VideoParams p = quick_params();
  p.length = 24;
  Dataset data = make_dataset(3, p, 35);
  ModelInstance model = compose(toy_spec("single_conv13"), 11);
  for (double occ : {0.0, 0.5}) {
    double map = evaluate_model(model, data, occ, 77);
    CHECK(map >= 0.0);
    CHECK(map <= 1.0);
  }
  CHECK(evaluate_model(model, data, 0.0, 77) == evaluate_model(model, data, 0.0, 77));
}

TEST_CASE("ablation driver emits the expected grid shape") {
  unsetenv("TSL_SEED");
  TrainConfig cfg;
  cfg.steps = 2;
  cfg.batch = 1;
  cfg.unroll = 4;
  cfg.seed = 13;
  auto rows = run_ablation("layer_type", cfg, 2, 2);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].variant == "averaging");
  CHECK(rows[3].variant == "bottleneck_lstm");
  for (const auto& r : rows) {
    CHECK(r.params > 0);
    CHECK(r.mac > 0);
    CHECK(r.map >= 0.0);
  }
  std::string csv = ablation_csv(rows);
  CHECK(csv.rfind("variant,map,params,mac\n", 0) == 0);

  auto occ = run_ablation("occlusion", cfg, 2, 2);
  CHECK(occ.size() == 8);
  CHECK_THROWS_AS(run_ablation("bogus", cfg, 1, 1), std::invalid_argument);
}
