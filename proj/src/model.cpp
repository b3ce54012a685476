#include "tsl/model.hpp"

#include <random>

namespace tsl {

namespace {

std::vector<ParamSpec> prefixed(const std::string& layer, std::vector<ParamSpec> specs) {
  for (auto& s : specs) s.name = layer + "/" + s.name;
  return specs;
}

}  // namespace

std::vector<ParamSpec> layer_param_specs(const LayerDesc& l) {
  std::vector<ParamSpec> out;
  switch (l.kind) {
    case LayerKind::full_conv:
      out.push_back({"w", Shape{l.kernel, l.kernel, l.in_ch, l.out_ch}});
      break;
    case LayerKind::separable_conv:
    case LayerKind::box_head:
      out.push_back({"dw", Shape{l.kernel, l.kernel, l.in_ch, 1}});
      out.push_back({"pw", Shape{1, 1, l.in_ch, l.out_ch}});
      break;
    case LayerKind::conv_lstm:
      out = conv_lstm_param_specs(l.in_ch, l.out_ch);
      break;
    case LayerKind::conv_gru:
      out = conv_gru_param_specs(l.in_ch, l.out_ch);
      break;
    case LayerKind::bottleneck_lstm:
      out = bottleneck_lstm_param_specs(l.in_ch, l.out_ch, l.form);
      break;
    case LayerKind::averaging:
      break;
  }
  if (l.bias) out.push_back({"b", Shape{1, 1, 1, l.out_ch}});
  return prefixed(l.name, out);
}

ModelInstance compose(const ArchSpec& spec, std::uint64_t seed) {
  ModelInstance model;
  model.spec = spec;
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (spec.layers[i].is_recurrent()) model.recurrent_sites.push_back(i);

  std::mt19937_64 rng(seed);
  for (const LayerDesc& l : spec.layers) {
    for (const ParamSpec& p : layer_param_specs(l)) {
      Tensor t(p.shape);
      bool is_bias = p.name.size() >= 2 && p.name.rfind("/b") == p.name.size() - 2;
      if (!is_bias) {
        // fan-in: spatial taps for depthwise, input channels otherwise
        double fan = p.shape.n * p.shape.h * p.shape.w;
        double std_dev = std::sqrt(2.0 / std::max(1.0, fan));
        if (l.kind == LayerKind::box_head && p.name.rfind("/pw") != std::string::npos)
          std_dev = 0.01;  // start detection logits near uniform
        std::normal_distribution<double> dist(0.0, std_dev);
        for (auto& v : t.data) v = static_cast<float>(dist(rng));
      }
      model.params.add(p.name, std::move(t));
    }
  }
  return model;
}

ModelState make_state(const ModelInstance& model) {
  ModelState s;
  s.h.resize(model.recurrent_sites.size());
  s.c.resize(model.recurrent_sites.size());
  return s;
}

int WeightRefs::at(const std::string& name) const {
  auto it = ref.find(name);
  check(it != ref.end(), "unregistered parameter: " + name);
  return it->second;
}

WeightRefs register_weights(Tape<float>& tp, const ModelInstance& model,
                            const std::set<std::string>& frozen, bool trainable) {
  for (const std::string& f : frozen)
    check(model.spec.find(f) != nullptr, "frozen layer " + f + " is not in the model");
  WeightRefs w;
  for (const auto& [name, tensor] : model.params.map()) {
    // longest layer name that prefixes this parameter
    const LayerDesc* owner = nullptr;
    for (const auto& l : model.spec.layers)
      if (name.rfind(l.name + "/", 0) == 0 &&
          (!owner || l.name.size() > owner->name.size()))
        owner = &l;
    check(owner != nullptr, "parameter " + name + " matches no layer");
    bool req = trainable && frozen.count(owner->name) == 0;
    w.ref[name] = tp.input(tensor, req);
  }
  return w;
}

namespace {

// The tape's fixed op set has no reshape; these two adopt-based helpers move
// no data logically (row-major layout is preserved) and route gradients 1:1.
int reshape_rows(Tape<float>& tp, int x, int rows, int cols) {
  const Tensor& xv = tp.value(x);
  check(xv.dims.count() == static_cast<std::int64_t>(rows) * cols,
        "reshape size mismatch for " + xv.dims.str());
  Tensor out(Shape{1, 1, rows, cols});
  out.data = xv.data;
  bool ng = tp.needs_grad(x);
  auto back = [x, self = static_cast<int>(tp.size())](Tape<float>& t) {
    const std::vector<float>& go = t.grad(self);
    std::vector<float>& gx = t.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
  };
  return tp.adopt(std::move(out), ng,
                  ng ? std::function<void(Tape<float>&)>(back)
                     : std::function<void(Tape<float>&)>());
}

int concat_rows(Tape<float>& tp, const std::vector<int>& xs) {
  check(!xs.empty(), "concat_rows needs at least one input");
  int cols = tp.value(xs[0]).dims.c;
  int rows = 0;
  for (int x : xs) {
    const Shape& d = tp.value(x).dims;
    check(d.n == 1 && d.h == 1 && d.c == cols, "concat_rows shape mismatch: " + d.str());
    rows += d.w;
  }
  Tensor out(Shape{1, 1, rows, cols});
  std::size_t off = 0;
  bool ng = false;
  for (int x : xs) {
    const Tensor& xv = tp.value(x);
    std::copy(xv.data.begin(), xv.data.end(), out.data.begin() + off);
    off += xv.data.size();
    ng = ng || tp.needs_grad(x);
  }
  auto back = [xs, self = static_cast<int>(tp.size())](Tape<float>& t) {
    const std::vector<float>& go = t.grad(self);
    std::size_t off = 0;
    for (int x : xs) {
      std::size_t n = t.value(x).data.size();
      if (t.needs_grad(x)) {
        std::vector<float>& gx = t.grad(x);
        for (std::size_t i = 0; i < n; ++i) gx[i] += go[off + i];
      }
      off += n;
    }
  };
  return tp.adopt(std::move(out), ng,
                  ng ? std::function<void(Tape<float>&)>(back)
                     : std::function<void(Tape<float>&)>());
}

SepRefs sep_refs(Tape<float>& tp, const ModelInstance& model, const WeightRefs& w,
                 const std::string& gate) {
  SepRefs r;
  r.dw = w.at(gate + "/dw");
  r.pw = w.at(gate + "/pw");
  if (w.has(gate + "/bias")) r.bias = w.at(gate + "/bias");
  (void)tp;
  (void)model;
  return r;
}

int zero_state(Tape<float>& tp, const Shape& like, int channels) {
  return tp.constant(Tensor(Shape{like.n, like.h, like.w, channels}));
}

}  // namespace

FrameRefs model_forward(Tape<float>& tp, const ModelInstance& model,
                        const WeightRefs& w, int input,
                        const std::vector<RecurrentStateRefs>& state) {
  check(state.size() == model.recurrent_sites.size(),
        "state vector size does not match the model's recurrent sites");
  FrameRefs out;
  std::map<std::string, int> produced;
  int prev = input;
  std::size_t site = 0;
  for (const LayerDesc& l : model.spec.layers) {
    int x = prev;
    if (!l.input.empty()) x = produced.at(l.input);
    int y = -1;
    switch (l.kind) {
      case LayerKind::full_conv: {
        y = tp.conv2d(x, w.at(l.name + "/w"), KernelKind::full, l.stride, Padding::same);
        if (l.bias) y = tp.add_bias(y, w.at(l.name + "/b"));
        y = tp.relu(y);
        break;
      }
      case LayerKind::separable_conv: {
        y = depthwise_separable(tp, x, w.at(l.name + "/dw"), w.at(l.name + "/pw"),
                                l.stride);
        if (l.bias) y = tp.add_bias(y, w.at(l.name + "/b"));
        y = tp.relu(y);
        break;
      }
      case LayerKind::box_head: {
        y = depthwise_separable(tp, x, w.at(l.name + "/dw"), w.at(l.name + "/pw"),
                                l.stride);
        if (l.bias) y = tp.add_bias(y, w.at(l.name + "/b"));
        out.heads.push_back(y);
        break;
      }
      case LayerKind::conv_lstm: {
        RecurrentStateRefs s = state[site];
        if (s.h < 0) {
          s.h = zero_state(tp, tp.value(x).dims, l.out_ch);
          s.c = zero_state(tp, tp.value(x).dims, l.out_ch);
        }
        ConvLstmRefs r{sep_refs(tp, model, w, l.name + "/f"),
                       sep_refs(tp, model, w, l.name + "/i"),
                       sep_refs(tp, model, w, l.name + "/o"),
                       sep_refs(tp, model, w, l.name + "/c")};
        RecurrentStateRefs ns = conv_lstm_step(tp, x, s, r);
        out.state.push_back(ns);
        y = ns.h;
        ++site;
        break;
      }
      case LayerKind::conv_gru: {
        RecurrentStateRefs s = state[site];
        if (s.h < 0) s.h = zero_state(tp, tp.value(x).dims, l.out_ch);
        ConvGruRefs r{sep_refs(tp, model, w, l.name + "/z"),
                      sep_refs(tp, model, w, l.name + "/r"),
                      sep_refs(tp, model, w, l.name + "/h")};
        RecurrentStateRefs ns = conv_gru_step(tp, x, s, r);
        out.state.push_back(ns);
        y = ns.h;
        ++site;
        break;
      }
      case LayerKind::bottleneck_lstm: {
        RecurrentStateRefs s = state[site];
        if (s.h < 0) {
          s.h = zero_state(tp, tp.value(x).dims, l.out_ch);
          s.c = zero_state(tp, tp.value(x).dims, l.out_ch);
        }
        BottleneckLstmRefs r;
        r.form = l.form;
        r.b = sep_refs(tp, model, w, l.name + "/b");
        if (l.form == BottleneckForm::table1) {
          r.gates = sep_refs(tp, model, w, l.name + "/gates");
        } else {
          r.f = sep_refs(tp, model, w, l.name + "/f");
          r.i = sep_refs(tp, model, w, l.name + "/i");
          r.o = sep_refs(tp, model, w, l.name + "/o");
          r.c = sep_refs(tp, model, w, l.name + "/c");
        }
        RecurrentStateRefs ns = bottleneck_lstm_step(tp, x, s, r);
        out.state.push_back(ns);
        y = ns.h;
        ++site;
        break;
      }
      case LayerKind::averaging: {
        int prev_h = state[site].h;
        y = averaging_step(tp, x, prev_h);
        out.state.push_back({y, -1});
        ++site;
        break;
      }
    }
    produced[l.name] = y;
    if (l.input.empty() && l.kind != LayerKind::box_head) prev = y;
  }
  return out;
}

HeadRefs flatten_heads(Tape<float>& tp, const ModelInstance& model,
                       const std::vector<int>& heads) {
  const int per_anchor = model.spec.num_classes + 1 + 4;
  const int a = model.spec.anchors_per_cell();
  std::vector<int> flat;
  for (int h : heads) {
    const Shape& d = tp.value(h).dims;
    check(d.c == a * per_anchor, "head channel count " + d.str() +
                                     " does not match anchors x (classes+5)");
    flat.push_back(reshape_rows(tp, h, d.h * d.w * a, per_anchor));
  }
  int all = concat_rows(tp, flat);
  HeadRefs out;
  out.logits = tp.slice_channels(all, 0, model.spec.num_classes + 1);
  out.loc = tp.slice_channels(all, model.spec.num_classes + 1, per_anchor);
  return out;
}

std::vector<Anchor> build_anchors(const ArchSpec& spec) {
  struct Extent {
    int h, w;
  };
  std::map<std::string, Extent> extents;
  Extent prev{spec.resolution, spec.resolution};
  std::vector<std::pair<int, int>> shapes;
  std::vector<double> scales;
  for (const LayerDesc& l : spec.layers) {
    Extent in = prev;
    if (!l.input.empty()) in = extents.at(l.input);
    Extent out{(in.h + l.stride - 1) / l.stride, (in.w + l.stride - 1) / l.stride};
    extents[l.name] = out;
    if (l.kind == LayerKind::box_head) {
      shapes.push_back({out.h, out.w});
      scales.push_back(l.anchor_scale);
    }
    if (l.input.empty() && l.kind != LayerKind::box_head) prev = out;
  }
  return generate_anchors(shapes, scales, spec.aspect_ratios);
}

StepResult step_frame(const ModelInstance& model, const Tensor& frame,
                      const ModelState& state, const InferenceConfig& cfg) {
  check(frame.dims.n == 1 && frame.dims.c == 3 &&
            frame.dims.h == model.spec.resolution &&
            frame.dims.w == model.spec.resolution,
        "frame shape " + frame.dims.str() + " does not match the model resolution");
  Tape<float> tp;
  WeightRefs w = register_weights(tp, model, {}, /*trainable=*/false);
  int input = tp.constant(frame);
  std::vector<RecurrentStateRefs> srefs;
  for (std::size_t i = 0; i < model.recurrent_sites.size(); ++i) {
    RecurrentStateRefs r;
    if (!state.h[i].data.empty()) {
      r.h = tp.constant(state.h[i]);
      if (!state.c[i].data.empty()) r.c = tp.constant(state.c[i]);
    }
    srefs.push_back(r);
  }
  FrameRefs fr = model_forward(tp, model, w, input, srefs);
  HeadRefs hr = flatten_heads(tp, model, fr.heads);

  const Tensor& logits = tp.value(hr.logits);
  const Tensor& loc = tp.value(hr.loc);
  std::vector<Anchor> anchors = build_anchors(model.spec);
  const int nc = model.spec.num_classes + 1;
  check(static_cast<int>(anchors.size()) == logits.dims.w,
        "anchor count does not match flattened head rows");

  std::vector<Detection> raw;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const float* row = logits.data.data() + i * nc;
    float mx = row[0];
    for (int c = 1; c < nc; ++c) mx = std::max(mx, row[c]);
    double z = 0;
    for (int c = 0; c < nc; ++c) z += std::exp(static_cast<double>(row[c]) - mx);
    std::array<double, 4> off{loc.data[i * 4 + 0], loc.data[i * 4 + 1],
                              loc.data[i * 4 + 2], loc.data[i * 4 + 3]};
    for (int c = 1; c < nc; ++c) {
      double score = std::exp(static_cast<double>(row[c]) - mx) / z;
      if (score < cfg.score_thresh) continue;
      Detection d;
      d.cls = c;
      d.score = score;
      d.box = decode_box(off, anchors[i].box);
      raw.push_back(d);
    }
  }

  StepResult res;
  res.detections = nms(std::move(raw), cfg.nms_iou, cfg.max_detections);
  res.state = make_state(model);
  for (std::size_t i = 0; i < fr.state.size(); ++i) {
    res.state.h[i] = tp.value(fr.state[i].h);
    if (fr.state[i].c >= 0) res.state.c[i] = tp.value(fr.state[i].c);
  }
  return res;
}

std::vector<std::vector<Detection>> run_sequence(const ModelInstance& model,
                                                 const std::vector<Tensor>& frames,
                                                 const InferenceConfig& cfg) {
  std::vector<std::vector<Detection>> out;
  ModelState state = make_state(model);
  for (const Tensor& f : frames) {
    StepResult r = step_frame(model, f, state, cfg);
    out.push_back(std::move(r.detections));
    state = std::move(r.state);
  }
  return out;
}

}  // namespace tsl
