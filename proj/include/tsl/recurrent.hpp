#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tsl/tape.hpp"

namespace tsl {

enum class BottleneckForm { table1, eq2 };

inline BottleneckForm parse_bottleneck_form(const std::string& s) {
  if (s == "table1") return BottleneckForm::table1;
  // "eq4" accepted as an alias: the literal equation-form cell is the one
  // whose cost the eq4 accounting describes.
  if (s == "eq2" || s == "eq4") return BottleneckForm::eq2;
  throw std::invalid_argument("unknown bottleneck form: " + s);
}
inline const char* bottleneck_form_name(BottleneckForm f) {
  return f == BottleneckForm::table1 ? "table1" : "eq2";
}

// Tape refs for one depthwise-separable gate convolution. bias < 0 means no
// bias; biases exist only where a layer spec asks for them (gate saturation
// hooks, detection heads).
struct SepRefs {
  int dw{-1};
  int pw{-1};
  int bias{-1};
};

struct RecurrentStateRefs {
  int h{-1};
  int c{-1};  // -1 for GRU / averaging
};

template <class T>
int separable_gate(Tape<T>& tp, int x, const SepRefs& g) {
  int out = depthwise_separable(tp, x, g.dw, g.pw, 1);
  if (g.bias >= 0) out = tp.add_bias(out, g.bias);
  return out;
}

// Parameter layout of a recurrent layer, as stored in checkpoints under
// "<layer>/<gate>/{dw,pw}".
struct ParamSpec {
  std::string name;
  Shape shape;
};

inline std::vector<ParamSpec> separable_param_specs(const std::string& gate, int kin,
                                                    int kout, int kernel = 3) {
  return {{gate + "/dw", Shape{kernel, kernel, kin, 1}},
          {gate + "/pw", Shape{1, 1, kin, kout}}};
}

inline std::vector<ParamSpec> conv_lstm_param_specs(int m, int n) {
  std::vector<ParamSpec> out;
  for (const char* g : {"f", "i", "o", "c"})
    for (auto& p : separable_param_specs(g, m + n, n)) out.push_back(p);
  return out;
}

inline std::vector<ParamSpec> conv_gru_param_specs(int m, int n) {
  std::vector<ParamSpec> out;
  for (const char* g : {"z", "r", "h"})
    for (auto& p : separable_param_specs(g, m + n, n)) out.push_back(p);
  return out;
}

inline std::vector<ParamSpec> bottleneck_lstm_param_specs(int m, int n,
                                                          BottleneckForm form) {
  std::vector<ParamSpec> out;
  if (form == BottleneckForm::table1) {
    // Depthwise over the input alone, pointwise over the concatenation, then
    // a single combined convolution producing all 4N gate channels.
    out.push_back({"b/dw", Shape{3, 3, m, 1}});
    out.push_back({"b/pw", Shape{1, 1, m + n, n}});
    out.push_back({"gates/dw", Shape{3, 3, n, 1}});
    out.push_back({"gates/pw", Shape{1, 1, n, 4 * n}});
  } else {
    // Literal composition: bottleneck over the concatenation, then one
    // separable convolution per gate.
    for (auto& p : separable_param_specs("b", m + n, n)) out.push_back(p);
    for (const char* g : {"f", "i", "o", "c"})
      for (auto& p : separable_param_specs(g, n, n)) out.push_back(p);
  }
  return out;
}

struct ConvLstmRefs {
  SepRefs f, i, o, c;
};
struct ConvGruRefs {
  SepRefs z, r, h;
};
struct BottleneckLstmRefs {
  BottleneckForm form{BottleneckForm::table1};
  SepRefs b;
  SepRefs gates;        // table1 combined 4N conv
  SepRefs f, i, o, c;   // eq2 per-gate convs
};

// Standard convolutional LSTM over the channel-concatenation [x_t, h_{t-1}],
// phi = ReLU. Returns the new state; h is the layer output.
template <class T>
RecurrentStateRefs conv_lstm_step(Tape<T>& tp, int x, RecurrentStateRefs s,
                                  const ConvLstmRefs& w) {
  int cat = tp.concat_channels(x, s.h);
  int f = tp.sigmoid(separable_gate(tp, cat, w.f));
  int i = tp.sigmoid(separable_gate(tp, cat, w.i));
  int o = tp.sigmoid(separable_gate(tp, cat, w.o));
  int cand = tp.relu(separable_gate(tp, cat, w.c));
  int c_t = tp.add(tp.hadamard(f, s.c), tp.hadamard(i, cand));
  int h_t = tp.hadamard(o, tp.relu(c_t));
  return {h_t, c_t};
}

// Standard reset/update/candidate GRU with separable gate convolutions and
// phi = ReLU: h_t = h_{t-1} + z o (cand - h_{t-1}).
template <class T>
RecurrentStateRefs conv_gru_step(Tape<T>& tp, int x, RecurrentStateRefs s,
                                 const ConvGruRefs& w) {
  int cat = tp.concat_channels(x, s.h);
  int z = tp.sigmoid(separable_gate(tp, cat, w.z));
  int r = tp.sigmoid(separable_gate(tp, cat, w.r));
  int cat2 = tp.concat_channels(x, tp.hadamard(r, s.h));
  int cand = tp.relu(separable_gate(tp, cat2, w.h));
  int h_t = tp.add(s.h, tp.hadamard(z, tp.add_scaled(cand, T(1), s.h, T(-1))));
  return {h_t, -1};
}

template <class T>
RecurrentStateRefs bottleneck_lstm_step(Tape<T>& tp, int x, RecurrentStateRefs s,
                                        const BottleneckLstmRefs& w) {
  const int n = tp.value(s.h).dims.c;
  int b;
  if (w.form == BottleneckForm::table1) {
    int xd = tp.conv2d(x, w.b.dw, KernelKind::depthwise, 1, Padding::same);
    int cat = tp.concat_channels(xd, s.h);
    int pre = tp.conv2d(cat, w.b.pw, KernelKind::pointwise, 1, Padding::same);
    if (w.b.bias >= 0) pre = tp.add_bias(pre, w.b.bias);
    b = tp.relu(pre);
  } else {
    int cat = tp.concat_channels(x, s.h);
    b = tp.relu(separable_gate(tp, cat, w.b));
  }
  int f, i, o, cand;
  if (w.form == BottleneckForm::table1) {
    int g = separable_gate(tp, b, w.gates);  // 4N channels: f, i, o, candidate
    f = tp.sigmoid(tp.slice_channels(g, 0, n));
    i = tp.sigmoid(tp.slice_channels(g, n, 2 * n));
    o = tp.sigmoid(tp.slice_channels(g, 2 * n, 3 * n));
    cand = tp.relu(tp.slice_channels(g, 3 * n, 4 * n));
  } else {
    f = tp.sigmoid(separable_gate(tp, b, w.f));
    i = tp.sigmoid(separable_gate(tp, b, w.i));
    o = tp.sigmoid(separable_gate(tp, b, w.o));
    cand = tp.relu(separable_gate(tp, b, w.c));
  }
  int c_t = tp.add(tp.hadamard(f, s.c), tp.hadamard(i, cand));
  int h_t = tp.hadamard(o, tp.relu(c_t));
  return {h_t, c_t};
}

// Weighted averaging baseline: 0.75 current + 0.25 previous. The first frame
// (prev < 0) passes through unchanged.
template <class T>
int averaging_step(Tape<T>& tp, int x, int prev) {
  if (prev < 0) return x;
  return tp.add_scaled(x, T(0.75), prev, T(0.25));
}

// Test hook: zero kernels plus gate biases that saturate f to 1 and i to 0,
// so c_t persists exactly. The output gate stays at sigma(0) = 0.5.
inline float persistence_bias(const std::string& gate) {
  if (gate == "f") return 50.0f;
  if (gate == "i") return -50.0f;
  return 0.0f;
}

}  // namespace tsl
