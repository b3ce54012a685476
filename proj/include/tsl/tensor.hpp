#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsl {

// Dense rank-4 layout, row-major over (batch, height, width, channels).
// Kernels reuse the same 4-tuple as (kh, kw, in_channels, out_channels).
struct Shape {
  int n{0};
  int h{0};
  int w{0};
  int c{0};

  std::int64_t count() const {
    return static_cast<std::int64_t>(n) * h * w * c;
  }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(h) + "," +
           std::to_string(w) + "," + std::to_string(c) + ")";
  }
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <class T>
struct TensorT {
  Shape dims;
  std::vector<T> data;
  std::vector<T> grad;  // empty until ensure_grad()

  TensorT() = default;
  explicit TensorT(Shape s, T fill = T(0))
      : dims(s), data(static_cast<std::size_t>(s.count()), fill) {}

  std::int64_t index(int b, int y, int x, int ch) const {
    return ((static_cast<std::int64_t>(b) * dims.h + y) * dims.w + x) * dims.c + ch;
  }
  T& at(int b, int y, int x, int ch) { return data[index(b, y, x, ch)]; }
  const T& at(int b, int y, int x, int ch) const { return data[index(b, y, x, ch)]; }

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
  void zero_grad() {
    if (!grad.empty()) grad.assign(data.size(), T(0));
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out(dims);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

enum class KernelKind { full, depthwise, pointwise };
enum class Padding { same, valid };

inline const char* kernel_kind_name(KernelKind k) {
  switch (k) {
    case KernelKind::full: return "full";
    case KernelKind::depthwise: return "depthwise";
    case KernelKind::pointwise: return "pointwise";
  }
  return "?";
}

// Convolution filter bank. Depthwise kernels have out_channels == 1
// (channel multiplier 1); pointwise kernels are 1x1.
template <class T>
struct ConvKernelT {
  KernelKind kind{KernelKind::full};
  TensorT<T> weights;  // (kh, kw, in, out)

  ConvKernelT() = default;
  ConvKernelT(KernelKind k, TensorT<T> w) : kind(k), weights(std::move(w)) {
    validate();
  }

  void validate() const {
    const Shape& d = weights.dims;
    if (kind == KernelKind::depthwise)
      check(d.c == 1, "depthwise kernel must have channel multiplier 1, got " + d.str());
    if (kind == KernelKind::pointwise)
      check(d.n == 1 && d.h == 1, "pointwise kernel must be 1x1, got " + d.str());
  }

  int kh() const { return weights.dims.n; }
  int kw() const { return weights.dims.h; }
  int in_channels() const { return weights.dims.w; }
  int out_channels() const {
    return kind == KernelKind::depthwise ? weights.dims.w : weights.dims.c;
  }
};

using ConvKernel = ConvKernelT<float>;

}  // namespace tsl
