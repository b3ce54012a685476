#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <utility>

#include "tsl/conv_ops.hpp"
#include "tsl/tensor.hpp"

namespace tsl {

// Reverse-mode tape over a fixed op set. One tape per thread of computation;
// values are immutable after the forward pass except for grad accumulation.
template <class T>
class Tape {
 public:
  using Ref = int;

  struct Node {
    TensorT<T> val;
    bool needs_grad{false};
    std::function<void(Tape&)> back;  // empty for leaves
  };

  Ref input(TensorT<T> t, bool requires_grad = true) {
    Node n;
    n.val = std::move(t);
    n.needs_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<Ref>(nodes_.size() - 1);
  }
  Ref constant(TensorT<T> t) { return input(std::move(t), false); }

  TensorT<T>& value(Ref r) { return nodes_[r].val; }
  const TensorT<T>& value(Ref r) const { return nodes_[r].val; }
  bool needs_grad(Ref r) const { return nodes_[r].needs_grad; }
  std::vector<T>& grad(Ref r) {
    nodes_[r].val.ensure_grad();
    return nodes_[r].val.grad;
  }
  std::size_t size() const { return nodes_.size(); }

  // Registers a node whose forward value was computed externally; `back` is
  // responsible for accumulating into parents' grads.
  Ref adopt(TensorT<T> value, bool needs, std::function<void(Tape&)> back) {
    Node n;
    n.val = std::move(value);
    n.needs_grad = needs;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Ref>(nodes_.size() - 1);
  }

  Ref conv2d(Ref x, Ref w, KernelKind kind, int stride, Padding pad) {
    const TensorT<T>& xv = value(x);
    const TensorT<T>& wv = value(w);
    if (kind == KernelKind::depthwise)
      check(wv.dims.c == 1,
            "depthwise kernel must have channel multiplier 1, got " + wv.dims.str());
    if (kind == KernelKind::pointwise)
      check(wv.dims.n == 1 && wv.dims.h == 1,
            "pointwise kernel must be 1x1, got " + wv.dims.str());
    check(xv.dims.c == wv.dims.w, "kernel " + wv.dims.str() +
                                      " does not match input channels " + xv.dims.str());
    TensorT<T> out = kind == KernelKind::depthwise
                         ? conv2d_depthwise_forward(xv, wv, stride, pad)
                         : conv2d_full_forward(xv, wv, stride, pad);
    bool ng = needs_grad(x) || needs_grad(w);
    auto back = [x, w, kind, stride, pad, self = next_ref()](Tape& tp) {
      const TensorT<T>& xv = tp.value(x);
      const TensorT<T>& wv = tp.value(w);
      std::vector<T>* gx = tp.needs_grad(x) ? &tp.grad(x) : nullptr;
      std::vector<T>* gw = tp.needs_grad(w) ? &tp.grad(w) : nullptr;
      const std::vector<T>& go = tp.grad(self);
      if (kind == KernelKind::depthwise)
        conv2d_depthwise_backward(xv, wv, stride, pad, go, gx, gw);
      else
        conv2d_full_backward(xv, wv, stride, pad, go, gx, gw);
    };
    return adopt(std::move(out), ng, ng ? std::function<void(Tape&)>(back)
                                        : std::function<void(Tape&)>());
  }

  Ref relu(Ref x) {
    kink_refs_.push_back(x);
    const TensorT<T>& xv = value(x);
    TensorT<T> out(xv.dims);
    for (std::size_t i = 0; i < xv.data.size(); ++i)
      out.data[i] = xv.data[i] > T(0) ? xv.data[i] : T(0);
    bool ng = needs_grad(x);
    auto back = [x, self = next_ref()](Tape& tp) {
      const std::vector<T>& go = tp.grad(self);
      const TensorT<T>& xv = tp.value(x);
      std::vector<T>& gx = tp.grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (xv.data[i] > T(0)) gx[i] += go[i];
    };
    return adopt(std::move(out), ng, ng ? std::function<void(Tape&)>(back)
                                        : std::function<void(Tape&)>());
  }

  Ref sigmoid(Ref x) {
    const TensorT<T>& xv = value(x);
    TensorT<T> out(xv.dims);
    for (std::size_t i = 0; i < xv.data.size(); ++i)
      out.data[i] = T(1) / (T(1) + std::exp(-xv.data[i]));
    bool ng = needs_grad(x);
    auto back = [x, self = next_ref()](Tape& tp) {
      const std::vector<T>& go = tp.grad(self);
      const TensorT<T>& sv = tp.value(self);
      std::vector<T>& gx = tp.grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        T s = sv.data[i];
        gx[i] += go[i] * s * (T(1) - s);
      }
    };
    return adopt(std::move(out), ng, ng ? std::function<void(Tape&)>(back)
                                        : std::function<void(Tape&)>());
  }

  // a*sa + b*sb, elementwise.
  Ref add_scaled(Ref a, T sa, Ref b, T sb) {
    const TensorT<T>& av = value(a);
    const TensorT<T>& bv = value(b);
    check(av.dims == bv.dims,
          "elementwise shape mismatch: " + av.dims.str() + " vs " + bv.dims.str());
    TensorT<T> out(av.dims);
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = sa * av.data[i] + sb * bv.data[i];
    bool ng = needs_grad(a) || needs_grad(b);
    auto back = [a, b, sa, sb, self = next_ref()](Tape& tp) {
      const std::vector<T>& go = tp.grad(self);
      if (tp.needs_grad(a)) {
        std::vector<T>& ga = tp.grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += sa * go[i];
      }
      if (tp.needs_grad(b)) {
        std::vector<T>& gb = tp.grad(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += sb * go[i];
      }
    };
    return adopt(std::move(out), ng, ng ? std::function<void(Tape&)>(back)
                                        : std::function<void(Tape&)>());
  }

  Ref add(Ref a, Ref b) { return add_scaled(a, T(1), b, T(1)); }

  Ref hadamard(Ref a, Ref b) {
    const TensorT<T>& av = value(a);
    const TensorT<T>& bv = value(b);
    check(av.dims == bv.dims,
          "hadamard shape mismatch: " + av.dims.str() + " vs " + bv.dims.str());
    TensorT<T> out(av.dims);
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = av.data[i] * bv.data[i];
    bool ng = needs_grad(a) || needs_grad(b);
    auto back = [a, b, self = next_ref()](Tape& tp) {
      const std::vector<T>& go = tp.grad(self);
      const TensorT<T>& av = tp.value(a);
      const TensorT<T>& bv = tp.value(b);
      if (tp.needs_grad(a)) {
        std::vector<T>& ga = tp.grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += bv.data[i] * go[i];
      }
      if (tp.needs_grad(b)) {
        std::vector<T>& gb = tp.grad(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += av.data[i] * go[i];
      }
    };
    return adopt(std::move(out), ng, ng ? std::function<void(Tape&)>(back)
                                        : std::function<void(Tape&)>());
  }

  Ref scale(Ref x, T s) {
    const TensorT<T>& xv = value(x);
    TensorT<T> out(xv.dims);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = s * xv.data[i];
    bool ng = needs_grad(x);
    auto back = [x, s, self = next_ref()](Tape& tp) {
      const std::vector<T>& go = tp.grad(self);
      std::vector<T>& gx = tp.grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s * go[i];
    };
    return adopt(std::move(out), ng, ng ? std::function<void(Tape&)>(back)
                                        : std::function<void(Tape&)>());
  }

  // Per-channel bias broadcast over batch and spatial dims; b has shape (1,1,1,C).
  Ref add_bias(Ref x, Ref b) {
    const TensorT<T>& xv = value(x);
    const TensorT<T>& bv = value(b);
    check(bv.dims.n == 1 && bv.dims.h == 1 && bv.dims.w == 1 && bv.dims.c == xv.dims.c,
          "bias shape " + bv.dims.str() + " does not broadcast over " + xv.dims.str());
    TensorT<T> out(xv.dims);
    const int cn = xv.dims.c;
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = xv.data[i] + bv.data[i % cn];
    bool ng = needs_grad(x) || needs_grad(b);
    auto back = [x, b, cn, self = next_ref()](Tape& tp) {
      const std::vector<T>& go = tp.grad(self);
      if (tp.needs_grad(x)) {
        std::vector<T>& gx = tp.grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
      }
      if (tp.needs_grad(b)) {
        std::vector<T>& gb = tp.grad(b);
        for (std::size_t i = 0; i < go.size(); ++i) gb[i % cn] += go[i];
      }
    };
    return adopt(std::move(out), ng, ng ? std::function<void(Tape&)>(back)
                                        : std::function<void(Tape&)>());
  }

  Ref concat_channels(Ref a, Ref b) {
    const TensorT<T>& av = value(a);
    const TensorT<T>& bv = value(b);
    check(av.dims.n == bv.dims.n && av.dims.h == bv.dims.h && av.dims.w == bv.dims.w,
          "concat spatial mismatch: " + av.dims.str() + " vs " + bv.dims.str());
    const int ca = av.dims.c, cb = bv.dims.c;
    TensorT<T> out(Shape{av.dims.n, av.dims.h, av.dims.w, ca + cb});
    const std::int64_t px = static_cast<std::int64_t>(av.dims.n) * av.dims.h * av.dims.w;
    for (std::int64_t p = 0; p < px; ++p) {
      for (int c = 0; c < ca; ++c) out.data[p * (ca + cb) + c] = av.data[p * ca + c];
      for (int c = 0; c < cb; ++c) out.data[p * (ca + cb) + ca + c] = bv.data[p * cb + c];
    }
    bool ng = needs_grad(a) || needs_grad(b);
    auto back = [a, b, ca, cb, px, self = next_ref()](Tape& tp) {
      const std::vector<T>& go = tp.grad(self);
      if (tp.needs_grad(a)) {
        std::vector<T>& ga = tp.grad(a);
        for (std::int64_t p = 0; p < px; ++p)
          for (int c = 0; c < ca; ++c) ga[p * ca + c] += go[p * (ca + cb) + c];
      }
      if (tp.needs_grad(b)) {
        std::vector<T>& gb = tp.grad(b);
        for (std::int64_t p = 0; p < px; ++p)
          for (int c = 0; c < cb; ++c) gb[p * cb + c] += go[p * (ca + cb) + ca + c];
      }
    };
    return adopt(std::move(out), ng, ng ? std::function<void(Tape&)>(back)
                                        : std::function<void(Tape&)>());
  }

  // Channel range [c0, c1).
  Ref slice_channels(Ref x, int c0, int c1) {
    const TensorT<T>& xv = value(x);
    check(0 <= c0 && c0 < c1 && c1 <= xv.dims.c,
          "bad channel slice [" + std::to_string(c0) + "," + std::to_string(c1) +
              ") of " + xv.dims.str());
    const int cn = xv.dims.c, co = c1 - c0;
    TensorT<T> out(Shape{xv.dims.n, xv.dims.h, xv.dims.w, co});
    const std::int64_t px = static_cast<std::int64_t>(xv.dims.n) * xv.dims.h * xv.dims.w;
    for (std::int64_t p = 0; p < px; ++p)
      for (int c = 0; c < co; ++c) out.data[p * co + c] = xv.data[p * cn + c0 + c];
    bool ng = needs_grad(x);
    auto back = [x, c0, cn, co, px, self = next_ref()](Tape& tp) {
      const std::vector<T>& go = tp.grad(self);
      std::vector<T>& gx = tp.grad(x);
      for (std::int64_t p = 0; p < px; ++p)
        for (int c = 0; c < co; ++c) gx[p * cn + c0 + c] += go[p * co + c];
    };
    return adopt(std::move(out), ng, ng ? std::function<void(Tape&)>(back)
                                        : std::function<void(Tape&)>());
  }

  // Sum over all elements; result has shape (1,1,1,1).
  Ref sum(Ref x) {
    const TensorT<T>& xv = value(x);
    T s = T(0);
    for (T v : xv.data) s += v;
    TensorT<T> out(Shape{1, 1, 1, 1});
    out.data[0] = s;
    bool ng = needs_grad(x);
    auto back = [x, self = next_ref()](Tape& tp) {
      T g = tp.grad(self)[0];
      std::vector<T>& gx = tp.grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    };
    return adopt(std::move(out), ng, ng ? std::function<void(Tape&)>(back)
                                        : std::function<void(Tape&)>());
  }

  void backward(Ref loss) {
    check(value(loss).dims.count() == 1,
          "backward requires a scalar loss, got " + value(loss).dims.str());
    grad(loss)[0] = T(1);
    for (int i = loss; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.back && !n.val.grad.empty()) n.back(*this);
    }
  }

  // Distance from the nearest non-smooth point recorded during the forward
  // pass (relu inputs). Finite-difference checks stay away from kinks.
  T kink_distance() const {
    T best = std::numeric_limits<T>::infinity();
    for (Ref r : kink_refs_)
      for (T v : nodes_[r].val.data) best = std::min(best, std::abs(v));
    return best;
  }

 private:
  Ref next_ref() const { return static_cast<Ref>(nodes_.size()); }
  std::vector<Node> nodes_;
  std::vector<Ref> kink_refs_;
};

// Depthwise 3x3 followed by pointwise 1x1; the stride applies to the
// depthwise stage.
template <class T>
typename Tape<T>::Ref depthwise_separable(Tape<T>& tp, typename Tape<T>::Ref x,
                                          typename Tape<T>::Ref dw,
                                          typename Tape<T>::Ref pw, int stride,
                                          Padding pad = Padding::same) {
  auto mid = tp.conv2d(x, dw, KernelKind::depthwise, stride, pad);
  return tp.conv2d(mid, pw, KernelKind::pointwise, 1, Padding::same);
}

}  // namespace tsl
