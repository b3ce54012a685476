#pragma once

#include "tsl/tensor.hpp"

namespace tsl {

struct ConvGeom {
  int out_h{0}, out_w{0};
  int pad_top{0}, pad_left{0};
};

// "same" pads symmetrically with the extra pixel on the bottom/right.
inline ConvGeom conv_geometry(const Shape& in, int kh, int kw, int stride, Padding pad) {
  check(stride >= 1, "stride must be positive");
  ConvGeom g;
  if (pad == Padding::same) {
    g.out_h = (in.h + stride - 1) / stride;
    g.out_w = (in.w + stride - 1) / stride;
    int pad_h = std::max((g.out_h - 1) * stride + kh - in.h, 0);
    int pad_w = std::max((g.out_w - 1) * stride + kw - in.w, 0);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  } else {
    check(in.h >= kh && in.w >= kw,
          "valid conv needs input >= kernel, got input " + in.str());
    g.out_h = (in.h - kh) / stride + 1;
    g.out_w = (in.w - kw) / stride + 1;
  }
  return g;
}

template <class T>
void check_conv_channels(const Shape& x, const ConvKernelT<T>& k) {
  if (k.kind == KernelKind::depthwise) {
    check(x.c == k.weights.dims.w,
          "depthwise kernel planes " + k.weights.dims.str() +
              " do not match input channels " + x.str());
  } else {
    check(x.c == k.weights.dims.w,
          "kernel input channels " + k.weights.dims.str() +
              " do not match input " + x.str());
  }
}

// out[b,oy,ox,oc] = sum_{ky,kx,ic} x[b,iy,ix,ic] * w[ky,kx,ic,oc]
template <class T>
TensorT<T> conv2d_full_forward(const TensorT<T>& x, const TensorT<T>& w, int stride,
                               Padding pad) {
  const int kh = w.dims.n, kw = w.dims.h, ic_n = w.dims.w, oc_n = w.dims.c;
  ConvGeom g = conv_geometry(x.dims, kh, kw, stride, pad);
  TensorT<T> out(Shape{x.dims.n, g.out_h, g.out_w, oc_n});
  std::vector<T> acc(static_cast<std::size_t>(oc_n));
  for (int b = 0; b < x.dims.n; ++b)
    for (int oy = 0; oy < g.out_h; ++oy)
      for (int ox = 0; ox < g.out_w; ++ox) {
        std::fill(acc.begin(), acc.end(), T(0));
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oy * stride - g.pad_top + ky;
          if (iy < 0 || iy >= x.dims.h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            int ix = ox * stride - g.pad_left + kx;
            if (ix < 0 || ix >= x.dims.w) continue;
            const T* xp = &x.data[x.index(b, iy, ix, 0)];
            const T* wp = &w.data[w.index(ky, kx, 0, 0)];
            for (int ic = 0; ic < ic_n; ++ic) {
              T xv = xp[ic];
              const T* wr = wp + static_cast<std::int64_t>(ic) * oc_n;
              for (int oc = 0; oc < oc_n; ++oc) acc[oc] += xv * wr[oc];
            }
          }
        }
        T* op = &out.data[out.index(b, oy, ox, 0)];
        for (int oc = 0; oc < oc_n; ++oc) op[oc] = acc[oc];
      }
  return out;
}

template <class T>
void conv2d_full_backward(const TensorT<T>& x, const TensorT<T>& w, int stride,
                          Padding pad, const std::vector<T>& gout,
                          std::vector<T>* gx, std::vector<T>* gw) {
  const int kh = w.dims.n, kw = w.dims.h, ic_n = w.dims.w, oc_n = w.dims.c;
  ConvGeom g = conv_geometry(x.dims, kh, kw, stride, pad);
  TensorT<T> dummy(Shape{x.dims.n, g.out_h, g.out_w, oc_n});
  for (int b = 0; b < x.dims.n; ++b)
    for (int oy = 0; oy < g.out_h; ++oy)
      for (int ox = 0; ox < g.out_w; ++ox) {
        const T* go = &gout[dummy.index(b, oy, ox, 0)];
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oy * stride - g.pad_top + ky;
          if (iy < 0 || iy >= x.dims.h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            int ix = ox * stride - g.pad_left + kx;
            if (ix < 0 || ix >= x.dims.w) continue;
            const std::int64_t xi = x.index(b, iy, ix, 0);
            const T* xp = &x.data[xi];
            for (int ic = 0; ic < ic_n; ++ic) {
              const std::int64_t wi = w.index(0, 0, 0, 0) +
                                      ((static_cast<std::int64_t>(ky) * kw + kx) * ic_n + ic) * oc_n;
              const T* wr = &w.data[wi];
              T xv = xp[ic];
              T a = T(0);
              if (gw) {
                T* dwr = &(*gw)[wi];
                for (int oc = 0; oc < oc_n; ++oc) {
                  a += wr[oc] * go[oc];
                  dwr[oc] += xv * go[oc];
                }
              } else {
                for (int oc = 0; oc < oc_n; ++oc) a += wr[oc] * go[oc];
              }
              if (gx) (*gx)[xi + ic] += a;
            }
          }
        }
      }
}

template <class T>
TensorT<T> conv2d_depthwise_forward(const TensorT<T>& x, const TensorT<T>& w, int stride,
                                    Padding pad) {
  const int kh = w.dims.n, kw = w.dims.h, cn = w.dims.w;
  ConvGeom g = conv_geometry(x.dims, kh, kw, stride, pad);
  TensorT<T> out(Shape{x.dims.n, g.out_h, g.out_w, cn});
  for (int b = 0; b < x.dims.n; ++b)
    for (int oy = 0; oy < g.out_h; ++oy)
      for (int ox = 0; ox < g.out_w; ++ox) {
        T* op = &out.data[out.index(b, oy, ox, 0)];
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oy * stride - g.pad_top + ky;
          if (iy < 0 || iy >= x.dims.h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            int ix = ox * stride - g.pad_left + kx;
            if (ix < 0 || ix >= x.dims.w) continue;
            const T* xp = &x.data[x.index(b, iy, ix, 0)];
            const T* wp = &w.data[w.index(ky, kx, 0, 0)];
            for (int c = 0; c < cn; ++c) op[c] += xp[c] * wp[c];
          }
        }
      }
  return out;
}

template <class T>
void conv2d_depthwise_backward(const TensorT<T>& x, const TensorT<T>& w, int stride,
                               Padding pad, const std::vector<T>& gout,
                               std::vector<T>* gx, std::vector<T>* gw) {
  const int kh = w.dims.n, kw = w.dims.h, cn = w.dims.w;
  ConvGeom g = conv_geometry(x.dims, kh, kw, stride, pad);
  TensorT<T> dummy(Shape{x.dims.n, g.out_h, g.out_w, cn});
  for (int b = 0; b < x.dims.n; ++b)
    for (int oy = 0; oy < g.out_h; ++oy)
      for (int ox = 0; ox < g.out_w; ++ox) {
        const T* go = &gout[dummy.index(b, oy, ox, 0)];
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oy * stride - g.pad_top + ky;
          if (iy < 0 || iy >= x.dims.h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            int ix = ox * stride - g.pad_left + kx;
            if (ix < 0 || ix >= x.dims.w) continue;
            const std::int64_t xi = x.index(b, iy, ix, 0);
            const std::int64_t wi = w.index(ky, kx, 0, 0);
            for (int c = 0; c < cn; ++c) {
              if (gx) (*gx)[xi + c] += w.data[wi + c] * go[c];
              if (gw) (*gw)[wi + c] += x.data[xi + c] * go[c];
            }
          }
        }
      }
}

template <class T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const ConvKernelT<T>& k, int stride,
                          Padding pad) {
  check_conv_channels(x, k);
  if (k.kind == KernelKind::depthwise)
    return conv2d_depthwise_forward(x, k.weights, stride, pad);
  return conv2d_full_forward(x, k.weights, stride, pad);
}

}  // namespace tsl
