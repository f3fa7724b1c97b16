#include "mmfuse/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "mmfuse/error.hpp"

namespace mmfuse::ops {

namespace {

template <typename T>
using Inputs = std::vector<detail::ImplPtr<T>>;

template <typename T>
using Impl = detail::TensorImpl<T>;

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T, typename Fn>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::initializer_list<const Tensor<T>*> inputs, Fn&& fn) {
  Tensor<T> out(std::move(shape), std::move(values));
  if (!grad_mode_enabled()) return out;
  bool any = false;
  for (const auto* t : inputs) any = any || t->requires_grad();
  if (!any) return out;
  auto node = std::make_shared<detail::Node<T>>();
  for (const auto* t : inputs) node->inputs.push_back(t->defined() ? t->impl() : nullptr);
  node->backward = std::forward<Fn>(fn);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

// Gradient buffer of an input, or nullptr when it does not need one.
template <typename T>
T* grad_ptr(const detail::ImplPtr<T>& p) {
  return (p && p->requires_grad) ? p->ensure_grad().data() : nullptr;
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  expects(s.size() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + " input, got " + shape_str(s));
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  expects(a == b, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad, const char* op) {
  expects(stride > 0, std::string(op) + ": stride must be positive");
  expects(in + 2 * pad >= k, std::string(op) + ": kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

// col[(ci*kh + ki)*kw + kj][img*P + oy*ow + ox] = x[img][ci][oy*s - p + ki][ox*s - p + kj]
template <typename T>
void im2col(const T* x, std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, T* col) {
  const std::size_t P = oh * ow;
  const std::size_t cols = n * P;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* dst = col + ((ci * kh + ki) * kw + kj) * cols;
        for (std::size_t img = 0; img < n; ++img) {
          const T* src = x + (img * c + ci) * h * w;
          T* drow = dst + img * P;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
            T* d = drow + oy * ow;
            if (iy < 0 || iy >= static_cast<long>(h)) {
              std::fill(d, d + ow, T(0));
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(iy) * w;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
              d[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? T(0) : srow[ix];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, T* x) {
  const std::size_t P = oh * ow;
  const std::size_t cols = n * P;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* src = col + ((ci * kh + ki) * kw + kj) * cols;
        for (std::size_t img = 0; img < n; ++img) {
          T* dst = x + (img * c + ci) * h * w;
          const T* srow = src + img * P;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            T* drow = dst + static_cast<std::size_t>(iy) * w;
            const T* s = srow + oy * ow;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
              if (ix >= 0 && ix < static_cast<long>(w)) drow[ix] += s[ox];
            }
          }
        }
      }
    }
  }
}

// Axis-1 layout helpers: a tensor seen as [outer, channels, inner].
struct ChannelView {
  std::size_t outer, channels, inner;
};

ChannelView channel_view(const Shape& s, const char* op) {
  expects(s.size() == 2 || s.size() == 4, std::string(op) + ": expected rank 2 or 4, got " + shape_str(s));
  return {s[0], s[1], s.size() == 4 ? s[2] * s[3] : 1};
}

struct LinearTap {
  std::size_t lo, hi;
  double frac;
};

// Align-corners-false source taps for one axis.
std::vector<LinearTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<LinearTap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = lo + 1 < in ? lo + 1 : lo;
    double frac = src - static_cast<double>(lo);
    if (hi == lo) frac = 0;
    taps[i] = {lo, hi, frac};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](const Impl<T>& o, const Inputs<T>& in) {
    for (int k = 0; k < 2; ++k) {
      if (T* g = grad_ptr(in[k])) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](const Impl<T>& o, const Inputs<T>& in) {
    if (T* g = grad_ptr(in[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (T* g = grad_ptr(in[1])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](const Impl<T>& o, const Inputs<T>& in) {
    if (T* g = grad_ptr(in[0])) {
      const auto& y = in[1]->data;
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * y[i];
    }
    if (T* g = grad_ptr(in[1])) {
      const auto& x = in[0]->data;
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * x[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return make_result<T>(a.shape(), std::move(out), {&a}, [factor](const Impl<T>& o, const Inputs<T>& in) {
    if (T* g = grad_ptr(in[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * factor;
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  expects(shape_numel(shape) == a.numel(),
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>(std::move(shape), std::move(out), {&a}, [](const Impl<T>& o, const Inputs<T>& in) {
    if (T* g = grad_ptr(in[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  return make_result<T>(Shape{1}, {total}, {&a}, [](const Impl<T>& o, const Inputs<T>& in) {
    if (T* g = grad_ptr(in[0])) {
      const T go = o.grad[0];
      for (std::size_t i = 0; i < in[0]->data.size(); ++i) g[i] += go;
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  const T inv = T(1) / static_cast<T>(a.numel());
  return make_result<T>(Shape{1}, {total * inv}, {&a}, [inv](const Impl<T>& o, const Inputs<T>& in) {
    if (T* g = grad_ptr(in[0])) {
      const T go = o.grad[0] * inv;
      for (std::size_t i = 0; i < in[0]->data.size(); ++i) g[i] += go;
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return make_result<T>(a.shape(), std::move(out), {&a}, [](const Impl<T>& o, const Inputs<T>& in) {
    if (T* g = grad_ptr(in[0])) {
      const auto& x = in[0]->data;
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        if (x[i] > T(0)) g[i] += o.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : slope * x[i];
  return make_result<T>(a.shape(), std::move(out), {&a}, [slope](const Impl<T>& o, const Inputs<T>& in) {
    if (T* g = grad_ptr(in[0])) {
      const auto& x = in[0]->data;
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += x[i] > T(0) ? o.grad[i] : slope * o.grad[i];
    }
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  return make_result<T>(a.shape(), std::move(out), {&a}, [](const Impl<T>& o, const Inputs<T>& in) {
    if (T* g = grad_ptr(in[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * (T(1) - o.data[i] * o.data[i]);
    }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const std::size_t n = a.dim(0), d = a.dim(1), k = b.dim(1);
  expects(b.dim(0) == d, "matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(n * k);
  MapR<T>(out.data(), n, k).noalias() = CMapR<T>(a.data().data(), n, d) * CMapR<T>(b.data().data(), d, k);
  return make_result<T>(Shape{n, k}, std::move(out), {&a, &b}, [n, d, k](const Impl<T>& o, const Inputs<T>& in) {
    CMapR<T> go(o.grad.data(), n, k);
    if (T* g = grad_ptr(in[0])) {
      MapR<T>(g, n, d).noalias() += go * CMapR<T>(in[1]->data.data(), d, k).transpose();
    }
    if (T* g = grad_ptr(in[1])) {
      MapR<T>(g, d, k).noalias() += CMapR<T>(in[0]->data.data(), n, d).transpose() * go;
    }
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  require_rank(a.shape(), 2, "slice_rows");
  expects(begin < end && end <= a.dim(0), "slice_rows: bad range for " + shape_str(a.shape()));
  const std::size_t cols = a.dim(1);
  auto src = a.data();
  std::vector<T> out(src.begin() + begin * cols, src.begin() + end * cols);
  return make_result<T>(Shape{end - begin, cols}, std::move(out), {&a},
                        [begin, cols](const Impl<T>& o, const Inputs<T>& in) {
                          if (T* g = grad_ptr(in[0])) {
                            g += begin * cols;
                            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  expects(!parts.empty(), "concat_channels: nothing to concatenate");
  const auto first = channel_view(parts[0].shape(), "concat_channels");
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto v = channel_view(p.shape(), "concat_channels");
    expects(v.outer == first.outer && v.inner == first.inner && p.rank() == parts[0].rank(),
            "concat_channels: incompatible shapes " + shape_str(parts[0].shape()) + " and " + shape_str(p.shape()));
    offsets.push_back(total);
    total += v.channels;
  }
  Shape shape = parts[0].shape();
  shape[1] = total;
  std::vector<T> out(first.outer * total * first.inner);
  std::vector<std::size_t> widths;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t c = parts[k].dim(1);
    widths.push_back(c);
    auto src = parts[k].data();
    for (std::size_t o = 0; o < first.outer; ++o) {
      std::copy_n(src.begin() + o * c * first.inner, c * first.inner,
                  out.begin() + (o * total + offsets[k]) * first.inner);
    }
  }

  Tensor<T> result(std::move(shape), std::move(out));
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (!grad_mode_enabled() || !any) return result;
  auto node = std::make_shared<detail::Node<T>>();
  for (const auto& p : parts) node->inputs.push_back(p.impl());
  const std::size_t outer = first.outer, inner = first.inner;
  node->backward = [offsets, widths, total, outer, inner](const Impl<T>& o, const Inputs<T>& in) {
    for (std::size_t k = 0; k < in.size(); ++k) {
      T* g = grad_ptr(in[k]);
      if (!g) continue;
      const std::size_t c = widths[k];
      for (std::size_t b = 0; b < outer; ++b) {
        const T* src = o.grad.data() + (b * total + offsets[k]) * inner;
        T* dst = g + b * c * inner;
        for (std::size_t i = 0; i < c * inner; ++i) dst[i] += src[i];
      }
    }
  };
  result.impl()->requires_grad = true;
  result.impl()->node = std::move(node);
  return result;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dGeometry geom) {
  require_rank(x.shape(), 4, "conv2d");
  require_rank(weight.shape(), 4, "conv2d weight");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oc = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  expects(weight.dim(1) == c, "conv2d: input has " + std::to_string(c) + " channels but weight expects " +
                                  std::to_string(weight.dim(1)));
  if (bias.defined()) expects(bias.numel() == oc, "conv2d: bias length must equal output channels");
  const std::size_t oh = conv_out(h, kh, geom.stride, geom.padding, "conv2d");
  const std::size_t ow = conv_out(w, kw, geom.stride, geom.padding, "conv2d");
  const std::size_t K = c * kh * kw, P = oh * ow, cols = n * P;

  auto col = std::make_shared<std::vector<T>>(K * cols);
  im2col(x.data().data(), n, c, h, w, kh, kw, geom.stride, geom.padding, oh, ow, col->data());
  MatR<T> y2 = CMapR<T>(weight.data().data(), oc, K) * CMapR<T>(col->data(), K, cols);

  std::vector<T> out(n * oc * P);
  for (std::size_t img = 0; img < n; ++img) {
    for (std::size_t o = 0; o < oc; ++o) {
      const T b = bias.defined() ? bias.data()[o] : T(0);
      const T* src = y2.data() + o * cols + img * P;
      T* dst = out.data() + (img * oc + o) * P;
      for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + b;
    }
  }
  if (!weight.requires_grad()) col.reset();

  return make_result<T>(
      Shape{n, oc, oh, ow}, std::move(out), {&x, &weight, &bias},
      [=](const Impl<T>& o, const Inputs<T>& in) {
        MatR<T> gy(oc, cols);
        for (std::size_t img = 0; img < n; ++img) {
          for (std::size_t ch = 0; ch < oc; ++ch) {
            std::copy_n(o.grad.data() + (img * oc + ch) * P, P, gy.data() + ch * cols + img * P);
          }
        }
        if (T* g = grad_ptr(in[1])) {
          MapR<T>(g, oc, K).noalias() += gy * CMapR<T>(col->data(), K, cols).transpose();
        }
        if (T* g = grad_ptr(in[2])) {
          for (std::size_t ch = 0; ch < oc; ++ch) g[ch] += gy.row(ch).sum();
        }
        if (T* g = grad_ptr(in[0])) {
          MatR<T> dcol = CMapR<T>(in[1]->data.data(), oc, K).transpose() * gy;
          col2im(dcol.data(), n, c, h, w, kh, kw, geom.stride, geom.padding, oh, ow, g);
        }
      });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dGeometry geom,
                           std::size_t output_padding) {
  require_rank(x.shape(), 4, "conv_transpose2d");
  require_rank(weight.shape(), 4, "conv_transpose2d weight");
  const std::size_t n = x.dim(0), ic = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oc = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  expects(weight.dim(0) == ic, "conv_transpose2d: input has " + std::to_string(ic) +
                                   " channels but weight expects " + std::to_string(weight.dim(0)));
  expects(geom.stride > 0 && output_padding < geom.stride, "conv_transpose2d: output_padding must be < stride");
  if (bias.defined()) expects(bias.numel() == oc, "conv_transpose2d: bias length must equal output channels");
  const long oh_l = static_cast<long>((h - 1) * geom.stride + kh + output_padding) - 2 * static_cast<long>(geom.padding);
  const long ow_l = static_cast<long>((w - 1) * geom.stride + kw + output_padding) - 2 * static_cast<long>(geom.padding);
  expects(oh_l > 0 && ow_l > 0, "conv_transpose2d: empty output");
  const std::size_t oh = static_cast<std::size_t>(oh_l), ow = static_cast<std::size_t>(ow_l);
  const std::size_t HW = h * w, cols = n * HW, K = oc * kh * kw;

  auto x2 = std::make_shared<MatR<T>>(ic, cols);
  auto xs = x.data();
  for (std::size_t img = 0; img < n; ++img) {
    for (std::size_t ci = 0; ci < ic; ++ci) {
      std::copy_n(xs.begin() + (img * ic + ci) * HW, HW, x2->data() + ci * cols + img * HW);
    }
  }
  MatR<T> col = CMapR<T>(weight.data().data(), ic, K).transpose() * (*x2);
  std::vector<T> out(n * oc * oh * ow, T(0));
  col2im(col.data(), n, oc, oh, ow, kh, kw, geom.stride, geom.padding, h, w, out.data());
  if (bias.defined()) {
    for (std::size_t img = 0; img < n; ++img) {
      for (std::size_t o = 0; o < oc; ++o) {
        T* dst = out.data() + (img * oc + o) * oh * ow;
        const T b = bias.data()[o];
        for (std::size_t p = 0; p < oh * ow; ++p) dst[p] += b;
      }
    }
  }
  if (!weight.requires_grad()) x2.reset();

  return make_result<T>(
      Shape{n, oc, oh, ow}, std::move(out), {&x, &weight, &bias},
      [=](const Impl<T>& o, const Inputs<T>& in) {
        std::vector<T> dcol(K * cols);
        im2col(o.grad.data(), n, oc, oh, ow, kh, kw, geom.stride, geom.padding, h, w, dcol.data());
        CMapR<T> dc(dcol.data(), K, cols);
        if (T* g = grad_ptr(in[1])) {
          MapR<T>(g, ic, K).noalias() += (*x2) * dc.transpose();
        }
        if (T* g = grad_ptr(in[2])) {
          for (std::size_t img = 0; img < n; ++img) {
            for (std::size_t ch = 0; ch < oc; ++ch) {
              const T* src = o.grad.data() + (img * oc + ch) * oh * ow;
              T acc = 0;
              for (std::size_t p = 0; p < oh * ow; ++p) acc += src[p];
              g[ch] += acc;
            }
          }
        }
        if (T* g = grad_ptr(in[0])) {
          MatR<T> dx2 = CMapR<T>(in[1]->data.data(), ic, K) * dc;
          for (std::size_t img = 0; img < n; ++img) {
            for (std::size_t ci = 0; ci < ic; ++ci) {
              const T* src = dx2.data() + ci * cols + img * HW;
              T* dst = g + (img * ic + ci) * HW;
              for (std::size_t q = 0; q < HW; ++q) dst[q] += src[q];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride, std::size_t padding) {
  require_rank(x.shape(), 4, "max_pool2d");
  expects(padding < kernel, "max_pool2d: padding must be smaller than the kernel");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = conv_out(h, kernel, stride, padding, "max_pool2d");
  const std::size_t ow = conv_out(w, kernel, stride, padding, "max_pool2d");
  std::vector<T> out(n * c * oh * ow);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  auto xs = x.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = xs.data() + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_i = 0;
        bool found = false;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            const std::size_t idx = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
            if (!found || src[idx] > best) {
              best = src[idx];
              best_i = idx;
              found = true;
            }
          }
        }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = best;
        (*argmax)[o] = plane * h * w + best_i;
      }
    }
  }
  return make_result<T>(Shape{n, c, oh, ow}, std::move(out), {&x}, [argmax](const Impl<T>& o, const Inputs<T>& in) {
    if (T* g = grad_ptr(in[0])) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*argmax)[i]] += o.grad[i];
    }
  });
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t window) {
  require_rank(x.shape(), 4, "avg_pool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  expects(window > 0 && h % window == 0 && w % window == 0,
          "avg_pool2d: spatial size " + shape_str(x.shape()) + " not divisible by window " + std::to_string(window));
  const std::size_t oh = h / window, ow = w / window;
  const T inv = T(1) / static_cast<T>(window * window);
  std::vector<T> out(n * c * oh * ow, T(0));
  auto xs = x.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        out[(plane * oh + y / window) * ow + xx / window] += xs[(plane * h + y) * w + xx];
      }
    }
  }
  for (auto& v : out) v *= inv;
  return make_result<T>(Shape{n, c, oh, ow}, std::move(out), {&x}, [=](const Impl<T>& o, const Inputs<T>& in) {
    if (T* g = grad_ptr(in[0])) {
      for (std::size_t plane = 0; plane < n * c; ++plane) {
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t xx = 0; xx < w; ++xx) {
            g[(plane * h + y) * w + xx] += o.grad[(plane * oh + y / window) * ow + xx / window] * inv;
          }
        }
      }
    }
  });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const T inv = T(1) / static_cast<T>(hw);
  std::vector<T> out(n * c);
  auto xs = x.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    T acc = 0;
    for (std::size_t i = 0; i < hw; ++i) acc += xs[plane * hw + i];
    out[plane] = acc * inv;
  }
  return make_result<T>(Shape{n, c}, std::move(out), {&x}, [hw, inv](const Impl<T>& o, const Inputs<T>& in) {
    if (T* g = grad_ptr(in[0])) {
      for (std::size_t plane = 0; plane < o.grad.size(); ++plane) {
        const T go = o.grad[plane] * inv;
        for (std::size_t i = 0; i < hw; ++i) g[plane * hw + i] += go;
      }
    }
  });
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift, Tensor<T>& running_mean,
                     Tensor<T>& running_var, bool training, T decay, T epsilon) {
  require_rank(x.shape(), 4, "batch_norm");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  expects(scale.numel() == c && shift.numel() == c && running_mean.numel() == c && running_var.numel() == c,
          "batch_norm: parameter length must equal channel count " + std::to_string(c));
  const std::size_t count = n * hw;
  expects(!training || count > 1, "batch_norm: training mode needs more than one value per channel");
  auto xs = x.data();
  auto mean_of = std::make_shared<std::vector<T>>(c);
  auto invstd = std::make_shared<std::vector<T>>(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    T mu, var;
    if (training) {
      double s = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xs.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xs.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      mu = static_cast<T>(m);
      var = static_cast<T>(ss / static_cast<double>(count));
      const T unbiased = static_cast<T>(ss / static_cast<double>(count - 1));
      running_mean.data()[ch] = decay * running_mean.data()[ch] + (T(1) - decay) * mu;
      running_var.data()[ch] = decay * running_var.data()[ch] + (T(1) - decay) * unbiased;
    } else {
      mu = running_mean.data()[ch];
      var = running_var.data()[ch];
    }
    (*mean_of)[ch] = mu;
    (*invstd)[ch] = T(1) / std::sqrt(var + epsilon);
  }
  std::vector<T> out(x.numel());
  auto sc = scale.data();
  auto sh = shift.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* p = xs.data() + (b * c + ch) * hw;
      T* q = out.data() + (b * c + ch) * hw;
      const T mu = (*mean_of)[ch], is = (*invstd)[ch];
      for (std::size_t i = 0; i < hw; ++i) q[i] = (p[i] - mu) * is * sc[ch] + sh[ch];
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {&x, &scale, &shift},
      [=](const Impl<T>& o, const Inputs<T>& in) {
        const auto& xv = in[0]->data;
        const auto& gam = in[1]->data;
        T* gx = grad_ptr(in[0]);
        T* gs = grad_ptr(in[1]);
        T* gb = grad_ptr(in[2]);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T mu = (*mean_of)[ch], is = (*invstd)[ch];
          double sum_g = 0, sum_gx = 0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t base = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const T xhat = (xv[base + i] - mu) * is;
              sum_g += o.grad[base + i];
              sum_gx += o.grad[base + i] * xhat;
            }
          }
          if (gs) gs[ch] += static_cast<T>(sum_gx);
          if (gb) gb[ch] += static_cast<T>(sum_g);
          if (!gx) continue;
          if (training) {
            const T mg = static_cast<T>(sum_g / static_cast<double>(count));
            const T mgx = static_cast<T>(sum_gx / static_cast<double>(count));
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t base = (b * c + ch) * hw;
              for (std::size_t i = 0; i < hw; ++i) {
                const T xhat = (xv[base + i] - mu) * is;
                gx[base + i] += gam[ch] * is * (o.grad[base + i] - mg - xhat * mgx);
              }
            }
          } else {
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t base = (b * c + ch) * hw;
              for (std::size_t i = 0; i < hw; ++i) gx[base + i] += o.grad[base + i] * gam[ch] * is;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift, T epsilon) {
  require_rank(x.shape(), 4, "instance_norm");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  expects(scale.numel() == c && shift.numel() == c,
          "instance_norm: parameter length must equal channel count " + std::to_string(c));
  expects(hw > 1, "instance_norm: needs more than one spatial position");
  auto xs = x.data();
  auto sc = scale.data();
  auto sh = shift.data();
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto invstd = std::make_shared<std::vector<T>>(n * c);
  std::vector<T> out(x.numel());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* p = xs.data() + plane * hw;
    double s = 0;
    for (std::size_t i = 0; i < hw; ++i) s += p[i];
    const double m = s / static_cast<double>(hw);
    double ss = 0;
    for (std::size_t i = 0; i < hw; ++i) ss += (p[i] - m) * (p[i] - m);
    const T is = T(1) / std::sqrt(static_cast<T>(ss / static_cast<double>(hw)) + epsilon);
    (*invstd)[plane] = is;
    const std::size_t ch = plane % c;
    for (std::size_t i = 0; i < hw; ++i) {
      const T xh = (p[i] - static_cast<T>(m)) * is;
      (*xhat)[plane * hw + i] = xh;
      out[plane * hw + i] = xh * sc[ch] + sh[ch];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {&x, &scale, &shift},
                        [=](const Impl<T>& o, const Inputs<T>& in) {
                          const auto& gam = in[1]->data;
                          T* gx = grad_ptr(in[0]);
                          T* gs = grad_ptr(in[1]);
                          T* gb = grad_ptr(in[2]);
                          for (std::size_t plane = 0; plane < n * c; ++plane) {
                            const std::size_t ch = plane % c;
                            const std::size_t base = plane * hw;
                            double sum_g = 0, sum_gx = 0;
                            for (std::size_t i = 0; i < hw; ++i) {
                              sum_g += o.grad[base + i];
                              sum_gx += o.grad[base + i] * (*xhat)[base + i];
                            }
                            if (gs) gs[ch] += static_cast<T>(sum_gx);
                            if (gb) gb[ch] += static_cast<T>(sum_g);
                            if (!gx) continue;
                            const T mg = static_cast<T>(sum_g / static_cast<double>(hw));
                            const T mgx = static_cast<T>(sum_gx / static_cast<double>(hw));
                            const T k = gam[ch] * (*invstd)[plane];
                            for (std::size_t i = 0; i < hw; ++i) {
                              gx[base + i] += k * (o.grad[base + i] - mg - (*xhat)[base + i] * mgx);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  expects(x.rank() >= 2, "bilinear_resize: need at least two axes, got " + shape_str(x.shape()));
  expects(out_h >= 1 && out_w >= 1, "bilinear_resize: output dims must be >= 1");
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const std::size_t planes = x.numel() / (h * w);
  auto ty = std::make_shared<std::vector<LinearTap>>(bilinear_taps(h, out_h));
  auto tx = std::make_shared<std::vector<LinearTap>>(bilinear_taps(w, out_w));
  Shape shape = x.shape();
  shape[shape.size() - 2] = out_h;
  shape[shape.size() - 1] = out_w;
  std::vector<T> out(planes * out_h * out_w);
  auto xs = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xs.data() + p * h * w;
    T* dst = out.data() + p * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto& a = (*ty)[i];
      const T fy = static_cast<T>(a.frac);
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto& b = (*tx)[j];
        const T fx = static_cast<T>(b.frac);
        const T top = src[a.lo * w + b.lo] * (T(1) - fx) + src[a.lo * w + b.hi] * fx;
        const T bot = src[a.hi * w + b.lo] * (T(1) - fx) + src[a.hi * w + b.hi] * fx;
        dst[i * out_w + j] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  return make_result<T>(std::move(shape), std::move(out), {&x}, [=](const Impl<T>& o, const Inputs<T>& in) {
    T* g = grad_ptr(in[0]);
    if (!g) return;
    for (std::size_t p = 0; p < planes; ++p) {
      T* dst = g + p * h * w;
      const T* src = o.grad.data() + p * out_h * out_w;
      for (std::size_t i = 0; i < out_h; ++i) {
        const auto& a = (*ty)[i];
        const T fy = static_cast<T>(a.frac);
        for (std::size_t j = 0; j < out_w; ++j) {
          const auto& b = (*tx)[j];
          const T fx = static_cast<T>(b.frac);
          const T go = src[i * out_w + j];
          dst[a.lo * w + b.lo] += go * (T(1) - fy) * (T(1) - fx);
          dst[a.lo * w + b.hi] += go * (T(1) - fy) * fx;
          dst[a.hi * w + b.lo] += go * fy * (T(1) - fx);
          dst[a.hi * w + b.hi] += go * fy * fx;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  expects(labels.size() == n, "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                  std::to_string(n) + " rows");
  auto probs = std::make_shared<std::vector<T>>(n * k);
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  auto z = logits.data();
  double loss = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    expects(y >= 0 && static_cast<std::size_t>(y) < k,
            "softmax_cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
    const T* row = z.data() + r * k;
    const T mx = *std::max_element(row, row + k);
    T denom = 0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < k; ++j) (*probs)[r * k + j] = std::exp(row[j] - mx) / denom;
    loss += static_cast<double>(std::log(denom) + mx - row[y]);
  }
  return make_result<T>(Shape{1}, {static_cast<T>(loss / static_cast<double>(n))}, {&logits},
                        [=](const Impl<T>& o, const Inputs<T>& in) {
                          T* g = grad_ptr(in[0]);
                          if (!g) return;
                          const T go = o.grad[0] / static_cast<T>(n);
                          for (std::size_t r = 0; r < n; ++r) {
                            for (std::size_t j = 0; j < k; ++j) {
                              const T onehot = static_cast<int>(j) == (*lab)[r] ? T(1) : T(0);
                              g[r * k + j] += go * ((*probs)[r * k + j] - onehot);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> mse_to_constant(const Tensor<T>& x, T target) {
  double acc = 0;
  for (T v : x.data()) acc += static_cast<double>(v - target) * static_cast<double>(v - target);
  const T inv = T(1) / static_cast<T>(x.numel());
  return make_result<T>(Shape{1}, {static_cast<T>(acc / static_cast<double>(x.numel()))}, {&x},
                        [=](const Impl<T>& o, const Inputs<T>& in) {
                          T* g = grad_ptr(in[0]);
                          if (!g) return;
                          const auto& xv = in[0]->data;
                          for (std::size_t i = 0; i < xv.size(); ++i) g[i] += o.grad[0] * T(2) * (xv[i] - target) * inv;
                        });
}

template <typename T>
Tensor<T> l1_distance(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "l1_distance");
  double acc = 0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(static_cast<double>(x[i] - y[i]));
  const T inv = T(1) / static_cast<T>(a.numel());
  return make_result<T>(Shape{1}, {static_cast<T>(acc / static_cast<double>(a.numel()))}, {&a, &b},
                        [=](const Impl<T>& o, const Inputs<T>& in) {
                          const auto& xv = in[0]->data;
                          const auto& yv = in[1]->data;
                          T* ga = grad_ptr(in[0]);
                          T* gb = grad_ptr(in[1]);
                          for (std::size_t i = 0; i < xv.size(); ++i) {
                            const T d = xv[i] - yv[i];
                            const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                            if (ga) ga[i] += o.grad[0] * s * inv;
                            if (gb) gb[i] -= o.grad[0] * s * inv;
                          }
                        });
}

#define MMFUSE_INSTANTIATE_OPS(T)                                                                                    \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                        \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                        \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                        \
  template Tensor<T> scale(const Tensor<T>&, T);                                                                     \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                               \
  template Tensor<T> sum(const Tensor<T>&);                                                                          \
  template Tensor<T> mean(const Tensor<T>&);                                                                         \
  template Tensor<T> relu(const Tensor<T>&);                                                                         \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                                \
  template Tensor<T> tanh(const Tensor<T>&);                                                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                                     \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                                         \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                                                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dGeometry);                   \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dGeometry,          \
                                      std::size_t);                                                                  \
  template Tensor<T> max_pool2d(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                            \
  template Tensor<T> avg_pool2d(const Tensor<T>&, std::size_t);                                                      \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                              \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&, bool, \
                                T, T);                                                                               \
  template Tensor<T> instance_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                         \
  template Tensor<T> bilinear_resize(const Tensor<T>&, std::size_t, std::size_t);                                    \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);                                  \
  template Tensor<T> mse_to_constant(const Tensor<T>&, T);                                                           \
  template Tensor<T> l1_distance(const Tensor<T>&, const Tensor<T>&);

MMFUSE_INSTANTIATE_OPS(float)
MMFUSE_INSTANTIATE_OPS(double)

}  // namespace mmfuse::ops
