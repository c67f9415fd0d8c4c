#include "nsae/conv.hpp"

#include <cmath>
#include <limits>

#include "detail/gemm.hpp"

namespace nsae {

namespace {

using nsae::detail::Node;

template <class T, class Backprop>
Tensor<T> make_op(Shape shape, std::vector<T> value,
                  std::vector<std::shared_ptr<Node<T>>> parents, Backprop bp) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  if (rg) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(bp);
  }
  return Tensor<T>(std::move(n));
}

// col is [C*k*k, Ho*Wo] for one image.
template <class T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad,
            int ho, int wo, T* col) {
  for (int ch = 0; ch < c; ++ch) {
    for (int di = 0; di < k; ++di) {
      for (int dj = 0; dj < k; ++dj) {
        T* dst = col + ((static_cast<long>(ch) * k + di) * k + dj) *
                           (static_cast<long>(ho) * wo);
        for (int oi = 0; oi < ho; ++oi) {
          const int si = oi * stride - pad + di;
          if (si < 0 || si >= h) {
            for (int oj = 0; oj < wo; ++oj) dst[oi * wo + oj] = T(0);
            continue;
          }
          const T* src = x + (static_cast<long>(ch) * h + si) * w;
          for (int oj = 0; oj < wo; ++oj) {
            const int sj = oj * stride - pad + dj;
            dst[oi * wo + oj] = (sj >= 0 && sj < w) ? src[sj] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-accumulate col back into the image.
template <class T>
void col2im_acc(const T* col, int c, int h, int w, int k, int stride, int pad,
                int ho, int wo, T* x) {
  for (int ch = 0; ch < c; ++ch) {
    for (int di = 0; di < k; ++di) {
      for (int dj = 0; dj < k; ++dj) {
        const T* src = col + ((static_cast<long>(ch) * k + di) * k + dj) *
                                 (static_cast<long>(ho) * wo);
        for (int oi = 0; oi < ho; ++oi) {
          const int si = oi * stride - pad + di;
          if (si < 0 || si >= h) continue;
          T* dst = x + (static_cast<long>(ch) * h + si) * w;
          for (int oj = 0; oj < wo; ++oj) {
            const int sj = oj * stride - pad + dj;
            if (sj >= 0 && sj < w) dst[sj] += src[oi * wo + oj];
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel,
                 const Tensor<T>& bias, int stride, int padding) {
  if (x.shape().size() != 4 || kernel.shape().size() != 4)
    throw DimensionError("conv2d: expected 4-d input and kernel");
  const int b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const int f = kernel.shape()[0], kc = kernel.shape()[1], k = kernel.shape()[2];
  if (kernel.shape()[3] != k) throw DimensionError("conv2d: kernel must be square");
  if (kc != c)
    throw DimensionError("conv2d: kernel channels " + std::to_string(kc) +
                         " != input channels " + std::to_string(c));
  if (k > h + 2 * padding || k > w + 2 * padding)
    throw DimensionError("conv2d: kernel larger than padded input");
  if (bias.size() != f) throw DimensionError("conv2d: bias size != filter count");
  const int ho = (h + 2 * padding - k) / stride + 1;
  const int wo = (w + 2 * padding - k) / stride + 1;
  const int ckk = c * k * k, owh = ho * wo;

  std::vector<T> out(static_cast<long>(b) * f * owh);
  std::vector<T> col(static_cast<long>(ckk) * owh);
  for (int i = 0; i < b; ++i) {
    im2col(x.values().data() + static_cast<long>(i) * c * h * w, c, h, w, k,
           stride, padding, ho, wo, col.data());
    T* o = out.data() + static_cast<long>(i) * f * owh;
    for (int fi = 0; fi < f; ++fi) {
      const T bv = bias.values()[fi];
      for (int p = 0; p < owh; ++p) o[static_cast<long>(fi) * owh + p] = bv;
    }
    detail::gemm_nn_acc(o, kernel.values().data(), col.data(), f, ckk, owh);
  }

  auto px = x.node(), pk = kernel.node(), pb = bias.node();
  auto bp = [px, pk, pb, b, c, h, w, f, k, stride, padding, ho, wo, ckk,
             owh](Node<T>& n) {
    std::vector<T> col(static_cast<long>(ckk) * owh);
    std::vector<T> dcol(static_cast<long>(ckk) * owh);
    const bool need_dx = px->requires_grad;
    for (int i = 0; i < b; ++i) {
      const T* g = n.grad.data() + static_cast<long>(i) * f * owh;
      im2col(px->value.data() + static_cast<long>(i) * c * h * w, c, h, w, k,
             stride, padding, ho, wo, col.data());
      // dW += g * col^T
      detail::gemm_nt_acc(pk->grad.data(), g, col.data(), f, owh, ckk);
      // db += row sums of g
      for (int fi = 0; fi < f; ++fi) {
        T acc = T(0);
        for (int p = 0; p < owh; ++p) acc += g[static_cast<long>(fi) * owh + p];
        pb->grad[fi] += acc;
      }
      if (need_dx) {
        std::fill(dcol.begin(), dcol.end(), T(0));
        detail::gemm_tn_acc(dcol.data(), pk->value.data(), g, ckk, f, owh);
        col2im_acc(dcol.data(), c, h, w, k, stride, padding, ho, wo,
                   px->grad.data() + static_cast<long>(i) * c * h * w);
      }
    }
  };
  return make_op<T>({b, f, ho, wo}, std::move(out), {px, pk, pb}, std::move(bp));
}

template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& kernel,
                           const Tensor<T>& bias, int stride, int padding) {
  if (x.shape().size() != 4 || kernel.shape().size() != 4)
    throw DimensionError("conv_transpose2d: expected 4-d input and kernel");
  const int b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const int kc = kernel.shape()[0], f = kernel.shape()[1], k = kernel.shape()[2];
  if (kernel.shape()[3] != k)
    throw DimensionError("conv_transpose2d: kernel must be square");
  if (kc != c)
    throw DimensionError("conv_transpose2d: kernel in-channels " +
                         std::to_string(kc) + " != input channels " +
                         std::to_string(c));
  if (bias.size() != f)
    throw DimensionError("conv_transpose2d: bias size != filter count");
  const int ho = (h - 1) * stride - 2 * padding + k;
  const int wo = (w - 1) * stride - 2 * padding + k;
  if (ho <= 0 || wo <= 0)
    throw DimensionError("conv_transpose2d: non-positive output size");

  std::vector<T> out(static_cast<long>(b) * f * ho * wo);
  for (int i = 0; i < b; ++i) {
    T* o = out.data() + static_cast<long>(i) * f * ho * wo;
    for (int fi = 0; fi < f; ++fi) {
      const T bv = bias.values()[fi];
      for (int p = 0; p < ho * wo; ++p) o[static_cast<long>(fi) * ho * wo + p] = bv;
    }
    const T* xi = x.values().data() + static_cast<long>(i) * c * h * w;
    for (int ch = 0; ch < c; ++ch) {
      for (int si = 0; si < h; ++si) {
        for (int sj = 0; sj < w; ++sj) {
          const T xv = xi[(static_cast<long>(ch) * h + si) * w + sj];
          if (xv == T(0)) continue;
          const T* wrow =
              kernel.values().data() + static_cast<long>(ch) * f * k * k;
          for (int di = 0; di < k; ++di) {
            const int oi = si * stride - padding + di;
            if (oi < 0 || oi >= ho) continue;
            for (int dj = 0; dj < k; ++dj) {
              const int oj = sj * stride - padding + dj;
              if (oj < 0 || oj >= wo) continue;
              for (int fi = 0; fi < f; ++fi)
                o[(static_cast<long>(fi) * ho + oi) * wo + oj] +=
                    xv * wrow[(static_cast<long>(fi) * k + di) * k + dj];
            }
          }
        }
      }
    }
  }

  auto px = x.node(), pk = kernel.node(), pb = bias.node();
  auto bp = [px, pk, pb, b, c, h, w, f, k, stride, padding, ho, wo](Node<T>& n) {
    for (int i = 0; i < b; ++i) {
      const T* g = n.grad.data() + static_cast<long>(i) * f * ho * wo;
      const T* xi = px->value.data() + static_cast<long>(i) * c * h * w;
      T* gxi = px->grad.data() + static_cast<long>(i) * c * h * w;
      for (int fi = 0; fi < f; ++fi) {
        T acc = T(0);
        for (int p = 0; p < ho * wo; ++p) acc += g[static_cast<long>(fi) * ho * wo + p];
        pb->grad[fi] += acc;
      }
      for (int ch = 0; ch < c; ++ch) {
        const T* wrow = pk->value.data() + static_cast<long>(ch) * f * k * k;
        T* gwrow = pk->grad.data() + static_cast<long>(ch) * f * k * k;
        for (int si = 0; si < h; ++si) {
          for (int sj = 0; sj < w; ++sj) {
            const long xidx = (static_cast<long>(ch) * h + si) * w + sj;
            const T xv = xi[xidx];
            T gx = T(0);
            for (int di = 0; di < k; ++di) {
              const int oi = si * stride - padding + di;
              if (oi < 0 || oi >= ho) continue;
              for (int dj = 0; dj < k; ++dj) {
                const int oj = sj * stride - padding + dj;
                if (oj < 0 || oj >= wo) continue;
                for (int fi = 0; fi < f; ++fi) {
                  const T go = g[(static_cast<long>(fi) * ho + oi) * wo + oj];
                  gx += go * wrow[(static_cast<long>(fi) * k + di) * k + dj];
                  gwrow[(static_cast<long>(fi) * k + di) * k + dj] += go * xv;
                }
              }
            }
            gxi[xidx] += gx;
          }
        }
      }
    }
  };
  return make_op<T>({b, f, ho, wo}, std::move(out), {px, pk, pb}, std::move(bp));
}

template <class T>
Tensor<T> maxpool2d(const Tensor<T>& x, int k, int stride) {
  if (x.shape().size() != 4) throw DimensionError("maxpool2d: expected 4-d input");
  const int b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (k > h || k > w) throw DimensionError("maxpool2d: window exceeds input");
  const int ho = (h - k) / stride + 1;
  const int wo = (w - k) / stride + 1;

  std::vector<T> out(static_cast<long>(b) * c * ho * wo);
  auto argmax = std::make_shared<std::vector<long>>(out.size());
  long oidx = 0;
  for (int i = 0; i < b; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const T* xi = x.values().data() + (static_cast<long>(i) * c + ch) * h * w;
      const long base = (static_cast<long>(i) * c + ch) * h * w;
      for (int oi = 0; oi < ho; ++oi) {
        for (int oj = 0; oj < wo; ++oj, ++oidx) {
          T best = -std::numeric_limits<T>::infinity();
          long besti = -1;
          for (int di = 0; di < k; ++di) {
            const int si = oi * stride + di;
            for (int dj = 0; dj < k; ++dj) {
              const int sj = oj * stride + dj;
              const T v = xi[static_cast<long>(si) * w + sj];
              if (v > best) {
                best = v;
                besti = base + static_cast<long>(si) * w + sj;
              }
            }
          }
          out[oidx] = best;
          (*argmax)[oidx] = besti;
        }
      }
    }
  }

  auto px = x.node();
  return make_op<T>({b, c, ho, wo}, std::move(out), {px}, [px, argmax](Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      px->grad[(*argmax)[i]] += n.grad[i];
  });
}

template <class T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int oh, int ow) {
  if (x.shape().size() != 4)
    throw DimensionError("upsample_bilinear: expected 4-d input");
  if (oh < 1 || ow < 1)
    throw DimensionError("upsample_bilinear: non-positive output size");
  const int b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const float sy = static_cast<float>(h) / oh;
  const float sx = static_cast<float>(w) / ow;

  // Per-output-pixel taps: source indices and weights, shared by all planes.
  struct Tap {
    int y0, y1, x0, x1;
    T wy, wx;
  };
  auto taps = std::make_shared<std::vector<Tap>>(static_cast<std::size_t>(oh) * ow);
  for (int i = 0; i < oh; ++i) {
    float fy = (i + 0.5f) * sy - 0.5f;
    fy = fy < 0 ? 0 : (fy > h - 1 ? h - 1 : fy);
    const int y0 = static_cast<int>(fy);
    for (int j = 0; j < ow; ++j) {
      float fx = (j + 0.5f) * sx - 0.5f;
      fx = fx < 0 ? 0 : (fx > w - 1 ? w - 1 : fx);
      const int x0 = static_cast<int>(fx);
      (*taps)[static_cast<std::size_t>(i) * ow + j] =
          Tap{y0, std::min(y0 + 1, h - 1), x0, std::min(x0 + 1, w - 1),
              static_cast<T>(fy - y0), static_cast<T>(fx - x0)};
    }
  }

  std::vector<T> out(static_cast<long>(b) * c * oh * ow);
  const long planes = static_cast<long>(b) * c;
  for (long p = 0; p < planes; ++p) {
    const T* sp = x.values().data() + p * h * w;
    T* op = out.data() + p * oh * ow;
    for (long q = 0; q < static_cast<long>(oh) * ow; ++q) {
      const Tap& t = (*taps)[q];
      const T top = sp[t.y0 * w + t.x0] * (T(1) - t.wx) + sp[t.y0 * w + t.x1] * t.wx;
      const T bot = sp[t.y1 * w + t.x0] * (T(1) - t.wx) + sp[t.y1 * w + t.x1] * t.wx;
      op[q] = top * (T(1) - t.wy) + bot * t.wy;
    }
  }

  auto px = x.node();
  auto bp = [px, taps, planes, h, w, oh, ow](Node<T>& n) {
    for (long p = 0; p < planes; ++p) {
      T* gx = px->grad.data() + p * h * w;
      const T* gy = n.grad.data() + p * static_cast<long>(oh) * ow;
      for (long q = 0; q < static_cast<long>(oh) * ow; ++q) {
        const auto& t = (*taps)[q];
        const T g = gy[q];
        gx[t.y0 * w + t.x0] += g * (T(1) - t.wy) * (T(1) - t.wx);
        gx[t.y0 * w + t.x1] += g * (T(1) - t.wy) * t.wx;
        gx[t.y1 * w + t.x0] += g * t.wy * (T(1) - t.wx);
        gx[t.y1 * w + t.x1] += g * t.wy * t.wx;
      }
    }
  };
  return make_op<T>({b, c, oh, ow}, std::move(out), {px}, std::move(bp));
}

template <class T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta, BnStats<T>& stats, BnMode mode,
                      T momentum, T eps) {
  if (x.shape().size() != 4) throw DimensionError("batchnorm2d: expected 4-d input");
  const int b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (gamma.size() != c || beta.size() != c ||
      static_cast<int>(stats.running_mean.size()) != c)
    throw DimensionError("batchnorm2d: channel mismatch");
  if (mode != BnMode::kEval && b < 2)
    throw DegeneracyError("batchnorm2d: batch of " + std::to_string(b) +
                          " is degenerate outside eval mode");

  const long plane = static_cast<long>(h) * w;
  const long n_per_c = static_cast<long>(b) * plane;
  std::vector<T> mu(c), var(c);
  if (mode == BnMode::kEval) {
    mu = stats.running_mean;
    var = stats.running_var;
  } else {
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int i = 0; i < b; ++i) {
        const T* p = x.values().data() + (static_cast<long>(i) * c + ch) * plane;
        for (long q = 0; q < plane; ++q) s += p[q];
      }
      const double m = s / static_cast<double>(n_per_c);
      double v = 0.0;
      for (int i = 0; i < b; ++i) {
        const T* p = x.values().data() + (static_cast<long>(i) * c + ch) * plane;
        for (long q = 0; q < plane; ++q) {
          const double d = p[q] - m;
          v += d * d;
        }
      }
      mu[ch] = static_cast<T>(m);
      var[ch] = static_cast<T>(v / static_cast<double>(n_per_c));
    }
    if (mode == BnMode::kTrain) {
      for (int ch = 0; ch < c; ++ch) {
        stats.running_mean[ch] =
            (T(1) - momentum) * stats.running_mean[ch] + momentum * mu[ch];
        stats.running_var[ch] =
            (T(1) - momentum) * stats.running_var[ch] + momentum * var[ch];
      }
    }
  }

  std::vector<T> inv_std(c);
  for (int ch = 0; ch < c; ++ch) inv_std[ch] = T(1) / std::sqrt(var[ch] + eps);

  std::vector<T> out(x.size());
  // xhat is kept for the backward pass of batch-stat modes.
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  for (int i = 0; i < b; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const T* p = x.values().data() + (static_cast<long>(i) * c + ch) * plane;
      T* o = out.data() + (static_cast<long>(i) * c + ch) * plane;
      T* xh = xhat->data() + (static_cast<long>(i) * c + ch) * plane;
      const T g = gamma.values()[ch], bb = beta.values()[ch];
      const T m = mu[ch], is = inv_std[ch];
      for (long q = 0; q < plane; ++q) {
        xh[q] = (p[q] - m) * is;
        o[q] = g * xh[q] + bb;
      }
    }
  }

  auto px = x.node(), pg = gamma.node(), pb = beta.node();
  const bool batch_stats = mode != BnMode::kEval;
  auto bp = [px, pg, pb, xhat, inv_std, b, c, plane, n_per_c,
             batch_stats](Node<T>& n) {
    for (int ch = 0; ch < c; ++ch) {
      const T g = pg->value[ch], is = inv_std[ch];
      // Channel sums of dL/dy and dL/dy * xhat.
      double gsum = 0.0, gxsum = 0.0;
      for (int i = 0; i < b; ++i) {
        const long off = (static_cast<long>(i) * c + ch) * plane;
        const T* gy = n.grad.data() + off;
        const T* xh = xhat->data() + off;
        for (long q = 0; q < plane; ++q) {
          gsum += gy[q];
          gxsum += gy[q] * xh[q];
        }
      }
      pg->grad[ch] += static_cast<T>(gxsum);
      pb->grad[ch] += static_cast<T>(gsum);
      if (!px->requires_grad) continue;
      if (batch_stats) {
        const T mg = static_cast<T>(gsum / static_cast<double>(n_per_c));
        const T mgx = static_cast<T>(gxsum / static_cast<double>(n_per_c));
        for (int i = 0; i < b; ++i) {
          const long off = (static_cast<long>(i) * c + ch) * plane;
          const T* gy = n.grad.data() + off;
          const T* xh = xhat->data() + off;
          T* gx = px->grad.data() + off;
          for (long q = 0; q < plane; ++q)
            gx[q] += g * is * (gy[q] - mg - xh[q] * mgx);
        }
      } else {
        for (int i = 0; i < b; ++i) {
          const long off = (static_cast<long>(i) * c + ch) * plane;
          const T* gy = n.grad.data() + off;
          T* gx = px->grad.data() + off;
          for (long q = 0; q < plane; ++q) gx[q] += g * is * gy[q];
        }
      }
    }
  };
  return make_op<T>(x.shape(), std::move(out), {px, pg, pb}, std::move(bp));
}

#define NSAE_INSTANTIATE_CONV(T)                                               \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&,             \
                               const Tensor<T>&, int, int);                    \
  template Tensor<T> conv_transpose2d<T>(const Tensor<T>&, const Tensor<T>&,   \
                                         const Tensor<T>&, int, int);          \
  template Tensor<T> maxpool2d<T>(const Tensor<T>&, int, int);                 \
  template Tensor<T> upsample_bilinear<T>(const Tensor<T>&, int, int);         \
  template Tensor<T> batchnorm2d<T>(const Tensor<T>&, const Tensor<T>&,        \
                                    const Tensor<T>&, BnStats<T>&, BnMode, T,  \
                                    T);

NSAE_INSTANTIATE_CONV(float)
NSAE_INSTANTIATE_CONV(double)

}  // namespace nsae
