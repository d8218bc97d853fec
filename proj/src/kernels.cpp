#include "lwanet/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace lwanet::kernels {

namespace {

std::atomic<int> g_workers{1};

std::string shape_pair(const char* what, const Shape& got, const Shape& expected) {
  return std::string(what) + " shape " + got.str() + " vs expected " + expected.str();
}

void check_per_channel(const char* layer, const char* what, int64_t numel, int64_t channels) {
  if (numel != channels) {
    throw ShapeError(std::string(layer) + ": " + what + " has " + std::to_string(numel) +
                     " entries for " + std::to_string(channels) + " channels");
  }
}

template <typename T>
void check_conv_operands(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias,
                         const ConvSpec& spec) {
  spec.output_shape(x.shape());
  if (!(weight.shape() == spec.weight_shape())) {
    throw ShapeError("layer " + spec.label() + ": input " + x.shape().str() + ", " +
                     shape_pair("weight", weight.shape(), spec.weight_shape()));
  }
  if (bias != nullptr) {
    if (!spec.has_bias) throw ShapeError("layer " + spec.label() + ": bias given to bias-free conv");
    check_per_channel(spec.label().c_str(), "bias", bias->numel(), spec.out_channels);
  }
}

// Sum of a[i] * b[i] with a fixed eight-lane partial-sum layout.
template <typename T>
T dot8(const T* a, const T* b, int64_t n) {
  T acc[8] = {};
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  T s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

constexpr int64_t kTileN = 512;

// C[M, N] += A[M, K] * B[K, N]; a(i, k) yields A entries. Each C entry is
// accumulated in increasing k order, matching the direct convolution loop.
template <typename T, typename AFn>
void gemm_rows(int64_t m, int64_t n, int64_t k, AFn a, const T* b, int64_t ldb, T* c,
               int64_t ldc) {
  parallel_for(m, [&](int64_t row_begin, int64_t row_end) {
    for (int64_t j0 = 0; j0 < n; j0 += kTileN) {
      const int64_t jn = std::min(kTileN, n - j0);
      int64_t i = row_begin;
      for (; i + 4 <= row_end; i += 4) {
        T* c0 = c + i * ldc + j0;
        T* c1 = c0 + ldc;
        T* c2 = c1 + ldc;
        T* c3 = c2 + ldc;
        for (int64_t kk = 0; kk < k; ++kk) {
          const T a0 = a(i, kk), a1 = a(i + 1, kk), a2 = a(i + 2, kk), a3 = a(i + 3, kk);
          const T* brow = b + kk * ldb + j0;
          for (int64_t j = 0; j < jn; ++j) {
            const T bv = brow[j];
            c0[j] += a0 * bv;
            c1[j] += a1 * bv;
            c2[j] += a2 * bv;
            c3[j] += a3 * bv;
          }
        }
      }
      for (; i < row_end; ++i) {
        T* ci = c + i * ldc + j0;
        for (int64_t kk = 0; kk < k; ++kk) {
          const T av = a(i, kk);
          const T* brow = b + kk * ldb + j0;
          for (int64_t j = 0; j < jn; ++j) ci[j] += av * brow[j];
        }
      }
    }
  });
}

bool is_pointwise(const ConvSpec& spec) {
  return spec.kernel == 1 && spec.stride == 1 && spec.padding == 0;
}

// Rows ordered (channel, kh, kw); columns (oh, ow).
template <typename T>
void im2col(const T* x, int64_t channels, int64_t h, int64_t w, const ConvSpec& spec,
            int64_t oh_count, int64_t ow_count, T* col) {
  const int64_t k = spec.kernel, s = spec.stride, p = spec.padding;
  const int64_t cols = oh_count * ow_count;
  for (int64_t c = 0; c < channels; ++c) {
    const T* xp = x + c * h * w;
    for (int64_t kh = 0; kh < k; ++kh) {
      for (int64_t kw = 0; kw < k; ++kw) {
        T* row = col + ((c * k + kh) * k + kw) * cols;
        for (int64_t oh = 0; oh < oh_count; ++oh) {
          const int64_t ih = oh * s - p + kh;
          T* out = row + oh * ow_count;
          if (ih < 0 || ih >= h) {
            std::fill(out, out + ow_count, T(0));
            continue;
          }
          for (int64_t ow = 0; ow < ow_count; ++ow) {
            const int64_t iw = ow * s - p + kw;
            out[ow] = (iw >= 0 && iw < w) ? xp[ih * w + iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int64_t channels, int64_t h, int64_t w, const ConvSpec& spec,
            int64_t oh_count, int64_t ow_count, T* x) {
  const int64_t k = spec.kernel, s = spec.stride, p = spec.padding;
  const int64_t cols = oh_count * ow_count;
  parallel_for(channels, [&](int64_t c_begin, int64_t c_end) {
    for (int64_t c = c_begin; c < c_end; ++c) {
      T* xp = x + c * h * w;
      for (int64_t kh = 0; kh < k; ++kh) {
        for (int64_t kw = 0; kw < k; ++kw) {
          const T* row = col + ((c * k + kh) * k + kw) * cols;
          for (int64_t oh = 0; oh < oh_count; ++oh) {
            const int64_t ih = oh * s - p + kh;
            if (ih < 0 || ih >= h) continue;
            for (int64_t ow = 0; ow < ow_count; ++ow) {
              const int64_t iw = ow * s - p + kw;
              if (iw >= 0 && iw < w) xp[ih * w + iw] += row[oh * ow_count + ow];
            }
          }
        }
      }
    }
  });
}

template <typename T>
void add_bias(Tensor<T>& out, const std::type_identity_t<Tensor<T>>* bias) {
  if (bias == nullptr) return;
  const Shape& s = out.shape();
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      T* p = out.plane(n, c);
      const T b = (*bias)[c];
      for (int64_t i = 0; i < s.plane(); ++i) p[i] += b;
    }
  }
}

// Range of output indices o with 0 <= o*s - p + kk < extent.
void valid_range(int64_t kk, int64_t s, int64_t p, int64_t extent, int64_t out_count,
                 int64_t& lo, int64_t& hi) {
  // smallest o with o*s >= p - kk
  const int64_t need = p - kk;
  lo = need <= 0 ? 0 : (need + s - 1) / s;
  // largest o with o*s - p + kk <= extent - 1
  const int64_t top = extent - 1 + p - kk;
  hi = top < 0 ? -1 : std::min(out_count - 1, top / s);
}

}  // namespace

void set_num_workers(int workers) { g_workers.store(std::max(1, workers)); }

int num_workers() { return g_workers.load(); }

void parallel_for(int64_t count, const std::function<void(int64_t, int64_t)>& body) {
  const int64_t workers = std::min<int64_t>(num_workers(), count);
  if (workers <= 1) {
    if (count > 0) body(0, count);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(workers - 1));
  const int64_t chunk = (count + workers - 1) / workers;
  for (int64_t t = 1; t < workers; ++t) {
    const int64_t b = t * chunk;
    const int64_t e = std::min(count, b + chunk);
    if (b < e) threads.emplace_back([&body, b, e] { body(b, e); });
  }
  body(0, std::min(count, chunk));
  for (auto& th : threads) th.join();
}

// --- convolution --------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias,
                 const ConvSpec& spec) {
  check_conv_operands(x, weight, bias, spec);
  const Shape in = x.shape();
  const Shape os = spec.output_shape(in);
  Tensor<T> out(os);
  const int64_t g = spec.groups;
  const int64_t cin_g = spec.in_channels / g;
  const int64_t cout_g = spec.out_channels / g;
  const int64_t kdim = cin_g * spec.kernel * spec.kernel;
  const int64_t cols = os.h * os.w;
  const bool pointwise = is_pointwise(spec);
  std::vector<T> col(pointwise ? 0 : static_cast<size_t>(kdim * cols));

  for (int64_t n = 0; n < in.n; ++n) {
    for (int64_t gi = 0; gi < g; ++gi) {
      const T* xg = x.plane(n, gi * cin_g);
      const T* b = xg;
      if (!pointwise) {
        im2col(xg, cin_g, in.h, in.w, spec, os.h, os.w, col.data());
        b = col.data();
      }
      const T* wg = weight.data().data() + gi * cout_g * kdim;
      gemm_rows<T>(
          cout_g, cols, kdim, [wg, kdim](int64_t i, int64_t kk) { return wg[i * kdim + kk]; }, b,
          cols, out.plane(n, gi * cout_g), cols);
    }
  }
  add_bias(out, bias);
  return out;
}

template <typename T>
Tensor<T> conv2d_direct(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias,
                        const ConvSpec& spec) {
  check_conv_operands(x, weight, bias, spec);
  const Shape in = x.shape();
  const Shape os = spec.output_shape(in);
  const int64_t k = spec.kernel, s = spec.stride, p = spec.padding;
  const int64_t cin_g = spec.in_channels / spec.groups;
  const int64_t cout_g = spec.out_channels / spec.groups;
  Tensor<T> out(os);
  for (int64_t n = 0; n < os.n; ++n) {
    for (int64_t co = 0; co < os.c; ++co) {
      const int64_t gi = co / cout_g;
      for (int64_t oh = 0; oh < os.h; ++oh) {
        for (int64_t ow = 0; ow < os.w; ++ow) {
          T acc = 0;
          for (int64_t cl = 0; cl < cin_g; ++cl) {
            const int64_t ci = gi * cin_g + cl;
            for (int64_t kh = 0; kh < k; ++kh) {
              const int64_t ih = oh * s - p + kh;
              if (ih < 0 || ih >= in.h) continue;
              for (int64_t kw = 0; kw < k; ++kw) {
                const int64_t iw = ow * s - p + kw;
                if (iw < 0 || iw >= in.w) continue;
                acc += x.at(n, ci, ih, iw) * weight.at(co, cl, kh, kw);
              }
            }
          }
          out.at(n, co, oh, ow) = acc;
        }
      }
    }
  }
  add_bias(out, bias);
  return out;
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight,
                                const ConvSpec& spec, const Shape& input_shape) {
  const Shape os = spec.output_shape(input_shape);
  if (!(grad_out.shape() == os)) {
    throw ShapeError("layer " + spec.label() + ": " +
                     shape_pair("output gradient", grad_out.shape(), os));
  }
  if (!(weight.shape() == spec.weight_shape())) {
    throw ShapeError("layer " + spec.label() + ": " +
                     shape_pair("weight", weight.shape(), spec.weight_shape()));
  }
  Tensor<T> gx(input_shape);
  const int64_t g = spec.groups;
  const int64_t cin_g = spec.in_channels / g;
  const int64_t cout_g = spec.out_channels / g;
  const int64_t kdim = cin_g * spec.kernel * spec.kernel;
  const int64_t cols = os.h * os.w;
  const bool pointwise = is_pointwise(spec);
  std::vector<T> col(static_cast<size_t>(pointwise ? 0 : kdim * cols));

  for (int64_t n = 0; n < input_shape.n; ++n) {
    for (int64_t gi = 0; gi < g; ++gi) {
      const T* wg = weight.data().data() + gi * cout_g * kdim;
      auto wt = [wg, kdim](int64_t i, int64_t m) { return wg[m * kdim + i]; };
      const T* gg = grad_out.plane(n, gi * cout_g);
      if (pointwise) {
        gemm_rows<T>(kdim, cols, cout_g, wt, gg, cols, gx.plane(n, gi * cin_g), cols);
      } else {
        std::fill(col.begin(), col.end(), T(0));
        gemm_rows<T>(kdim, cols, cout_g, wt, gg, cols, col.data(), cols);
        col2im(col.data(), cin_g, input_shape.h, input_shape.w, spec, os.h, os.w,
               gx.plane(n, gi * cin_g));
      }
    }
  }
  return gx;
}

template <typename T>
Tensor<T> conv2d_backward_weight(const Tensor<T>& x, const Tensor<T>& grad_out,
                                 const ConvSpec& spec) {
  const Shape in = x.shape();
  const Shape os = spec.output_shape(in);
  if (!(grad_out.shape() == os)) {
    throw ShapeError("layer " + spec.label() + ": " +
                     shape_pair("output gradient", grad_out.shape(), os));
  }
  Tensor<T> gw(spec.weight_shape());
  const int64_t g = spec.groups;
  const int64_t cin_g = spec.in_channels / g;
  const int64_t cout_g = spec.out_channels / g;
  const int64_t kdim = cin_g * spec.kernel * spec.kernel;
  const int64_t cols = os.h * os.w;
  const bool pointwise = is_pointwise(spec);
  std::vector<T> col(static_cast<size_t>(pointwise ? 0 : kdim * cols));

  for (int64_t n = 0; n < in.n; ++n) {
    for (int64_t gi = 0; gi < g; ++gi) {
      const T* xg = x.plane(n, gi * cin_g);
      const T* b = xg;
      if (!pointwise) {
        im2col(xg, cin_g, in.h, in.w, spec, os.h, os.w, col.data());
        b = col.data();
      }
      T* wg = gw.data().data() + gi * cout_g * kdim;
      const T* gg = grad_out.plane(n, gi * cout_g);
      parallel_for(cout_g, [&](int64_t m0, int64_t m1) {
        for (int64_t m = m0; m < m1; ++m) {
          for (int64_t kk = 0; kk < kdim; ++kk) {
            wg[m * kdim + kk] += dot8(gg + m * cols, b + kk * cols, cols);
          }
        }
      });
    }
  }
  return gw;
}

template <typename T>
Tensor<T> channel_sum(const Tensor<T>& grad_out) {
  const Shape s = grad_out.shape();
  Tensor<T> out({1, s.c, 1, 1});
  for (int64_t c = 0; c < s.c; ++c) {
    T acc = 0;
    for (int64_t n = 0; n < s.n; ++n) {
      const T* p = grad_out.plane(n, c);
      for (int64_t i = 0; i < s.plane(); ++i) acc += p[i];
    }
    out[c] = acc;
  }
  return out;
}

namespace {

void check_depthwise(const ConvSpec& spec) {
  if (!(spec.groups == spec.in_channels && spec.out_channels == spec.in_channels)) {
    throw ShapeError("layer " + spec.label() + ": depthwise conv needs groups == in == out, got groups " +
                     std::to_string(spec.groups) + ", in " + std::to_string(spec.in_channels) +
                     ", out " + std::to_string(spec.out_channels));
  }
}

}  // namespace

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias,
                           const ConvSpec& spec) {
  check_depthwise(spec);
  check_conv_operands(x, weight, bias, spec);
  const Shape in = x.shape();
  const Shape os = spec.output_shape(in);
  const int64_t k = spec.kernel, s = spec.stride, p = spec.padding;
  Tensor<T> out(os);
  parallel_for(os.n * os.c, [&](int64_t b0, int64_t b1) {
    for (int64_t nc = b0; nc < b1; ++nc) {
      const int64_t n = nc / os.c, c = nc % os.c;
      const T* xp = x.plane(n, c);
      T* op = out.plane(n, c);
      const T* wp = weight.data().data() + c * k * k;
      for (int64_t kh = 0; kh < k; ++kh) {
        int64_t oh_lo, oh_hi;
        valid_range(kh, s, p, in.h, os.h, oh_lo, oh_hi);
        for (int64_t kw = 0; kw < k; ++kw) {
          int64_t ow_lo, ow_hi;
          valid_range(kw, s, p, in.w, os.w, ow_lo, ow_hi);
          const T wv = wp[kh * k + kw];
          for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
            const T* xrow = xp + (oh * s - p + kh) * in.w;
            const int64_t shift = kw - p;
            T* orow = op + oh * os.w;
            if (s == 1) {
              for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) orow[ow] += wv * xrow[ow + shift];
            } else {
              for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) orow[ow] += wv * xrow[ow * s + shift];
            }
          }
        }
      }
    }
  });
  add_bias(out, bias);
  return out;
}

template <typename T>
Tensor<T> depthwise_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight,
                                   const ConvSpec& spec, const Shape& input_shape) {
  check_depthwise(spec);
  const Shape os = spec.output_shape(input_shape);
  if (!(grad_out.shape() == os)) {
    throw ShapeError("layer " + spec.label() + ": " +
                     shape_pair("output gradient", grad_out.shape(), os));
  }
  const int64_t k = spec.kernel, s = spec.stride, p = spec.padding;
  Tensor<T> gx(input_shape);
  parallel_for(os.n * os.c, [&](int64_t b0, int64_t b1) {
    for (int64_t nc = b0; nc < b1; ++nc) {
      const int64_t n = nc / os.c, c = nc % os.c;
      const T* gp = grad_out.plane(n, c);
      T* xp = gx.plane(n, c);
      const T* wp = weight.data().data() + c * k * k;
      for (int64_t kh = 0; kh < k; ++kh) {
        int64_t oh_lo, oh_hi;
        valid_range(kh, s, p, input_shape.h, os.h, oh_lo, oh_hi);
        for (int64_t kw = 0; kw < k; ++kw) {
          int64_t ow_lo, ow_hi;
          valid_range(kw, s, p, input_shape.w, os.w, ow_lo, ow_hi);
          const T wv = wp[kh * k + kw];
          for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
            T* xrow = xp + (oh * s - p + kh) * input_shape.w;
            const int64_t shift = kw - p;
            const T* grow = gp + oh * os.w;
            if (s == 1) {
              for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) xrow[ow + shift] += wv * grow[ow];
            } else {
              for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) xrow[ow * s + shift] += wv * grow[ow];
            }
          }
        }
      }
    }
  });
  return gx;
}

template <typename T>
Tensor<T> depthwise_backward_weight(const Tensor<T>& x, const Tensor<T>& grad_out,
                                    const ConvSpec& spec) {
  check_depthwise(spec);
  const Shape in = x.shape();
  const Shape os = spec.output_shape(in);
  if (!(grad_out.shape() == os)) {
    throw ShapeError("layer " + spec.label() + ": " +
                     shape_pair("output gradient", grad_out.shape(), os));
  }
  const int64_t k = spec.kernel, s = spec.stride, p = spec.padding;
  Tensor<T> gw(spec.weight_shape());
  parallel_for(os.c, [&](int64_t c0, int64_t c1) {
    for (int64_t c = c0; c < c1; ++c) {
      for (int64_t n = 0; n < os.n; ++n) {
        const T* gp = grad_out.plane(n, c);
        const T* xp = x.plane(n, c);
        for (int64_t kh = 0; kh < k; ++kh) {
          int64_t oh_lo, oh_hi;
          valid_range(kh, s, p, in.h, os.h, oh_lo, oh_hi);
          for (int64_t kw = 0; kw < k; ++kw) {
            int64_t ow_lo, ow_hi;
            valid_range(kw, s, p, in.w, os.w, ow_lo, ow_hi);
            if (ow_hi < ow_lo) continue;
            T acc = 0;
            for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
              const T* xrow = xp + (oh * s - p + kh) * in.w;
              const int64_t shift = kw - p;
              const T* grow = gp + oh * os.w;
              if (s == 1) {
                acc += dot8(grow + ow_lo, xrow + ow_lo + shift, ow_hi - ow_lo + 1);
              } else {
                for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) acc += grow[ow] * xrow[ow * s + shift];
              }
            }
            gw[c * k * k + kh * k + kw] += acc;
          }
        }
      }
    }
  });
  return gw;
}

template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias,
                            const ConvSpec& spec) {
  const Shape in = x.shape();
  const Shape os = spec.transposed_output_shape(in);
  if (!(weight.shape() == spec.transposed_weight_shape())) {
    throw ShapeError("layer " + spec.label() + ": input " + in.str() + ", " +
                     shape_pair("weight", weight.shape(), spec.transposed_weight_shape()));
  }
  if (bias != nullptr) {
    if (!spec.has_bias) throw ShapeError("layer " + spec.label() + ": bias given to bias-free conv");
    check_per_channel(spec.label().c_str(), "bias", bias->numel(), spec.out_channels);
  }
  const int64_t k = spec.kernel, s = spec.stride, p = spec.padding;
  Tensor<T> out(os);
  parallel_for(os.n * os.c, [&](int64_t b0, int64_t b1) {
    for (int64_t nc = b0; nc < b1; ++nc) {
      const int64_t n = nc / os.c, co = nc % os.c;
      T* op = out.plane(n, co);
      for (int64_t ci = 0; ci < in.c; ++ci) {
        const T* xp = x.plane(n, ci);
        for (int64_t kh = 0; kh < k; ++kh) {
          // input rows ih with 0 <= ih*s - p + kh < os.h
          int64_t ih_lo, ih_hi;
          valid_range(kh, s, p, os.h, in.h, ih_lo, ih_hi);
          for (int64_t kw = 0; kw < k; ++kw) {
            int64_t iw_lo, iw_hi;
            valid_range(kw, s, p, os.w, in.w, iw_lo, iw_hi);
            const T wv = weight.at(ci, co, kh, kw);
            for (int64_t ih = ih_lo; ih <= ih_hi; ++ih) {
              T* orow = op + (ih * s - p + kh) * os.w;
              const int64_t shift = kw - p;
              const T* xrow = xp + ih * in.w;
              for (int64_t iw = iw_lo; iw <= iw_hi; ++iw) orow[iw * s + shift] += wv * xrow[iw];
            }
          }
        }
      }
    }
  });
  add_bias(out, bias);
  return out;
}

ConvSpec adjoint_conv_spec(const ConvSpec& transposed) {
  ConvSpec c = transposed;
  c.in_channels = transposed.out_channels;
  c.out_channels = transposed.in_channels;
  c.groups = 1;
  c.has_bias = false;
  return c;
}

// --- pooling, activations ------------------------------------------------

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape s = x.shape();
  if (s.plane() < 1) throw ShapeError("global_avg_pool: empty spatial extent " + s.str());
  Tensor<T> out({s.n, s.c, 1, 1});
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const T* p = x.plane(n, c);
      T acc = 0;
      for (int64_t i = 0; i < s.plane(); ++i) acc += p[i];
      out.at(n, c, 0, 0) = acc / static_cast<T>(s.plane());
    }
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& input_shape) {
  if (!(grad_out.shape() == Shape{input_shape.n, input_shape.c, 1, 1})) {
    throw ShapeError("global_avg_pool backward: gradient " + grad_out.shape().str() +
                     " for input " + input_shape.str());
  }
  Tensor<T> gx(input_shape);
  const T inv = T(1) / static_cast<T>(input_shape.plane());
  for (int64_t n = 0; n < input_shape.n; ++n) {
    for (int64_t c = 0; c < input_shape.c; ++c) {
      const T v = grad_out.at(n, c, 0, 0) * inv;
      T* p = gx.plane(n, c);
      std::fill(p, p + input_shape.plane(), v);
    }
  }
  return gx;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> relu6(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = std::min(std::max(x[i], T(0)), T(6));
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    const T v = x[i];
    if (v >= 0) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  return out;
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  const Shape s = x.shape();
  Tensor<T> out(s);
  const int64_t hw = s.plane();
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t i = 0; i < hw; ++i) {
      T m = x.plane(n, 0)[i];
      for (int64_t c = 1; c < s.c; ++c) m = std::max(m, x.plane(n, c)[i]);
      T z = 0;
      for (int64_t c = 0; c < s.c; ++c) {
        const T e = std::exp(x.plane(n, c)[i] - m);
        out.plane(n, c)[i] = e;
        z += e;
      }
      for (int64_t c = 0; c < s.c; ++c) out.plane(n, c)[i] /= z;
    }
  }
  return out;
}

// --- batchnorm -----------------------------------------------------------

namespace {

template <typename T>
void check_bn(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
              const Tensor<T>& mean, const Tensor<T>& var) {
  const int64_t c = x.shape().c;
  check_per_channel("batchnorm", "gamma", gamma.numel(), c);
  check_per_channel("batchnorm", "beta", beta.numel(), c);
  check_per_channel("batchnorm", "running_mean", mean.numel(), c);
  check_per_channel("batchnorm", "running_var", var.numel(), c);
}

template <typename T>
Tensor<T> bn_apply(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                   const std::vector<T>& mean, const std::vector<T>& invstd) {
  const Shape s = x.shape();
  Tensor<T> out(s);
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const T scale = gamma[c] * invstd[static_cast<size_t>(c)];
      const T m = mean[static_cast<size_t>(c)];
      const T b = beta[c];
      const T* xp = x.plane(n, c);
      T* op = out.plane(n, c);
      for (int64_t i = 0; i < s.plane(); ++i) op[i] = (xp[i] - m) * scale + b;
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> batchnorm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          Tensor<T>& running_mean, Tensor<T>& running_var, T momentum, T eps,
                          std::type_identity_t<BatchNormSaved<T>>* saved) {
  check_bn(x, gamma, beta, running_mean, running_var);
  const Shape s = x.shape();
  const int64_t count = s.n * s.plane();
  if (count < 1) throw ShapeError("batchnorm: empty batch " + s.str());
  std::vector<T> mean(static_cast<size_t>(s.c)), invstd(static_cast<size_t>(s.c));
  for (int64_t c = 0; c < s.c; ++c) {
    T sum = 0;
    for (int64_t n = 0; n < s.n; ++n) {
      const T* p = x.plane(n, c);
      for (int64_t i = 0; i < s.plane(); ++i) sum += p[i];
    }
    const T m = sum / static_cast<T>(count);
    T sq = 0;
    for (int64_t n = 0; n < s.n; ++n) {
      const T* p = x.plane(n, c);
      for (int64_t i = 0; i < s.plane(); ++i) sq += (p[i] - m) * (p[i] - m);
    }
    const T var = sq / static_cast<T>(count);
    mean[static_cast<size_t>(c)] = m;
    invstd[static_cast<size_t>(c)] = T(1) / std::sqrt(var + eps);
    const T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var;
    running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * m;
    running_var[c] = (T(1) - momentum) * running_var[c] + momentum * unbiased;
  }
  Tensor<T> out = bn_apply(x, gamma, beta, mean, invstd);
  if (saved != nullptr) *saved = {std::move(mean), std::move(invstd)};
  return out;
}

template <typename T>
Tensor<T> batchnorm_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                         const Tensor<T>& running_mean, const Tensor<T>& running_var, T eps,
                         std::type_identity_t<BatchNormSaved<T>>* saved) {
  check_bn(x, gamma, beta, running_mean, running_var);
  const int64_t c = x.shape().c;
  std::vector<T> mean(running_mean.data().begin(), running_mean.data().end());
  std::vector<T> invstd(static_cast<size_t>(c));
  for (int64_t i = 0; i < c; ++i) invstd[static_cast<size_t>(i)] = T(1) / std::sqrt(running_var[i] + eps);
  Tensor<T> out = bn_apply(x, gamma, beta, mean, invstd);
  if (saved != nullptr) *saved = {std::move(mean), std::move(invstd)};
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                                     const Tensor<T>& gamma, const BatchNormSaved<T>& saved,
                                     bool batch_statistics) {
  const Shape s = x.shape();
  if (!(grad_out.shape() == s)) {
    throw ShapeError("batchnorm backward: " + shape_pair("gradient", grad_out.shape(), s));
  }
  BatchNormGrads<T> g{Tensor<T>(s), Tensor<T>({1, s.c, 1, 1}), Tensor<T>({1, s.c, 1, 1})};
  const T count = static_cast<T>(s.n * s.plane());
  for (int64_t c = 0; c < s.c; ++c) {
    const T m = saved.mean[static_cast<size_t>(c)];
    const T is = saved.invstd[static_cast<size_t>(c)];
    T sum_g = 0, sum_gx = 0;
    for (int64_t n = 0; n < s.n; ++n) {
      const T* gp = grad_out.plane(n, c);
      const T* xp = x.plane(n, c);
      for (int64_t i = 0; i < s.plane(); ++i) {
        sum_g += gp[i];
        sum_gx += gp[i] * (xp[i] - m) * is;
      }
    }
    g.beta[c] = sum_g;
    g.gamma[c] = sum_gx;
    const T scale = gamma[c] * is;
    for (int64_t n = 0; n < s.n; ++n) {
      const T* gp = grad_out.plane(n, c);
      const T* xp = x.plane(n, c);
      T* op = g.input.plane(n, c);
      if (batch_statistics) {
        for (int64_t i = 0; i < s.plane(); ++i) {
          const T xhat = (xp[i] - m) * is;
          op[i] = scale * (gp[i] - sum_g / count - xhat * sum_gx / count);
        }
      } else {
        for (int64_t i = 0; i < s.plane(); ++i) op[i] = scale * gp[i];
      }
    }
  }
  return g;
}

// --- elementwise ---------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y) {
  if (!(x.shape() == y.shape())) {
    throw ShapeError("add: shapes " + x.shape().str() + " and " + y.shape().str() + " differ");
  }
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] + y[i];
  return out;
}

template <typename T>
Tensor<T> broadcast_mul_channels(const Tensor<T>& x, const Tensor<T>& a) {
  const Shape s = x.shape();
  if (!(a.shape() == Shape{s.n, s.c, 1, 1})) {
    throw ShapeError("broadcast_mul_channels: scale " + a.shape().str() + " for input " + s.str());
  }
  Tensor<T> out(s);
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const T v = a.at(n, c, 0, 0);
      const T* xp = x.plane(n, c);
      T* op = out.plane(n, c);
      for (int64_t i = 0; i < s.plane(); ++i) op[i] = xp[i] * v;
    }
  }
  return out;
}

namespace {

struct Tap {
  int64_t i0;
  int64_t i1;
  double frac;
};

// Half-pixel source coordinates for an integer upscale.
std::vector<Tap> bilinear_taps(int64_t in, int64_t factor) {
  std::vector<Tap> taps(static_cast<size_t>(in * factor));
  for (int64_t o = 0; o < in * factor; ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0) src = 0;
    int64_t i0 = static_cast<int64_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const int64_t i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int64_t factor) {
  if (factor < 1) throw ShapeError("bilinear_upsample: factor must be >= 1");
  const Shape s = x.shape();
  const Shape os{s.n, s.c, s.h * factor, s.w * factor};
  Tensor<T> out(os);
  const auto ty = bilinear_taps(s.h, factor);
  const auto tx = bilinear_taps(s.w, factor);
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const T* xp = x.plane(n, c);
      T* op = out.plane(n, c);
      for (int64_t oy = 0; oy < os.h; ++oy) {
        const Tap& a = ty[static_cast<size_t>(oy)];
        const T ly = static_cast<T>(a.frac);
        for (int64_t ox = 0; ox < os.w; ++ox) {
          const Tap& b = tx[static_cast<size_t>(ox)];
          const T lx = static_cast<T>(b.frac);
          const T v00 = xp[a.i0 * s.w + b.i0], v01 = xp[a.i0 * s.w + b.i1];
          const T v10 = xp[a.i1 * s.w + b.i0], v11 = xp[a.i1 * s.w + b.i1];
          const T top = v00 + lx * (v01 - v00);
          const T bot = v10 + lx * (v11 - v10);
          op[oy * os.w + ox] = top + ly * (bot - top);
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> bilinear_upsample_backward(const Tensor<T>& grad_out, const Shape& input_shape,
                                     int64_t factor) {
  const Shape os{input_shape.n, input_shape.c, input_shape.h * factor, input_shape.w * factor};
  if (!(grad_out.shape() == os)) {
    throw ShapeError("bilinear_upsample backward: " + shape_pair("gradient", grad_out.shape(), os));
  }
  Tensor<T> gx(input_shape);
  const auto ty = bilinear_taps(input_shape.h, factor);
  const auto tx = bilinear_taps(input_shape.w, factor);
  const int64_t w = input_shape.w;
  for (int64_t n = 0; n < os.n; ++n) {
    for (int64_t c = 0; c < os.c; ++c) {
      const T* gp = grad_out.plane(n, c);
      T* xp = gx.plane(n, c);
      for (int64_t oy = 0; oy < os.h; ++oy) {
        const Tap& a = ty[static_cast<size_t>(oy)];
        const T ly = static_cast<T>(a.frac);
        for (int64_t ox = 0; ox < os.w; ++ox) {
          const Tap& b = tx[static_cast<size_t>(ox)];
          const T lx = static_cast<T>(b.frac);
          const T g = gp[oy * os.w + ox];
          const T gt = g * (T(1) - ly), gb = g * ly;
          xp[a.i0 * w + b.i0] += gt * (T(1) - lx);
          xp[a.i0 * w + b.i1] += gt * lx;
          xp[a.i1 * w + b.i0] += gb * (T(1) - lx);
          xp[a.i1 * w + b.i1] += gb * lx;
        }
      }
    }
  }
  return gx;
}

#define LWANET_INSTANTIATE_KERNELS(T)                                                           \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,              \
                            const ConvSpec&);                                                  \
  template Tensor<T> conv2d_direct(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,       \
                                   const ConvSpec&);                                           \
  template Tensor<T> conv2d_backward_input(const Tensor<T>&, const Tensor<T>&, const ConvSpec&, \
                                           const Shape&);                                      \
  template Tensor<T> conv2d_backward_weight(const Tensor<T>&, const Tensor<T>&,                \
                                            const ConvSpec&);                                  \
  template Tensor<T> channel_sum(const Tensor<T>&);                                            \
  template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,    \
                                      const ConvSpec&);                                        \
  template Tensor<T> depthwise_backward_input(const Tensor<T>&, const Tensor<T>&,              \
                                              const ConvSpec&, const Shape&);                  \
  template Tensor<T> depthwise_backward_weight(const Tensor<T>&, const Tensor<T>&,             \
                                               const ConvSpec&);                               \
  template Tensor<T> transposed_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,   \
                                       const ConvSpec&);                                       \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                        \
  template Tensor<T> global_avg_pool_backward(const Tensor<T>&, const Shape&);                 \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> relu6(const Tensor<T>&);                                                  \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                \
  template Tensor<T> softmax_channels(const Tensor<T>&);                                       \
  template Tensor<T> batchnorm_train(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                     Tensor<T>&, Tensor<T>&, T, T, BatchNormSaved<T>*);        \
  template Tensor<T> batchnorm_eval(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                    const Tensor<T>&, const Tensor<T>&, T,                     \
                                    BatchNormSaved<T>*);                                       \
  template BatchNormGrads<T> batchnorm_backward(const Tensor<T>&, const Tensor<T>&,            \
                                                const Tensor<T>&, const BatchNormSaved<T>&,    \
                                                bool);                                         \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> broadcast_mul_channels(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> bilinear_upsample(const Tensor<T>&, int64_t);                             \
  template Tensor<T> bilinear_upsample_backward(const Tensor<T>&, const Shape&, int64_t);

LWANET_INSTANTIATE_KERNELS(float)
LWANET_INSTANTIATE_KERNELS(double)

}  // namespace lwanet::kernels
