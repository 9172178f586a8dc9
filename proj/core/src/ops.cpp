#include "resadapt/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

namespace resadapt {

std::uint64_t fnv1a64(const void* data, std::size_t n_bytes,
                      std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n_bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

namespace {
#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif
}  // namespace

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

template <typename T>
void check_finite(const TensorT<T>& t, const char* what) {
  if (!g_finite_checks) return;
  for (const T v : t.data) {
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value in ") + what);
  }
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: hi < lo");
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(next_u64());  // full range
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return lo + static_cast<std::int64_t>(x % span);
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0,1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

namespace {

// C[M,N] += A[M,K] * B[K,N], all row-major.
template <typename T>
void gemm_nn(std::int64_t M, std::int64_t N, std::int64_t K,
             const T* __restrict a, const T* __restrict b, T* __restrict c) {
  for (std::int64_t m = 0; m < M; ++m) {
    T* crow = c + m * N;
    for (std::int64_t k = 0; k < K; ++k) {
      const T amk = a[m * K + k];
      if (amk == T(0)) continue;
      const T* brow = b + k * N;
      for (std::int64_t n = 0; n < N; ++n) crow[n] += amk * brow[n];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(std::int64_t M, std::int64_t N, std::int64_t K,
             const T* __restrict a, const T* __restrict b, T* __restrict c) {
  for (std::int64_t m = 0; m < M; ++m) {
    const T* arow = a + m * K;
    for (std::int64_t n = 0; n < N; ++n) {
      const T* brow = b + n * K;
      T acc = T(0);
      for (std::int64_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
      c[m * N + n] += acc;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(std::int64_t M, std::int64_t N, std::int64_t K,
             const T* __restrict a, const T* __restrict b, T* __restrict c) {
  for (std::int64_t k = 0; k < K; ++k) {
    const T* brow = b + k * N;
    for (std::int64_t m = 0; m < M; ++m) {
      const T akm = a[k * M + m];
      if (akm == T(0)) continue;
      T* crow = c + m * N;
      for (std::int64_t n = 0; n < N; ++n) crow[n] += akm * brow[n];
    }
  }
}

struct ConvGeometry {
  std::int64_t out_h = 0, out_w = 0;
  std::int64_t pad_top = 0, pad_left = 0;
};

ConvGeometry conv_geometry(std::int64_t h, std::int64_t w, std::int64_t kh,
                           std::int64_t kw, int stride, Padding padding) {
  ConvGeometry g;
  if (padding == Padding::Same) {
    g.out_h = (h + stride - 1) / stride;
    g.out_w = (w + stride - 1) / stride;
    const std::int64_t pad_h =
        std::max<std::int64_t>(0, (g.out_h - 1) * stride + kh - h);
    const std::int64_t pad_w =
        std::max<std::int64_t>(0, (g.out_w - 1) * stride + kw - w);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  } else {
    if (h < kh || w < kw)
      throw std::invalid_argument("conv2d: spatial dims smaller than kernel");
    g.out_h = (h - kh) / stride + 1;
    g.out_w = (w - kw) / stride + 1;
  }
  return g;
}

void validate_conv_args(const std::vector<std::int64_t>& in_shape,
                        const std::vector<std::int64_t>& k_shape, int stride) {
  if (in_shape.size() != 4)
    throw std::invalid_argument("conv2d: input must be [N,C,H,W], got " +
                                shape_str(in_shape));
  if (k_shape.size() != 4)
    throw std::invalid_argument("conv2d: kernel must be [Cout,Cin,kH,kW]");
  if (in_shape[1] != k_shape[1])
    throw std::invalid_argument(
        "conv2d: channel mismatch, input has " + std::to_string(in_shape[1]) +
        " kernel expects " + std::to_string(k_shape[1]));
  if (in_shape[2] <= 0 || in_shape[3] <= 0)
    throw std::invalid_argument("conv2d: empty spatial dims");
  const auto kh = k_shape[2], kw = k_shape[3];
  if ((kh != 1 && kh != 3) || (kw != 1 && kw != 3))
    throw std::invalid_argument("conv2d: kernel size must be 1 or 3");
  if (stride != 1 && stride != 2)
    throw std::invalid_argument("conv2d: stride must be 1 or 2");
}

// col[(c*kH+i)*kW+j, oh*OW+ow] = x[c, oh*s - pad_top + i, ow*s - pad_left + j]
template <typename T>
void im2col(const T* x, std::int64_t c_in, std::int64_t h, std::int64_t w,
            std::int64_t kh, std::int64_t kw, int stride,
            const ConvGeometry& g, T* col) {
  const std::int64_t ow_n = g.out_w, oh_n = g.out_h;
  for (std::int64_t c = 0; c < c_in; ++c) {
    for (std::int64_t i = 0; i < kh; ++i) {
      for (std::int64_t j = 0; j < kw; ++j) {
        T* dst = col + ((c * kh + i) * kw + j) * (oh_n * ow_n);
        for (std::int64_t oh = 0; oh < oh_n; ++oh) {
          const std::int64_t ih = oh * stride - g.pad_top + i;
          if (ih < 0 || ih >= h) {
            std::fill(dst + oh * ow_n, dst + (oh + 1) * ow_n, T(0));
            continue;
          }
          const T* src = x + (c * h + ih) * w;
          for (std::int64_t ow = 0; ow < ow_n; ++ow) {
            const std::int64_t iw = ow * stride - g.pad_left + j;
            dst[oh * ow_n + ow] = (iw >= 0 && iw < w) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add of the im2col layout back into an input-shaped gradient.
template <typename T>
void col2im_add(const T* col, std::int64_t c_in, std::int64_t h,
                std::int64_t w, std::int64_t kh, std::int64_t kw, int stride,
                const ConvGeometry& g, T* gx) {
  const std::int64_t ow_n = g.out_w, oh_n = g.out_h;
  for (std::int64_t c = 0; c < c_in; ++c) {
    for (std::int64_t i = 0; i < kh; ++i) {
      for (std::int64_t j = 0; j < kw; ++j) {
        const T* src = col + ((c * kh + i) * kw + j) * (oh_n * ow_n);
        for (std::int64_t oh = 0; oh < oh_n; ++oh) {
          const std::int64_t ih = oh * stride - g.pad_top + i;
          if (ih < 0 || ih >= h) continue;
          T* dst = gx + (c * h + ih) * w;
          for (std::int64_t ow = 0; ow < ow_n; ++ow) {
            const std::int64_t iw = ow * stride - g.pad_left + j;
            if (iw >= 0 && iw < w) dst[iw] += src[oh * ow_n + ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel,
                  int stride, Padding padding) {
  validate_conv_args(input.shape, kernel.shape, stride);
  const std::int64_t n = input.shape[0], c_in = input.shape[1],
                     h = input.shape[2], w = input.shape[3];
  const std::int64_t c_out = kernel.shape[0], kh = kernel.shape[2],
                     kw = kernel.shape[3];
  const ConvGeometry g = conv_geometry(h, w, kh, kw, stride, padding);
  const std::int64_t k_dim = c_in * kh * kw;
  const std::int64_t out_hw = g.out_h * g.out_w;

  TensorT<T> out({n, c_out, g.out_h, g.out_w});
  std::vector<T> col(static_cast<std::size_t>(k_dim * out_hw));
  for (std::int64_t s = 0; s < n; ++s) {
    im2col(input.data.data() + s * c_in * h * w, c_in, h, w, kh, kw, stride, g,
           col.data());
    gemm_nn(c_out, out_hw, k_dim, kernel.data.data(), col.data(),
            out.data.data() + s * c_out * out_hw);
  }
  check_finite(out, "conv2d");
  return out;
}

template <typename T>
void conv2d_backward(const TensorT<T>& upstream, const TensorT<T>& input,
                     const TensorT<T>& kernel, int stride, Padding padding,
                     TensorT<T>& grad_input, TensorT<T>& grad_kernel) {
  validate_conv_args(input.shape, kernel.shape, stride);
  const std::int64_t n = input.shape[0], c_in = input.shape[1],
                     h = input.shape[2], w = input.shape[3];
  const std::int64_t c_out = kernel.shape[0], kh = kernel.shape[2],
                     kw = kernel.shape[3];
  const ConvGeometry g = conv_geometry(h, w, kh, kw, stride, padding);
  const std::int64_t k_dim = c_in * kh * kw;
  const std::int64_t out_hw = g.out_h * g.out_w;
  const std::vector<std::int64_t> expect{n, c_out, g.out_h, g.out_w};
  if (upstream.shape != expect)
    throw std::invalid_argument("conv2d_backward: upstream shape " +
                                shape_str(upstream.shape) + " expected " +
                                shape_str(expect));

  grad_input = TensorT<T>(input.shape);
  grad_kernel = TensorT<T>(kernel.shape);
  std::vector<T> col(static_cast<std::size_t>(k_dim * out_hw));
  std::vector<T> col_grad(static_cast<std::size_t>(k_dim * out_hw));
  for (std::int64_t s = 0; s < n; ++s) {
    const T* up = upstream.data.data() + s * c_out * out_hw;
    im2col(input.data.data() + s * c_in * h * w, c_in, h, w, kh, kw, stride, g,
           col.data());
    // dK[Cout, K] += up[Cout, OHW] . col[K, OHW]^T
    gemm_nt(c_out, k_dim, out_hw, up, col.data(), grad_kernel.data.data());
    // dcol[K, OHW] = kernel[Cout, K]^T . up[Cout, OHW]
    std::fill(col_grad.begin(), col_grad.end(), T(0));
    gemm_tn(k_dim, out_hw, c_out, kernel.data.data(), up, col_grad.data());
    col2im_add(col_grad.data(), c_in, h, w, kh, kw, stride, g,
               grad_input.data.data() + s * c_in * h * w);
  }
}

template <typename T>
TensorT<T> batchnorm(const TensorT<T>& input, BatchNormStateT<T>& state,
                     Mode mode, BatchNormCache<T>* cache) {
  if (input.rank() != 4)
    throw std::invalid_argument("batchnorm: input must be [N,C,H,W]");
  const std::int64_t n = input.shape[0], c_n = input.shape[1],
                     h = input.shape[2], w = input.shape[3];
  if (c_n != state.channels())
    throw std::invalid_argument("batchnorm: channel mismatch");
  const std::int64_t m = n * h * w;
  if (m == 0) throw std::invalid_argument("batchnorm: zero-size batch");
  if (mode == Mode::Train && m < 2)
    throw std::invalid_argument(
        "batchnorm: train mode needs N*H*W >= 2 per channel");

  TensorT<T> out(input.shape);
  TensorT<T> xhat(input.shape);
  std::vector<T> inv_std(static_cast<std::size_t>(c_n));
  const std::int64_t hw = h * w;

  for (std::int64_t c = 0; c < c_n; ++c) {
    T mean, var;
    if (mode == Mode::Train) {
      double sum = 0;
      for (std::int64_t s = 0; s < n; ++s) {
        const T* x = input.data.data() + (s * c_n + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) sum += x[i];
      }
      mean = static_cast<T>(sum / static_cast<double>(m));
      double sq = 0;
      for (std::int64_t s = 0; s < n; ++s) {
        const T* x = input.data.data() + (s * c_n + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const double d = static_cast<double>(x[i]) - mean;
          sq += d * d;
        }
      }
      var = static_cast<T>(sq / static_cast<double>(m));
      const T mom = state.momentum_stats;
      state.running_mean.data[c] =
          (T(1) - mom) * state.running_mean.data[c] + mom * mean;
      state.running_var.data[c] =
          (T(1) - mom) * state.running_var.data[c] + mom * var;
    } else {
      mean = state.running_mean.data[c];
      var = state.running_var.data[c];
    }
    const T is = T(1) / std::sqrt(var + state.epsilon);
    inv_std[static_cast<std::size_t>(c)] = is;
    const T gamma = state.gamma.data[c], beta = state.beta.data[c];
    for (std::int64_t s = 0; s < n; ++s) {
      const T* x = input.data.data() + (s * c_n + c) * hw;
      T* xh = xhat.data.data() + (s * c_n + c) * hw;
      T* y = out.data.data() + (s * c_n + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        xh[i] = (x[i] - mean) * is;
        y[i] = gamma * xh[i] + beta;
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  check_finite(out, "batchnorm");
  return out;
}

template <typename T>
void batchnorm_backward(const TensorT<T>& upstream,
                        const BatchNormCache<T>& cache,
                        const BatchNormStateT<T>& state, TensorT<T>& grad_input,
                        TensorT<T>& grad_gamma, TensorT<T>& grad_beta) {
  const std::int64_t n = upstream.shape[0], c_n = upstream.shape[1],
                     h = upstream.shape[2], w = upstream.shape[3];
  const std::int64_t m = n * h * w, hw = h * w;
  grad_input = TensorT<T>(upstream.shape);
  grad_gamma = TensorT<T>({c_n});
  grad_beta = TensorT<T>({c_n});

  for (std::int64_t c = 0; c < c_n; ++c) {
    double sum_up = 0, sum_up_xhat = 0;
    for (std::int64_t s = 0; s < n; ++s) {
      const T* up = upstream.data.data() + (s * c_n + c) * hw;
      const T* xh = cache.xhat.data.data() + (s * c_n + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        sum_up += up[i];
        sum_up_xhat += static_cast<double>(up[i]) * xh[i];
      }
    }
    grad_beta.data[c] = static_cast<T>(sum_up);
    grad_gamma.data[c] = static_cast<T>(sum_up_xhat);
    const T gamma = state.gamma.data[c];
    const T is = cache.inv_std[static_cast<std::size_t>(c)];
    if (cache.mode == Mode::Train) {
      const T scale = gamma * is / static_cast<T>(m);
      for (std::int64_t s = 0; s < n; ++s) {
        const T* up = upstream.data.data() + (s * c_n + c) * hw;
        const T* xh = cache.xhat.data.data() + (s * c_n + c) * hw;
        T* gx = grad_input.data.data() + (s * c_n + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          gx[i] = scale * (static_cast<T>(m) * up[i] - static_cast<T>(sum_up) -
                           xh[i] * static_cast<T>(sum_up_xhat));
        }
      }
    } else {
      const T scale = gamma * is;
      for (std::int64_t s = 0; s < n; ++s) {
        const T* up = upstream.data.data() + (s * c_n + c) * hw;
        T* gx = grad_input.data.data() + (s * c_n + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) gx[i] = scale * up[i];
      }
    }
  }
}

template <typename T>
TensorT<T> relu(const TensorT<T>& input) {
  TensorT<T> out(input.shape);
  for (std::size_t i = 0; i < input.data.size(); ++i)
    out.data[i] = input.data[i] > T(0) ? input.data[i] : T(0);
  return out;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& upstream, const TensorT<T>& input) {
  TensorT<T> gx(input.shape);
  for (std::size_t i = 0; i < input.data.size(); ++i)
    gx.data[i] = input.data[i] > T(0) ? upstream.data[i] : T(0);
  return gx;
}

namespace {
std::int64_t pool_out_dim(std::int64_t in, int patch, int stride,
                          bool ceil_mode) {
  if (ceil_mode) return (in + stride - 1) / stride;
  if (in < patch)
    throw std::invalid_argument("avgpool2d: input smaller than patch");
  return (in - patch) / stride + 1;
}
}  // namespace

template <typename T>
TensorT<T> avgpool2d(const TensorT<T>& input, int patch, int stride,
                     bool ceil_mode) {
  if (input.rank() != 4)
    throw std::invalid_argument("avgpool2d: input must be [N,C,H,W]");
  const std::int64_t n = input.shape[0], c_n = input.shape[1],
                     h = input.shape[2], w = input.shape[3];
  const std::int64_t oh_n = pool_out_dim(h, patch, stride, ceil_mode);
  const std::int64_t ow_n = pool_out_dim(w, patch, stride, ceil_mode);
  TensorT<T> out({n, c_n, oh_n, ow_n});
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t c = 0; c < c_n; ++c)
      for (std::int64_t oh = 0; oh < oh_n; ++oh)
        for (std::int64_t ow = 0; ow < ow_n; ++ow) {
          const std::int64_t h0 = oh * stride, w0 = ow * stride;
          const std::int64_t h1 = std::min<std::int64_t>(h0 + patch, h);
          const std::int64_t w1 = std::min<std::int64_t>(w0 + patch, w);
          T acc = T(0);
          for (std::int64_t i = h0; i < h1; ++i)
            for (std::int64_t j = w0; j < w1; ++j) acc += input.at4(s, c, i, j);
          out.at4(s, c, oh, ow) =
              acc / static_cast<T>((h1 - h0) * (w1 - w0));
        }
  return out;
}

template <typename T>
TensorT<T> avgpool2d_backward(const TensorT<T>& upstream,
                              const TensorT<T>& input, int patch, int stride,
                              bool ceil_mode) {
  const std::int64_t n = input.shape[0], c_n = input.shape[1],
                     h = input.shape[2], w = input.shape[3];
  TensorT<T> gx(input.shape);
  const std::int64_t oh_n = upstream.shape[2], ow_n = upstream.shape[3];
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t c = 0; c < c_n; ++c)
      for (std::int64_t oh = 0; oh < oh_n; ++oh)
        for (std::int64_t ow = 0; ow < ow_n; ++ow) {
          const std::int64_t h0 = oh * stride, w0 = ow * stride;
          const std::int64_t h1 = std::min<std::int64_t>(h0 + patch, h);
          const std::int64_t w1 = std::min<std::int64_t>(w0 + patch, w);
          const T share = upstream.at4(s, c, oh, ow) /
                          static_cast<T>((h1 - h0) * (w1 - w0));
          for (std::int64_t i = h0; i < h1; ++i)
            for (std::int64_t j = w0; j < w1; ++j) gx.at4(s, c, i, j) += share;
        }
  (void)ceil_mode;
  return gx;
}

template <typename T>
TensorT<T> dense(const TensorT<T>& input, const TensorT<T>& weights,
                 const TensorT<T>& bias) {
  if (input.rank() != 2 || weights.rank() != 2)
    throw std::invalid_argument("dense: input and weights must be 2-d");
  const std::int64_t n = input.shape[0], d_in = input.shape[1];
  const std::int64_t d_out = weights.shape[1];
  if (weights.shape[0] != d_in)
    throw std::invalid_argument("dense: weight rows " +
                                std::to_string(weights.shape[0]) +
                                " != input width " + std::to_string(d_in));
  if (bias.numel() != d_out)
    throw std::invalid_argument("dense: bias size mismatch");
  TensorT<T> out({n, d_out});
  for (std::int64_t i = 0; i < n; ++i)
    std::copy(bias.data.begin(), bias.data.end(),
              out.data.begin() + i * d_out);
  gemm_nn(n, d_out, d_in, input.data.data(), weights.data.data(),
          out.data.data());
  check_finite(out, "dense");
  return out;
}

template <typename T>
void dense_backward(const TensorT<T>& upstream, const TensorT<T>& input,
                    const TensorT<T>& weights, TensorT<T>& grad_input,
                    TensorT<T>& grad_weights, TensorT<T>& grad_bias) {
  const std::int64_t n = input.shape[0], d_in = input.shape[1],
                     d_out = weights.shape[1];
  grad_input = TensorT<T>(input.shape);
  grad_weights = TensorT<T>(weights.shape);
  grad_bias = TensorT<T>({d_out});
  // dX = up . W^T
  gemm_nt(n, d_in, d_out, upstream.data.data(), weights.data.data(),
          grad_input.data.data());
  // dW = X^T . up
  gemm_tn(d_in, d_out, n, input.data.data(), upstream.data.data(),
          grad_weights.data.data());
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t o = 0; o < d_out; ++o)
      grad_bias.data[o] += upstream.at2(i, o);
}

template <typename T>
TensorT<T> softmax(const TensorT<T>& logits) {
  if (logits.rank() != 2)
    throw std::invalid_argument("softmax: logits must be [N,C]");
  const std::int64_t n = logits.shape[0], c_n = logits.shape[1];
  TensorT<T> probs(logits.shape);
  for (std::int64_t i = 0; i < n; ++i) {
    T mx = logits.at2(i, 0);
    for (std::int64_t c = 1; c < c_n; ++c) mx = std::max(mx, logits.at2(i, c));
    T denom = T(0);
    for (std::int64_t c = 0; c < c_n; ++c) {
      const T e = std::exp(logits.at2(i, c) - mx);
      probs.at2(i, c) = e;
      denom += e;
    }
    for (std::int64_t c = 0; c < c_n; ++c) probs.at2(i, c) /= denom;
  }
  return probs;
}

template <typename T>
std::pair<T, TensorT<T>> softmax_xent(const TensorT<T>& logits,
                                      const std::vector<std::int64_t>& labels) {
  const std::int64_t n = logits.shape[0], c_n = logits.shape[1];
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw std::invalid_argument("softmax_xent: labels size mismatch");
  for (const auto y : labels)
    if (y < 0 || y >= c_n)
      throw std::invalid_argument("softmax_xent: label out of range");
  TensorT<T> probs = softmax(logits);
  double loss = 0;
  TensorT<T> grad(logits.shape);
  for (std::int64_t i = 0; i < n; ++i) {
    const T p = probs.at2(i, labels[static_cast<std::size_t>(i)]);
    loss -= std::log(std::max(static_cast<double>(p), 1e-300));
    for (std::int64_t c = 0; c < c_n; ++c)
      grad.at2(i, c) = probs.at2(i, c) / static_cast<T>(n);
    grad.at2(i, labels[static_cast<std::size_t>(i)]) -=
        T(1) / static_cast<T>(n);
  }
  const T mean_loss = static_cast<T>(loss / static_cast<double>(n));
  if (g_finite_checks && !std::isfinite(mean_loss))
    throw NumericError("non-finite value in softmax_xent");
  return {mean_loss, std::move(grad)};
}

template <typename T>
TensorT<T> attention_pool(const TensorT<T>& features,
                          const std::vector<std::int64_t>& lengths,
                          const AttentionParamsT<T>& params,
                          AttentionCache<T>* cache) {
  if (features.rank() != 4)
    throw std::invalid_argument("attention_pool: features must be [N,C,H,W]");
  const std::int64_t n = features.shape[0], c_n = features.shape[1],
                     h = features.shape[2], w = features.shape[3];
  if (static_cast<std::int64_t>(lengths.size()) != n)
    throw std::invalid_argument("attention_pool: lengths size mismatch");
  if (params.channels() != c_n)
    throw std::invalid_argument("attention_pool: params expect " +
                                std::to_string(params.channels()) +
                                " channels, features have " +
                                std::to_string(c_n));
  for (const auto len : lengths) {
    if (len <= 0)
      throw std::invalid_argument("attention_pool: zero-length sample");
    if (len > w)
      throw std::invalid_argument("attention_pool: length exceeds width");
  }

  TensorT<T> hidden({n, c_n, h, w});
  TensorT<T> scores({n, h, w});
  TensorT<T> weights({n, h, w});
  TensorT<T> out({n, c_n});
  const std::int64_t hw = h * w;
  std::vector<T> f(static_cast<std::size_t>(c_n));
  for (std::int64_t s = 0; s < n; ++s) {
    const std::int64_t valid_w = lengths[static_cast<std::size_t>(s)];
    // scores at valid locations
    for (std::int64_t i = 0; i < h; ++i) {
      for (std::int64_t j = 0; j < valid_w; ++j) {
        for (std::int64_t c = 0; c < c_n; ++c) f[c] = features.at4(s, c, i, j);
        T score = T(0);
        for (std::int64_t c = 0; c < c_n; ++c) {
          T pre = params.b.data[c];
          const T* wrow = params.w.data.data() + c * c_n;
          for (std::int64_t c2 = 0; c2 < c_n; ++c2) pre += wrow[c2] * f[c2];
          const T hd = std::tanh(pre);
          hidden.at4(s, c, i, j) = hd;
          score += params.v.data[c] * hd;
        }
        scores.data[(s * h + i) * w + j] = score;
      }
    }
    // softmax over valid locations only
    T mx = -std::numeric_limits<T>::infinity();
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < valid_w; ++j)
        mx = std::max(mx, scores.data[(s * h + i) * w + j]);
    T denom = T(0);
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < valid_w; ++j) {
        const T e = std::exp(scores.data[(s * h + i) * w + j] - mx);
        weights.data[(s * h + i) * w + j] = e;
        denom += e;
      }
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < valid_w; ++j)
        weights.data[(s * h + i) * w + j] /= denom;
    // weighted sum of feature vectors
    for (std::int64_t c = 0; c < c_n; ++c) {
      T acc = T(0);
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < valid_w; ++j)
          acc += weights.data[(s * h + i) * w + j] * features.at4(s, c, i, j);
      out.at2(s, c) = acc;
    }
    (void)hw;
  }
  if (cache) {
    cache->weights = std::move(weights);
    cache->scores = std::move(scores);
    cache->hidden = std::move(hidden);
  }
  check_finite(out, "attention_pool");
  return out;
}

template <typename T>
void attention_pool_backward(const TensorT<T>& upstream,
                             const TensorT<T>& features,
                             const std::vector<std::int64_t>& lengths,
                             const AttentionParamsT<T>& params,
                             const AttentionCache<T>& cache,
                             TensorT<T>& grad_features,
                             AttentionParamsT<T>& grad_params) {
  const std::int64_t n = features.shape[0], c_n = features.shape[1],
                     h = features.shape[2], w = features.shape[3];
  grad_features = TensorT<T>(features.shape);
  grad_params = AttentionParamsT<T>(c_n);
  std::vector<T> f(static_cast<std::size_t>(c_n));
  std::vector<T> dpre(static_cast<std::size_t>(c_n));
  for (std::int64_t s = 0; s < n; ++s) {
    const std::int64_t valid_w = lengths[static_cast<std::size_t>(s)];
    // d(weights) from the weighted sum, then softmax backward to d(scores)
    double dot = 0;  // sum_loc alpha * dalpha
    std::vector<T> dalpha(static_cast<std::size_t>(h * valid_w));
    std::size_t idx = 0;
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < valid_w; ++j, ++idx) {
        T da = T(0);
        for (std::int64_t c = 0; c < c_n; ++c)
          da += upstream.at2(s, c) * features.at4(s, c, i, j);
        dalpha[idx] = da;
        dot += static_cast<double>(cache.weights.data[(s * h + i) * w + j]) *
               da;
      }
    idx = 0;
    for (std::int64_t i = 0; i < h; ++i) {
      for (std::int64_t j = 0; j < valid_w; ++j, ++idx) {
        const T alpha = cache.weights.data[(s * h + i) * w + j];
        const T ds = alpha * (dalpha[idx] - static_cast<T>(dot));
        // direct contribution of the weighted sum to features
        for (std::int64_t c = 0; c < c_n; ++c)
          grad_features.at4(s, c, i, j) += alpha * upstream.at2(s, c);
        if (ds == T(0)) continue;
        // score = v . tanh(W f + b)
        for (std::int64_t c = 0; c < c_n; ++c) f[c] = features.at4(s, c, i, j);
        for (std::int64_t c = 0; c < c_n; ++c) {
          const T hd = cache.hidden.at4(s, c, i, j);
          grad_params.v.data[c] += ds * hd;
          dpre[c] = ds * params.v.data[c] * (T(1) - hd * hd);
          grad_params.b.data[c] += dpre[c];
        }
        for (std::int64_t c = 0; c < c_n; ++c) {
          T* gw = grad_params.w.data.data() + c * c_n;
          const T d = dpre[c];
          if (d == T(0)) continue;
          for (std::int64_t c2 = 0; c2 < c_n; ++c2) gw[c2] += d * f[c2];
        }
        for (std::int64_t c2 = 0; c2 < c_n; ++c2) {
          T acc = T(0);
          for (std::int64_t c = 0; c < c_n; ++c)
            acc += dpre[c] * params.w.data[c * c_n + c2];
          grad_features.at4(s, c2, i, j) += acc;
        }
      }
    }
  }
}

template <typename T>
TensorT<T> dropout(const TensorT<T>& input, double rate, Rng& rng,
                   TensorT<T>* mask_out) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0,1)");
  TensorT<T> out(input.shape);
  TensorT<T> mask(input.shape);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < input.data.size(); ++i) {
    const bool keep = rng.uniform() >= rate;
    mask.data[i] = keep ? keep_scale : T(0);
    out.data[i] = input.data[i] * mask.data[i];
  }
  if (mask_out) *mask_out = std::move(mask);
  return out;
}

template <typename T>
void sgd_momentum_step(std::vector<T>& params, const std::vector<T>& grads,
                       std::vector<T>& velocity, T lr, T momentum,
                       T weight_decay) {
  if (params.size() != grads.size() || params.size() != velocity.size())
    throw std::invalid_argument("sgd_momentum_step: size mismatch");
  if (lr <= T(0)) throw std::invalid_argument("sgd_momentum_step: lr <= 0");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i] + weight_decay * params[i];
    if (!std::isfinite(g))
      throw NumericError("non-finite gradient in sgd_momentum_step");
    velocity[i] = momentum * velocity[i] - lr * g;
    params[i] += velocity[i];
  }
}

template <typename T>
void sgd_momentum_step(TensorT<T>& params, const TensorT<T>& grads,
                       TensorT<T>& velocity, T lr, T momentum,
                       T weight_decay) {
  if (!same_shape(params, grads) || !same_shape(params, velocity))
    throw std::invalid_argument("sgd_momentum_step: shape mismatch");
  sgd_momentum_step(params.data, grads.data, velocity.data, lr, momentum,
                    weight_decay);
}

template <typename T>
void he_init(TensorT<T>& t, std::int64_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, stddev));
}

// --- explicit instantiations -------------------------------------------

#define RESADAPT_INSTANTIATE_OPS(T)                                          \
  template void check_finite<T>(const TensorT<T>&, const char*);             \
  template TensorT<T> conv2d<T>(const TensorT<T>&, const TensorT<T>&, int,   \
                                Padding);                                    \
  template void conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&,     \
                                   const TensorT<T>&, int, Padding,          \
                                   TensorT<T>&, TensorT<T>&);                \
  template TensorT<T> batchnorm<T>(const TensorT<T>&, BatchNormStateT<T>&,   \
                                   Mode, BatchNormCache<T>*);                \
  template void batchnorm_backward<T>(                                       \
      const TensorT<T>&, const BatchNormCache<T>&, const BatchNormStateT<T>&,\
      TensorT<T>&, TensorT<T>&, TensorT<T>&);                                \
  template TensorT<T> relu<T>(const TensorT<T>&);                            \
  template TensorT<T> relu_backward<T>(const TensorT<T>&, const TensorT<T>&);\
  template TensorT<T> avgpool2d<T>(const TensorT<T>&, int, int, bool);       \
  template TensorT<T> avgpool2d_backward<T>(const TensorT<T>&,               \
                                            const TensorT<T>&, int, int,     \
                                            bool);                           \
  template TensorT<T> dense<T>(const TensorT<T>&, const TensorT<T>&,         \
                               const TensorT<T>&);                           \
  template void dense_backward<T>(const TensorT<T>&, const TensorT<T>&,      \
                                  const TensorT<T>&, TensorT<T>&,            \
                                  TensorT<T>&, TensorT<T>&);                 \
  template TensorT<T> softmax<T>(const TensorT<T>&);                         \
  template std::pair<T, TensorT<T>> softmax_xent<T>(                         \
      const TensorT<T>&, const std::vector<std::int64_t>&);                  \
  template TensorT<T> attention_pool<T>(const TensorT<T>&,                   \
                                        const std::vector<std::int64_t>&,    \
                                        const AttentionParamsT<T>&,          \
                                        AttentionCache<T>*);                 \
  template void attention_pool_backward<T>(                                  \
      const TensorT<T>&, const TensorT<T>&, const std::vector<std::int64_t>&,\
      const AttentionParamsT<T>&, const AttentionCache<T>&, TensorT<T>&,     \
      AttentionParamsT<T>&);                                                 \
  template TensorT<T> dropout<T>(const TensorT<T>&, double, Rng&,            \
                                 TensorT<T>*);                               \
  template void sgd_momentum_step<T>(TensorT<T>&, const TensorT<T>&,         \
                                     TensorT<T>&, T, T, T);                  \
  template void sgd_momentum_step<T>(std::vector<T>&, const std::vector<T>&, \
                                     std::vector<T>&, T, T, T);              \
  template void he_init<T>(TensorT<T>&, std::int64_t, Rng&);

RESADAPT_INSTANTIATE_OPS(float)
RESADAPT_INSTANTIATE_OPS(double)

#undef RESADAPT_INSTANTIATE_OPS

}  // namespace resadapt
