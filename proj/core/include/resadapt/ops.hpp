#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "resadapt/rng.hpp"
#include "resadapt/tensor.hpp"

namespace resadapt {

enum class Padding { Same, None };

// --- convolution ------------------------------------------------------
//
// Cross-correlation (no kernel flip), input [N,Cin,H,W], kernel
// [Cout,Cin,kH,kW], kH/kW in {1,3}, stride in {1,2}. Padding::Same pads
// with zeros so H' = ceil(H/stride); when the total padding is odd the
// extra zero goes to the bottom/right.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel,
                  int stride, Padding padding);

template <typename T>
void conv2d_backward(const TensorT<T>& upstream, const TensorT<T>& input,
                     const TensorT<T>& kernel, int stride, Padding padding,
                     TensorT<T>& grad_input, TensorT<T>& grad_kernel);

// --- batch norm -------------------------------------------------------

template <typename T>
struct BatchNormStateT {
  TensorT<T> gamma, beta;              // [C]
  TensorT<T> running_mean, running_var;  // [C]
  T epsilon = T(1e-5);
  T momentum_stats = T(0.1);

  explicit BatchNormStateT(std::int64_t channels = 0) { init(channels); }
  void init(std::int64_t channels) {
    gamma = TensorT<T>({channels});
    beta = TensorT<T>({channels});
    running_mean = TensorT<T>({channels});
    running_var = TensorT<T>({channels});
    std::fill(gamma.data.begin(), gamma.data.end(), T(1));
    std::fill(running_var.data.begin(), running_var.data.end(), T(1));
  }
  std::int64_t channels() const { return gamma.numel(); }
};

template <typename T>
struct BatchNormCache {
  TensorT<T> xhat;          // normalized input
  std::vector<T> inv_std;   // per channel
  Mode mode = Mode::Train;
};

// Train mode standardizes per channel over (N,H,W), applies gamma/beta and
// updates running stats by EMA; eval mode uses the running stats. Input is
// [N,C,H,W].
template <typename T>
TensorT<T> batchnorm(const TensorT<T>& input, BatchNormStateT<T>& state,
                     Mode mode, BatchNormCache<T>* cache = nullptr);

template <typename T>
void batchnorm_backward(const TensorT<T>& upstream,
                        const BatchNormCache<T>& cache,
                        const BatchNormStateT<T>& state, TensorT<T>& grad_input,
                        TensorT<T>& grad_gamma, TensorT<T>& grad_beta);

// --- elementwise / pooling / dense ------------------------------------

template <typename T>
TensorT<T> relu(const TensorT<T>& input);

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& upstream, const TensorT<T>& input);

// Average pooling. ceil_mode=true matches a stride-2 same-padded conv:
// output dims are ceil(H/stride) and partial windows average over the
// elements that exist.
template <typename T>
TensorT<T> avgpool2d(const TensorT<T>& input, int patch = 2, int stride = 2,
                     bool ceil_mode = false);

template <typename T>
TensorT<T> avgpool2d_backward(const TensorT<T>& upstream,
                              const TensorT<T>& input, int patch = 2,
                              int stride = 2, bool ceil_mode = false);

// input [N,Din], weights [Din,Dout], bias [Dout]
template <typename T>
TensorT<T> dense(const TensorT<T>& input, const TensorT<T>& weights,
                 const TensorT<T>& bias);

template <typename T>
void dense_backward(const TensorT<T>& upstream, const TensorT<T>& input,
                    const TensorT<T>& weights, TensorT<T>& grad_input,
                    TensorT<T>& grad_weights, TensorT<T>& grad_bias);

// --- softmax cross entropy --------------------------------------------

template <typename T>
TensorT<T> softmax(const TensorT<T>& logits);  // rows of [N,C]

// Mean cross-entropy over the batch plus d(loss)/d(logits).
template <typename T>
std::pair<T, TensorT<T>> softmax_xent(const TensorT<T>& logits,
                                      const std::vector<std::int64_t>& labels);

// --- attention pooling -------------------------------------------------

template <typename T>
struct AttentionParamsT {
  TensorT<T> w;  // [C,C] score map
  TensorT<T> b;  // [C]
  TensorT<T> v;  // [C] projection to scalar
  explicit AttentionParamsT(std::int64_t channels = 0) {
    w = TensorT<T>({channels, channels});
    b = TensorT<T>({channels});
    v = TensorT<T>({channels});
  }
  std::int64_t channels() const { return b.numel(); }
};

template <typename T>
struct AttentionCache {
  TensorT<T> weights;  // [N,H,W] softmax weights, zero at padded frames
  TensorT<T> scores;   // [N,H,W] pre-softmax tanh projections
  TensorT<T> hidden;   // [N,C,H,W] tanh(W f + b)
};

// Per sample: score each valid (h,w) location by v . tanh(W f + b) of its
// C-dim feature vector, softmax over valid locations (w < lengths[n]),
// return the weighted sum of feature vectors. Padded frames get exactly
// zero weight.
template <typename T>
TensorT<T> attention_pool(const TensorT<T>& features,
                          const std::vector<std::int64_t>& lengths,
                          const AttentionParamsT<T>& params,
                          AttentionCache<T>* cache = nullptr);

template <typename T>
void attention_pool_backward(const TensorT<T>& upstream,
                             const TensorT<T>& features,
                             const std::vector<std::int64_t>& lengths,
                             const AttentionParamsT<T>& params,
                             const AttentionCache<T>& cache,
                             TensorT<T>& grad_features,
                             AttentionParamsT<T>& grad_params);

// --- dropout ------------------------------------------------------------

// Inverted dropout; mask entries are 0 or 1/(1-rate). Only called in train
// mode. rate=0 returns the input with an all-ones mask.
template <typename T>
TensorT<T> dropout(const TensorT<T>& input, double rate, Rng& rng,
                   TensorT<T>* mask_out);

// --- optimizer ----------------------------------------------------------

// v <- momentum * v - lr * (g + weight_decay * p); p <- p + v.
// Throws NumericError on non-finite gradients.
template <typename T>
void sgd_momentum_step(TensorT<T>& params, const TensorT<T>& grads,
                       TensorT<T>& velocity, T lr, T momentum = T(0.9),
                       T weight_decay = T(0));

// Raw-buffer form for optimizer loops over a parameter index.
template <typename T>
void sgd_momentum_step(std::vector<T>& params, const std::vector<T>& grads,
                       std::vector<T>& velocity, T lr, T momentum = T(0.9),
                       T weight_decay = T(0));

// --- init ---------------------------------------------------------------

// He fan-in normal init: stddev sqrt(2 / fan_in).
template <typename T>
void he_init(TensorT<T>& t, std::int64_t fan_in, Rng& rng);

}  // namespace resadapt
