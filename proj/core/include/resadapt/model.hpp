#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "resadapt/ops.hpp"
#include "resadapt/rng.hpp"
#include "resadapt/tensor.hpp"

namespace resadapt {

// Widths and head settings for the backbone. The default instantiation is
// the full-size network; tests use a narrow variant (initial_filters 8,
// stacks {8,16,32}) with the same topology.
struct ArchitectureSpec {
  std::vector<int> stack_filters{64, 128, 256};
  int blocks_per_stack = 2;
  int initial_filters = 32;
  bool attention_shared = false;
  int head_hidden_width = 64;
  double head_dropout_rate = 0.5;

  bool operator==(const ArchitectureSpec&) const = default;
};

ArchitectureSpec tiny_architecture();  // 8/16/32 variant for desk-scale runs

// One slot per convolution in forward order: the initial conv plus two per
// residual block. Every slot carries a parallel per-domain 1x1 adapter and
// is followed by a per-domain BN.
struct ConvSlot {
  int in_ch = 0;
  int out_ch = 0;
  int stride = 1;
  bool relu_after_bn = false;  // false for the initial conv and for the
                               // second conv of a block (relu after the add)
};
std::vector<ConvSlot> conv_plan(const ArchitectureSpec& spec);

// Parameter-count identities derived from the plan.
std::int64_t shared_conv_param_count(const ArchitectureSpec& spec);
std::int64_t adapter_param_count(const ArchitectureSpec& spec);

template <typename T>
struct DomainParamsT {
  std::string domain_id;
  std::int64_t n_classes = 0;
  std::vector<TensorT<T>> adapters;        // [out,in,1,1] per conv slot
  std::vector<BatchNormStateT<T>> bn;      // one per conv slot + final BN
  AttentionParamsT<T> attention;           // used when attention is unshared
  TensorT<T> head_w1, head_b1;             // dense: last width -> hidden
  BatchNormStateT<T> head_bn;
  TensorT<T> head_w2, head_b2;             // dense: hidden -> n_classes
};

template <typename T>
struct ModelBundleT {
  ArchitectureSpec spec;
  std::vector<TensorT<T>> shared_convs;  // [out,in,3,3] per conv slot
  AttentionParamsT<T> shared_attention;  // used when attention is shared
  std::vector<DomainParamsT<T>> domains;  // registration order

  DomainParamsT<T>& domain(const std::string& id);
  const DomainParamsT<T>& domain(const std::string& id) const;
  bool has_domain(const std::string& id) const;
};

using ModelBundle = ModelBundleT<float>;

enum class Regime { Scratch, HeadOnly, AdaptersAndHead, SharedMultidomain };
Regime parse_regime(const std::string& name);
std::string regime_name(Regime regime);

// Flat, ordered view over every tensor in the bundle. The order is the
// canonical serialization and mask order: shared convs, shared attention
// (if shared), then per domain adapters, BNs (gamma/beta plus running
// stats), attention (if unshared), head. is_state marks running statistics
// - saved and checksummed, never touched by the optimizer.
template <typename T>
struct ParamRef {
  std::string name;
  TensorT<T>* tensor = nullptr;
  bool is_state = false;
  std::string owner;  // empty for shared, else domain_id
};

template <typename T>
std::vector<ParamRef<T>> param_index(ModelBundleT<T>& bundle);

// Trainable parameter count (state excluded); one-domain totals are the
// headline size figure.
template <typename T>
std::int64_t total_param_count(ModelBundleT<T>& bundle);

template <typename T>
ModelBundleT<T> build_model(
    const ArchitectureSpec& spec,
    const std::vector<std::pair<std::string, std::int64_t>>& domains,
    std::uint64_t seed);

// Fresh zero adapters and freshly initialized BN/attention/head for one
// domain (added if new). Shared parameters are untouched.
template <typename T>
void reinitialize_domain(ModelBundleT<T>& bundle, const std::string& domain_id,
                         std::int64_t n_classes, std::uint64_t seed);

// Mask aligned with param_index(). True means the entry may change during
// training under the given regime: for BN layers the gamma/beta and the
// running stats move together, so frozen BNs run in eval mode and their
// statistics stay bit-identical.
template <typename T>
std::vector<std::uint8_t> trainable_mask(ModelBundleT<T>& bundle,
                                         Regime regime,
                                         const std::string& domain_id);

struct ForwardOptions {
  Mode mode = Mode::Eval;
  bool use_adapters = true;     // false isolates the shared network
  bool update_trunk_bn = true;  // false freezes trunk BN statistics
  Rng* dropout_rng = nullptr;   // required in train mode when rate > 0
};

// Saved activations for one forward pass. ReLU masks are recovered from
// the stored post-relu tensors (output > 0 iff input > 0), so pre-relu
// copies are not kept.
template <typename T>
struct ForwardTrace {
  std::vector<TensorT<T>> conv_in;          // input of each conv slot
  std::vector<BatchNormCache<T>> bn_cache;  // per conv slot + final BN
  TensorT<T> final_bn_in;                   // output of the last block
  TensorT<T> att_in;                        // relu(final BN out)
  std::vector<std::int64_t> att_lengths;
  AttentionCache<T> att_cache;
  TensorT<T> pooled;
  BatchNormCache<T> head_bn_cache;
  TensorT<T> head_relu_out;
  TensorT<T> dropout_mask;  // empty when dropout inactive
  TensorT<T> head_dropped;  // input of dense2
  ForwardOptions options;
};

// features is [N,1,n_mels,W]; lengths are true frame counts, internally
// mapped to the downsampled width ceil(len/8). Returns logits
// [N, n_classes]. trace may be null for inference.
template <typename T>
TensorT<T> forward(ModelBundleT<T>& bundle, const TensorT<T>& features,
                   const std::vector<std::int64_t>& lengths,
                   const std::string& domain_id, const ForwardOptions& options,
                   ForwardTrace<T>* trace = nullptr);

// Accumulates parameter gradients into each tensor's grad buffer
// (ensure_grad is called internally; buffers are NOT zeroed first).
template <typename T>
void backward(ModelBundleT<T>& bundle, const ForwardTrace<T>& trace,
              const TensorT<T>& grad_logits, const std::string& domain_id);

template <typename T>
void zero_all_grads(ModelBundleT<T>& bundle);

// FNV-1a over the raw bytes of every selected tensor, in index order.
template <typename T>
std::uint64_t checksum_params(
    ModelBundleT<T>& bundle,
    const std::vector<std::uint8_t>* select = nullptr,
    bool invert_selection = false);

template <typename T>
std::uint64_t checksum_shared(ModelBundleT<T>& bundle);

// Full snapshot of every tensor's contents (params and state).
template <typename T>
std::vector<std::vector<T>> snapshot_params(ModelBundleT<T>& bundle);
template <typename T>
void restore_params(ModelBundleT<T>& bundle,
                    const std::vector<std::vector<T>>& snapshot);

// Checkpoint: magic, version, JSON header (spec, domains, parameter
// index), then contiguous little-endian float32 blocks in index order.
void save_checkpoint(ModelBundle& bundle, const std::string& path);
ModelBundle load_checkpoint(const std::string& path);

}  // namespace resadapt
