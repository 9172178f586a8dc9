#include "resadapt/model.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace resadapt {

namespace {

constexpr char kCheckpointMagic[8] = {'R', 'A', 'D', 'P',
                                      'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::string two_digits(std::size_t i) {
  std::string s = std::to_string(i);
  return s.size() < 2 ? "0" + s : s;
}

template <typename T>
void add_inplace(TensorT<T>& a, const TensorT<T>& b) {
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

template <typename T>
void acc_grad(TensorT<T>& param, const TensorT<T>& g) {
  param.ensure_grad();
  for (std::size_t i = 0; i < param.grad.size(); ++i)
    param.grad[i] += g.data[i];
}

template <typename T>
TensorT<T> reshaped(TensorT<T> t, std::vector<std::int64_t> shape) {
  TensorT<T> out;
  out.shape = std::move(shape);
  out.data = std::move(t.data);
  return out;
}

void validate_spec(const ArchitectureSpec& spec) {
  if (spec.stack_filters.empty())
    throw ConfigError("architecture needs at least one stack");
  for (std::size_t i = 1; i < spec.stack_filters.size(); ++i)
    if (spec.stack_filters[i] != 2 * spec.stack_filters[i - 1])
      throw ConfigError("stack filters must double per stack");
  if (spec.blocks_per_stack < 1)
    throw ConfigError("blocks_per_stack must be >= 1");
  if (spec.initial_filters < 1)
    throw ConfigError("initial_filters must be >= 1");
  if (spec.head_hidden_width < 1)
    throw ConfigError("head_hidden_width must be >= 1");
  if (spec.head_dropout_rate < 0.0 || spec.head_dropout_rate >= 1.0)
    throw ConfigError("head_dropout_rate must be in [0,1)");
}

}  // namespace

ArchitectureSpec tiny_architecture() {
  ArchitectureSpec spec;
  spec.stack_filters = {8, 16, 32};
  spec.initial_filters = 8;
  spec.head_hidden_width = 16;
  return spec;
}

std::vector<ConvSlot> conv_plan(const ArchitectureSpec& spec) {
  std::vector<ConvSlot> plan;
  plan.push_back({1, spec.initial_filters, 1, false});
  int prev = spec.initial_filters;
  for (const int filters : spec.stack_filters) {
    for (int b = 0; b < spec.blocks_per_stack; ++b) {
      plan.push_back({prev, filters, b == 0 ? 2 : 1, true});
      plan.push_back({filters, filters, 1, false});
      prev = filters;
    }
  }
  return plan;
}

std::int64_t shared_conv_param_count(const ArchitectureSpec& spec) {
  std::int64_t total = 0;
  for (const auto& slot : conv_plan(spec))
    total += static_cast<std::int64_t>(slot.in_ch) * slot.out_ch * 9;
  return total;
}

std::int64_t adapter_param_count(const ArchitectureSpec& spec) {
  std::int64_t total = 0;
  for (const auto& slot : conv_plan(spec))
    total += static_cast<std::int64_t>(slot.in_ch) * slot.out_ch;
  return total;
}

template <typename T>
DomainParamsT<T>& ModelBundleT<T>::domain(const std::string& id) {
  for (auto& d : domains)
    if (d.domain_id == id) return d;
  throw DataError("unknown domain: " + id);
}

template <typename T>
const DomainParamsT<T>& ModelBundleT<T>::domain(const std::string& id) const {
  for (const auto& d : domains)
    if (d.domain_id == id) return d;
  throw DataError("unknown domain: " + id);
}

template <typename T>
bool ModelBundleT<T>::has_domain(const std::string& id) const {
  for (const auto& d : domains)
    if (d.domain_id == id) return true;
  return false;
}

Regime parse_regime(const std::string& name) {
  if (name == "scratch") return Regime::Scratch;
  if (name == "head_only" || name == "head") return Regime::HeadOnly;
  if (name == "adapters_and_head" || name == "adapters")
    return Regime::AdaptersAndHead;
  if (name == "shared_multidomain" || name == "multidomain")
    return Regime::SharedMultidomain;
  throw ConfigError("unknown training regime: " + name);
}

std::string regime_name(Regime regime) {
  switch (regime) {
    case Regime::Scratch: return "scratch";
    case Regime::HeadOnly: return "head_only";
    case Regime::AdaptersAndHead: return "adapters_and_head";
    case Regime::SharedMultidomain: return "shared_multidomain";
  }
  return "unknown";
}

template <typename T>
std::vector<ParamRef<T>> param_index(ModelBundleT<T>& bundle) {
  std::vector<ParamRef<T>> index;
  auto push = [&index](std::string name, TensorT<T>& t, bool is_state,
                       std::string owner) {
    index.push_back({std::move(name), &t, is_state, std::move(owner)});
  };
  auto push_bn = [&push](const std::string& prefix, BatchNormStateT<T>& bn,
                         const std::string& owner) {
    push(prefix + ".gamma", bn.gamma, false, owner);
    push(prefix + ".beta", bn.beta, false, owner);
    push(prefix + ".running_mean", bn.running_mean, true, owner);
    push(prefix + ".running_var", bn.running_var, true, owner);
  };
  auto push_attention = [&push](const std::string& prefix,
                                AttentionParamsT<T>& att,
                                const std::string& owner) {
    push(prefix + ".w", att.w, false, owner);
    push(prefix + ".b", att.b, false, owner);
    push(prefix + ".v", att.v, false, owner);
  };

  for (std::size_t s = 0; s < bundle.shared_convs.size(); ++s)
    push("shared.conv" + two_digits(s) + ".kernel", bundle.shared_convs[s],
         false, "");
  if (bundle.spec.attention_shared)
    push_attention("shared.attention", bundle.shared_attention, "");

  for (auto& d : bundle.domains) {
    const std::string base = "domain." + d.domain_id;
    for (std::size_t s = 0; s < d.adapters.size(); ++s)
      push(base + ".adapter" + two_digits(s), d.adapters[s], false,
           d.domain_id);
    for (std::size_t s = 0; s < d.bn.size(); ++s)
      push_bn(base + ".bn" + two_digits(s), d.bn[s], d.domain_id);
    if (!bundle.spec.attention_shared)
      push_attention(base + ".attention", d.attention, d.domain_id);
    push(base + ".head.w1", d.head_w1, false, d.domain_id);
    push(base + ".head.b1", d.head_b1, false, d.domain_id);
    push_bn(base + ".head.bn", d.head_bn, d.domain_id);
    push(base + ".head.w2", d.head_w2, false, d.domain_id);
    push(base + ".head.b2", d.head_b2, false, d.domain_id);
  }
  return index;
}

template <typename T>
std::int64_t total_param_count(ModelBundleT<T>& bundle) {
  std::int64_t total = 0;
  for (const auto& ref : param_index(bundle))
    if (!ref.is_state) total += ref.tensor->numel();
  return total;
}

template <typename T>
void reinitialize_domain(ModelBundleT<T>& bundle, const std::string& domain_id,
                         std::int64_t n_classes, std::uint64_t seed) {
  if (n_classes < 2) throw ConfigError("domains need at least 2 classes");
  const auto plan = conv_plan(bundle.spec);
  const std::int64_t last_width = bundle.spec.stack_filters.back();
  const std::int64_t hidden = bundle.spec.head_hidden_width;

  DomainParamsT<T> d;
  d.domain_id = domain_id;
  d.n_classes = n_classes;
  Rng rng(seed);
  for (const auto& slot : plan)
    d.adapters.emplace_back(
        std::vector<std::int64_t>{slot.out_ch, slot.in_ch, 1, 1});
  for (const auto& slot : plan) d.bn.emplace_back(slot.out_ch);
  d.bn.emplace_back(last_width);  // final BN before attention
  if (!bundle.spec.attention_shared) {
    d.attention = AttentionParamsT<T>(last_width);
    Rng att_rng = rng.split("attention");
    he_init(d.attention.w, last_width, att_rng);
    he_init(d.attention.v, last_width, att_rng);
  }
  d.head_w1 = TensorT<T>({last_width, hidden});
  d.head_b1 = TensorT<T>({hidden});
  Rng h1_rng = rng.split("head1");
  he_init(d.head_w1, last_width, h1_rng);
  d.head_bn.init(hidden);
  d.head_w2 = TensorT<T>({hidden, n_classes});
  d.head_b2 = TensorT<T>({n_classes});
  Rng h2_rng = rng.split("head2");
  he_init(d.head_w2, hidden, h2_rng);

  for (auto& existing : bundle.domains)
    if (existing.domain_id == domain_id) {
      existing = std::move(d);
      return;
    }
  bundle.domains.push_back(std::move(d));
}

template <typename T>
ModelBundleT<T> build_model(
    const ArchitectureSpec& spec,
    const std::vector<std::pair<std::string, std::int64_t>>& domains,
    std::uint64_t seed) {
  validate_spec(spec);
  if (domains.empty()) throw ConfigError("build_model needs >= 1 domain");
  std::set<std::string> ids;
  for (const auto& [id, n_classes] : domains)
    if (!ids.insert(id).second)
      throw ConfigError("duplicate domain id: " + id);

  ModelBundleT<T> bundle;
  bundle.spec = spec;
  Rng root(seed);
  Rng shared_rng = root.split("shared");
  const auto plan = conv_plan(spec);
  for (std::size_t s = 0; s < plan.size(); ++s) {
    bundle.shared_convs.emplace_back(
        std::vector<std::int64_t>{plan[s].out_ch, plan[s].in_ch, 3, 3});
    Rng slot_rng = shared_rng.split(static_cast<std::uint64_t>(s));
    he_init(bundle.shared_convs.back(),
            static_cast<std::int64_t>(plan[s].in_ch) * 9, slot_rng);
  }
  if (spec.attention_shared) {
    const std::int64_t c = spec.stack_filters.back();
    bundle.shared_attention = AttentionParamsT<T>(c);
    Rng att_rng = root.split("shared-attention");
    he_init(bundle.shared_attention.w, c, att_rng);
    he_init(bundle.shared_attention.v, c, att_rng);
  }
  for (const auto& [id, n_classes] : domains)
    reinitialize_domain(bundle, id, n_classes,
                        root.split("domain:" + id).seed());
  return bundle;
}

template <typename T>
std::vector<std::uint8_t> trainable_mask(ModelBundleT<T>& bundle,
                                         Regime regime,
                                         const std::string& domain_id) {
  if (!bundle.has_domain(domain_id))
    throw DataError("unknown domain: " + domain_id);
  const auto index = param_index(bundle);
  std::vector<std::uint8_t> mask(index.size(), 0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const bool shared = index[i].owner.empty();
    const bool own = index[i].owner == domain_id;
    const bool head = own && index[i].name.find(".head.") != std::string::npos;
    switch (regime) {
      case Regime::Scratch:
      case Regime::SharedMultidomain:
        mask[i] = shared || own;
        break;
      case Regime::HeadOnly:
        mask[i] = head;
        break;
      case Regime::AdaptersAndHead:
        mask[i] = own;
        break;
    }
  }
  return mask;
}

template <typename T>
TensorT<T> forward(ModelBundleT<T>& bundle, const TensorT<T>& features,
                   const std::vector<std::int64_t>& lengths,
                   const std::string& domain_id, const ForwardOptions& options,
                   ForwardTrace<T>* trace) {
  if (features.rank() != 4 || features.shape[1] != 1)
    throw std::invalid_argument("forward: features must be [N,1,n_mels,W]");
  if (features.shape[3] < 1)
    throw std::invalid_argument("forward: empty time axis");
  if (static_cast<std::int64_t>(lengths.size()) != features.shape[0])
    throw std::invalid_argument("forward: lengths size mismatch");
  DomainParamsT<T>& dom = bundle.domain(domain_id);
  const auto plan = conv_plan(bundle.spec);
  const std::size_t n_convs = plan.size();
  const bool train = options.mode == Mode::Train;
  const Mode trunk_mode =
      (train && options.update_trunk_bn) ? Mode::Train : Mode::Eval;
  const Mode head_mode = train ? Mode::Train : Mode::Eval;

  // cumulative stride is 8 (three stride-2 convs)
  std::vector<std::int64_t> att_lengths(lengths.size());
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] < 1 || lengths[i] > features.shape[3])
      throw std::invalid_argument("forward: length out of range");
    att_lengths[i] = (lengths[i] + 7) / 8;
  }

  if (trace) {
    trace->conv_in.assign(n_convs, TensorT<T>());
    trace->bn_cache.assign(n_convs + 1, BatchNormCache<T>());
    trace->options = options;
    trace->att_lengths = att_lengths;
  }

  auto run_conv_bn = [&](std::size_t slot, const TensorT<T>& x,
                         bool relu_after) {
    if (trace) trace->conv_in[slot] = x;
    TensorT<T> y =
        conv2d(x, bundle.shared_convs[slot], plan[slot].stride, Padding::Same);
    if (options.use_adapters) {
      const TensorT<T> ya =
          conv2d(x, dom.adapters[slot], plan[slot].stride, Padding::Same);
      add_inplace(y, ya);
    }
    TensorT<T> z = batchnorm(y, dom.bn[slot], trunk_mode,
                             trace ? &trace->bn_cache[slot] : nullptr);
    return relu_after ? relu(z) : std::move(z);
  };

  TensorT<T> x = run_conv_bn(0, features, false);
  std::size_t slot = 1;
  for (std::size_t s = 0; s < bundle.spec.stack_filters.size(); ++s) {
    for (int b = 0; b < bundle.spec.blocks_per_stack; ++b) {
      TensorT<T> block_in = std::move(x);
      TensorT<T> h = run_conv_bn(slot, block_in, true);
      h = run_conv_bn(slot + 1, h, false);
      if (b == 0) {
        // downsampling shortcut: 2x2/2 average pool + zero channels
        const TensorT<T> pooled = avgpool2d(block_in, 2, 2, true);
        const std::int64_t in_ch = pooled.shape[1];
        for (std::int64_t n = 0; n < h.shape[0]; ++n)
          for (std::int64_t c = 0; c < in_ch; ++c)
            for (std::int64_t i = 0; i < h.shape[2]; ++i)
              for (std::int64_t j = 0; j < h.shape[3]; ++j)
                h.at4(n, c, i, j) += pooled.at4(n, c, i, j);
      } else {
        add_inplace(h, block_in);
      }
      x = relu(h);
      slot += 2;
    }
  }

  if (trace) trace->final_bn_in = x;
  TensorT<T> z = batchnorm(x, dom.bn[n_convs], trunk_mode,
                           trace ? &trace->bn_cache[n_convs] : nullptr);
  TensorT<T> f = relu(z);
  AttentionParamsT<T>& att =
      bundle.spec.attention_shared ? bundle.shared_attention : dom.attention;
  TensorT<T> pooled = attention_pool(f, att_lengths, att,
                                     trace ? &trace->att_cache : nullptr);
  if (trace) {
    trace->att_in = std::move(f);
    trace->pooled = pooled;
  }

  TensorT<T> a1 = dense(pooled, dom.head_w1, dom.head_b1);
  const std::int64_t n = a1.shape[0], hidden = a1.shape[1];
  TensorT<T> a1_4d = reshaped(std::move(a1), {n, hidden, 1, 1});
  TensorT<T> bn_out = batchnorm(a1_4d, dom.head_bn, head_mode,
                                trace ? &trace->head_bn_cache : nullptr);
  TensorT<T> r = reshaped(relu(bn_out), {n, hidden});
  TensorT<T> dropped;
  if (train && bundle.spec.head_dropout_rate > 0.0) {
    if (!options.dropout_rng)
      throw std::invalid_argument("forward: train mode needs a dropout rng");
    dropped = dropout(r, bundle.spec.head_dropout_rate, *options.dropout_rng,
                      trace ? &trace->dropout_mask : nullptr);
  } else {
    dropped = r;
  }
  if (trace) {
    trace->head_relu_out = std::move(r);
    trace->head_dropped = dropped;
  }
  return dense(dropped, dom.head_w2, dom.head_b2);
}

template <typename T>
void backward(ModelBundleT<T>& bundle, const ForwardTrace<T>& trace,
              const TensorT<T>& grad_logits, const std::string& domain_id) {
  DomainParamsT<T>& dom = bundle.domain(domain_id);
  const auto plan = conv_plan(bundle.spec);
  const std::size_t n_convs = plan.size();
  const bool use_adapters = trace.options.use_adapters;

  // head, dense2 backward
  TensorT<T> g_dropped, g_w2, g_b2;
  dense_backward(grad_logits, trace.head_dropped, dom.head_w2, g_dropped,
                 g_w2, g_b2);
  acc_grad(dom.head_w2, g_w2);
  acc_grad(dom.head_b2, g_b2);
  if (trace.dropout_mask.numel() > 0)
    for (std::size_t i = 0; i < g_dropped.data.size(); ++i)
      g_dropped.data[i] *= trace.dropout_mask.data[i];
  TensorT<T> g_relu = relu_backward(g_dropped, trace.head_relu_out);
  const std::int64_t n = g_relu.shape[0], hidden = g_relu.shape[1];
  TensorT<T> g_bn_in, g_gamma, g_beta;
  batchnorm_backward(reshaped(std::move(g_relu), {n, hidden, 1, 1}),
                     trace.head_bn_cache, dom.head_bn, g_bn_in, g_gamma,
                     g_beta);
  acc_grad(dom.head_bn.gamma, g_gamma);
  acc_grad(dom.head_bn.beta, g_beta);
  TensorT<T> g_pooled, g_w1, g_b1;
  dense_backward(reshaped(std::move(g_bn_in), {n, hidden}), trace.pooled,
                 dom.head_w1, g_pooled, g_w1, g_b1);
  acc_grad(dom.head_w1, g_w1);
  acc_grad(dom.head_b1, g_b1);

  // attention
  AttentionParamsT<T>& att =
      bundle.spec.attention_shared ? bundle.shared_attention : dom.attention;
  TensorT<T> g_att_in;
  AttentionParamsT<T> g_att;
  attention_pool_backward(g_pooled, trace.att_in, trace.att_lengths, att,
                          trace.att_cache, g_att_in, g_att);
  acc_grad(att.w, g_att.w);
  acc_grad(att.b, g_att.b);
  acc_grad(att.v, g_att.v);

  // final BN (+ its relu)
  TensorT<T> g_final_z = relu_backward(g_att_in, trace.att_in);
  TensorT<T> g, gg, gb;
  batchnorm_backward(g_final_z, trace.bn_cache[n_convs], dom.bn[n_convs], g,
                     gg, gb);
  acc_grad(dom.bn[n_convs].gamma, gg);
  acc_grad(dom.bn[n_convs].beta, gb);

  auto conv_bn_backward = [&](std::size_t slot, TensorT<T> upstream) {
    TensorT<T> g_conv_out, g_gamma_s, g_beta_s;
    batchnorm_backward(upstream, trace.bn_cache[slot], dom.bn[slot],
                       g_conv_out, g_gamma_s, g_beta_s);
    acc_grad(dom.bn[slot].gamma, g_gamma_s);
    acc_grad(dom.bn[slot].beta, g_beta_s);
    TensorT<T> g_in, g_kernel;
    conv2d_backward(g_conv_out, trace.conv_in[slot], bundle.shared_convs[slot],
                    plan[slot].stride, Padding::Same, g_in, g_kernel);
    acc_grad(bundle.shared_convs[slot], g_kernel);
    if (use_adapters) {
      TensorT<T> g_in2, g_adapter;
      conv2d_backward(g_conv_out, trace.conv_in[slot], dom.adapters[slot],
                      plan[slot].stride, Padding::Same, g_in2, g_adapter);
      acc_grad(dom.adapters[slot], g_adapter);
      add_inplace(g_in, g_in2);
    }
    return g_in;
  };

  // blocks in reverse
  const int blocks = bundle.spec.blocks_per_stack;
  const int n_stacks = static_cast<int>(bundle.spec.stack_filters.size());
  for (int s = n_stacks - 1; s >= 0; --s) {
    for (int b = blocks - 1; b >= 0; --b) {
      const std::size_t slot_a =
          1 + 2 * static_cast<std::size_t>(s * blocks + b);
      const std::size_t slot_b = slot_a + 1;
      const bool last_block = (s == n_stacks - 1) && (b == blocks - 1);
      const TensorT<T>& block_out =
          last_block ? trace.final_bn_in : trace.conv_in[slot_b + 1];
      TensorT<T> g_add = relu_backward(g, block_out);

      TensorT<T> g_h1 = conv_bn_backward(slot_b, g_add);
      TensorT<T> g_bn_a = relu_backward(g_h1, trace.conv_in[slot_b]);
      TensorT<T> g_main = conv_bn_backward(slot_a, std::move(g_bn_a));

      if (b == 0) {
        // shortcut: avgpool + zero-channel concat
        const TensorT<T>& block_in = trace.conv_in[slot_a];
        const std::int64_t in_ch = block_in.shape[1];
        TensorT<T> g_pool({g_add.shape[0], in_ch, g_add.shape[2],
                           g_add.shape[3]});
        for (std::int64_t i = 0; i < g_add.shape[0]; ++i)
          for (std::int64_t c = 0; c < in_ch; ++c)
            for (std::int64_t h = 0; h < g_add.shape[2]; ++h)
              for (std::int64_t w = 0; w < g_add.shape[3]; ++w)
                g_pool.at4(i, c, h, w) = g_add.at4(i, c, h, w);
        TensorT<T> g_sc = avgpool2d_backward(g_pool, block_in, 2, 2, true);
        add_inplace(g_main, g_sc);
      } else {
        add_inplace(g_main, g_add);
      }
      g = std::move(g_main);
    }
  }
  // initial conv + BN (no relu in between)
  conv_bn_backward(0, std::move(g));
}

template <typename T>
void zero_all_grads(ModelBundleT<T>& bundle) {
  for (auto& ref : param_index(bundle)) ref.tensor->zero_grad();
}

template <typename T>
std::uint64_t checksum_params(ModelBundleT<T>& bundle,
                              const std::vector<std::uint8_t>* select,
                              bool invert_selection) {
  const auto index = param_index(bundle);
  if (select && select->size() != index.size())
    throw std::invalid_argument("checksum_params: mask size mismatch");
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (select) {
      const bool selected = (*select)[i] != 0;
      if (selected == invert_selection) continue;
    }
    const auto& data = index[i].tensor->data;
    h = fnv1a64(data.data(), data.size() * sizeof(T), h);
  }
  return h;
}

template <typename T>
std::uint64_t checksum_shared(ModelBundleT<T>& bundle) {
  const auto index = param_index(bundle);
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& ref : index) {
    if (!ref.owner.empty()) continue;
    h = fnv1a64(ref.tensor->data.data(), ref.tensor->data.size() * sizeof(T),
                h);
  }
  return h;
}

template <typename T>
std::vector<std::vector<T>> snapshot_params(ModelBundleT<T>& bundle) {
  std::vector<std::vector<T>> snap;
  for (const auto& ref : param_index(bundle)) snap.push_back(ref.tensor->data);
  return snap;
}

template <typename T>
void restore_params(ModelBundleT<T>& bundle,
                    const std::vector<std::vector<T>>& snapshot) {
  const auto index = param_index(bundle);
  if (snapshot.size() != index.size())
    throw std::invalid_argument("restore_params: snapshot size mismatch");
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (snapshot[i].size() != index[i].tensor->data.size())
      throw std::invalid_argument("restore_params: tensor size mismatch");
    index[i].tensor->data = snapshot[i];
  }
}

namespace {

nlohmann::json spec_to_json(const ArchitectureSpec& spec) {
  return nlohmann::json{{"stack_filters", spec.stack_filters},
                        {"blocks_per_stack", spec.blocks_per_stack},
                        {"initial_filters", spec.initial_filters},
                        {"attention_shared", spec.attention_shared},
                        {"head_hidden_width", spec.head_hidden_width},
                        {"head_dropout_rate", spec.head_dropout_rate}};
}

ArchitectureSpec spec_from_json(const nlohmann::json& j) {
  ArchitectureSpec spec;
  spec.stack_filters = j.at("stack_filters").get<std::vector<int>>();
  spec.blocks_per_stack = j.at("blocks_per_stack").get<int>();
  spec.initial_filters = j.at("initial_filters").get<int>();
  spec.attention_shared = j.at("attention_shared").get<bool>();
  spec.head_hidden_width = j.at("head_hidden_width").get<int>();
  spec.head_dropout_rate = j.at("head_dropout_rate").get<double>();
  return spec;
}

}  // namespace

void save_checkpoint(ModelBundle& bundle, const std::string& path) {
  const auto index = param_index(bundle);
  nlohmann::json params = nlohmann::json::array();
  for (const auto& ref : index)
    params.push_back(nlohmann::json{{"name", ref.name},
                                    {"shape", ref.tensor->shape},
                                    {"state", ref.is_state}});
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& d : bundle.domains)
    domains.push_back(
        nlohmann::json{{"id", d.domain_id}, {"n_classes", d.n_classes}});
  const std::string header = nlohmann::json{{"spec", spec_to_json(bundle.spec)},
                                            {"domains", domains},
                                            {"params", params}}
                                 .dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint: " + path);
  f.write(kCheckpointMagic, 8);
  const std::uint32_t version = kCheckpointVersion;
  f.write(reinterpret_cast<const char*>(&version), 4);
  const std::uint64_t header_len = header.size();
  f.write(reinterpret_cast<const char*>(&header_len), 8);
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& ref : index)
    f.write(reinterpret_cast<const char*>(ref.tensor->data.data()),
            static_cast<std::streamsize>(ref.tensor->data.size() *
                                         sizeof(float)));
  if (!f) throw DataError("short write to checkpoint: " + path);
}

ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (f.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("not a model checkpoint: " + path);
  std::uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version) + ": " + path);
  std::uint64_t header_len = 0;
  f.read(reinterpret_cast<char*>(&header_len), 8);
  if (!f || header_len > (1ull << 30))
    throw DataError("corrupt checkpoint header: " + path);
  std::string header(header_len, '\0');
  f.read(header.data(), static_cast<std::streamsize>(header_len));
  if (f.gcount() != static_cast<std::streamsize>(header_len))
    throw DataError("truncated checkpoint header: " + path);

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint header: ") + e.what());
  }
  const ArchitectureSpec spec = spec_from_json(j.at("spec"));
  std::vector<std::pair<std::string, std::int64_t>> domains;
  for (const auto& d : j.at("domains"))
    domains.emplace_back(d.at("id").get<std::string>(),
                         d.at("n_classes").get<std::int64_t>());
  ModelBundle bundle = build_model<float>(spec, domains, 0);

  const auto index = param_index(bundle);
  const auto& params = j.at("params");
  if (params.size() != index.size())
    throw DataError("checkpoint parameter count mismatch: " + path);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (params[i].at("name").get<std::string>() != index[i].name)
      throw DataError("checkpoint parameter order mismatch at " +
                      index[i].name);
    if (params[i].at("shape").get<std::vector<std::int64_t>>() !=
        index[i].tensor->shape)
      throw DataError("checkpoint shape mismatch at " + index[i].name);
    f.read(reinterpret_cast<char*>(index[i].tensor->data.data()),
           static_cast<std::streamsize>(index[i].tensor->data.size() *
                                        sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(
                          index[i].tensor->data.size() * sizeof(float)))
      throw DataError("truncated checkpoint data at " + index[i].name);
  }
  return bundle;
}

// --- explicit instantiations -------------------------------------------

#define RESADAPT_INSTANTIATE_MODEL(T)                                        \
  template struct ModelBundleT<T>;                                           \
  template std::vector<ParamRef<T>> param_index<T>(ModelBundleT<T>&);        \
  template std::int64_t total_param_count<T>(ModelBundleT<T>&);              \
  template void reinitialize_domain<T>(ModelBundleT<T>&, const std::string&, \
                                       std::int64_t, std::uint64_t);         \
  template ModelBundleT<T> build_model<T>(                                   \
      const ArchitectureSpec&,                                               \
      const std::vector<std::pair<std::string, std::int64_t>>&,              \
      std::uint64_t);                                                        \
  template std::vector<std::uint8_t> trainable_mask<T>(                      \
      ModelBundleT<T>&, Regime, const std::string&);                         \
  template TensorT<T> forward<T>(ModelBundleT<T>&, const TensorT<T>&,        \
                                 const std::vector<std::int64_t>&,           \
                                 const std::string&, const ForwardOptions&,  \
                                 ForwardTrace<T>*);                          \
  template void backward<T>(ModelBundleT<T>&, const ForwardTrace<T>&,        \
                            const TensorT<T>&, const std::string&);          \
  template void zero_all_grads<T>(ModelBundleT<T>&);                         \
  template std::uint64_t checksum_params<T>(                                 \
      ModelBundleT<T>&, const std::vector<std::uint8_t>*, bool);             \
  template std::uint64_t checksum_shared<T>(ModelBundleT<T>&);               \
  template std::vector<std::vector<T>> snapshot_params<T>(ModelBundleT<T>&); \
  template void restore_params<T>(ModelBundleT<T>&,                          \
                                  const std::vector<std::vector<T>>&);

RESADAPT_INSTANTIATE_MODEL(float)
RESADAPT_INSTANTIATE_MODEL(double)

#undef RESADAPT_INSTANTIATE_MODEL

}  // namespace resadapt
