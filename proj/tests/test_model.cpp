// Backbone model: convolution plan, parameter-count identities, adapter
// behavior, regime masks, forward/backward consistency, and checkpoints.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "resadapt/common.hpp"
#include "resadapt/model.hpp"
#include "resadapt/ops.hpp"
#include "resadapt/rng.hpp"

using namespace resadapt;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "resadapt-model-tests";
  fs::create_directories(dir);
  return dir;
}

template <typename T>
TensorT<T> random_features(std::int64_t n, std::int64_t n_mels,
                           std::int64_t width, std::uint64_t seed) {
  TensorT<T> x({n, 1, n_mels, width});
  Rng rng(seed);
  for (auto& v : x.data) v = static_cast<T>(rng.normal());
  return x;
}

// Trainable size of one domain, recomputed from first principles so the
// param_index bookkeeping is checked against independent arithmetic.
std::int64_t expected_domain_params(const ArchitectureSpec& spec,
                                    std::int64_t n_classes) {
  const auto plan = conv_plan(spec);
  std::int64_t adapters = 0;
  std::int64_t bn_channels = 0;
  for (const auto& slot : plan) {
    adapters += static_cast<std::int64_t>(slot.in_ch) * slot.out_ch;
    bn_channels += slot.out_ch;
  }
  const std::int64_t last = spec.stack_filters.back();
  const std::int64_t hidden = spec.head_hidden_width;
  bn_channels += last;  // final BN before attention
  std::int64_t total = adapters;
  total += 2 * bn_channels;                  // gamma + beta per trunk BN
  if (!spec.attention_shared) total += last * last + 2 * last;  // w, b, v
  total += last * hidden + hidden;           // head dense 1
  total += 2 * hidden;                       // head BN gamma + beta
  total += hidden * n_classes + n_classes;   // head dense 2
  return total;
}

}  // namespace

TEST_CASE("conv plan lists thirteen convolutions with the documented layout") {
  const ArchitectureSpec spec;  // default full-size network
  const auto plan = conv_plan(spec);
  REQUIRE(plan.size() == 13);

  // Initial convolution: mono input to initial_filters, no post-BN relu.
  CHECK(plan[0].in_ch == 1);
  CHECK(plan[0].out_ch == 32);
  CHECK(plan[0].stride == 1);
  CHECK_FALSE(plan[0].relu_after_bn);

  // Three stacks of two blocks; the first conv of each stack downsamples.
  const int expected_in[12] = {32, 64,  64,  64,  64,  128,
                               128, 128, 128, 256, 256, 256};
  const int expected_out[12] = {64,  64,  64,  64,  128, 128,
                                128, 128, 256, 256, 256, 256};
  for (int i = 0; i < 12; ++i) {
    CHECK(plan[1 + i].in_ch == expected_in[i]);
    CHECK(plan[1 + i].out_ch == expected_out[i]);
    const bool stack_entry = i % 4 == 0;
    CHECK(plan[1 + i].stride == (stack_entry ? 2 : 1));
    // relu directly after BN on the first conv of a block only.
    CHECK(plan[1 + i].relu_after_bn == (i % 2 == 0));
  }
}

TEST_CASE("parameter-count identities hold for both architectures") {
  const ArchitectureSpec full;
  CHECK(adapter_param_count(full) == 301088);
  CHECK(shared_conv_param_count(full) == 2709792);
  CHECK(shared_conv_param_count(full) == 9 * adapter_param_count(full));

  const ArchitectureSpec tiny = tiny_architecture();
  CHECK(adapter_param_count(tiny) == 4744);
  CHECK(shared_conv_param_count(tiny) == 9 * 4744);
}

TEST_CASE("one-domain model lands in the expected size band") {
  ModelBundle bundle = build_model<float>(ArchitectureSpec{},
                                          {{"corpus", 4}}, 0);
  const std::int64_t total = total_param_count(bundle);
  CHECK(total == shared_conv_param_count(bundle.spec) +
                     expected_domain_params(bundle.spec, 4));
  CHECK(total >= 2'800'000);
  CHECK(total <= 3'400'000);

  // Adapter tensors alone must sum to the adapter identity.
  std::int64_t adapter_numel = 0;
  for (const auto& ref : param_index(bundle))
    if (ref.name.find(".adapter") != std::string::npos)
      adapter_numel += ref.tensor->numel();
  CHECK(adapter_numel == adapter_param_count(bundle.spec));
}

TEST_CASE("param_index covers every tensor once with stable names") {
  ModelBundle bundle =
      build_model<float>(tiny_architecture(), {{"A", 3}, {"B", 4}}, 1);
  const auto index = param_index(bundle);

  // Shared entries first, then domains in registration order.
  CHECK(index[0].name == "shared.conv00.kernel");
  CHECK(index[0].owner == "");
  std::size_t first_a = index.size(), first_b = index.size();
  int state_entries = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i].owner == "A") first_a = std::min(first_a, i);
    if (index[i].owner == "B") first_b = std::min(first_b, i);
    if (index[i].is_state) {
      ++state_entries;
      CHECK((index[i].name.find("running_mean") != std::string::npos ||
             index[i].name.find("running_var") != std::string::npos));
    }
  }
  CHECK(first_a < first_b);
  // Per domain: 13 trunk BNs + final BN + head BN, two stat tensors each.
  CHECK(state_entries == 2 * 2 * (13 + 1 + 1));
  CHECK(total_param_count(bundle) ==
        shared_conv_param_count(bundle.spec) +
            expected_domain_params(bundle.spec, 3) +
            expected_domain_params(bundle.spec, 4));
}

TEST_CASE("model construction is deterministic in the seed") {
  ModelBundle a = build_model<float>(tiny_architecture(), {{"d", 4}}, 7);
  ModelBundle b = build_model<float>(tiny_architecture(), {{"d", 4}}, 7);
  ModelBundle c = build_model<float>(tiny_architecture(), {{"d", 4}}, 8);
  CHECK(checksum_params(a) == checksum_params(b));
  CHECK(checksum_params(a) != checksum_params(c));
  CHECK(checksum_shared(a) == checksum_shared(b));

  SUBCASE("constructor validation") {
    CHECK_THROWS_AS((void)build_model<float>(tiny_architecture(), {}, 0),
                    ConfigError);
    CHECK_THROWS_AS((void)build_model<float>(tiny_architecture(),
                                             {{"d", 4}, {"d", 3}}, 0),
                    ConfigError);
    CHECK_THROWS_AS((void)build_model<float>(tiny_architecture(), {{"d", 1}},
                                             0),
                    ConfigError);
    ArchitectureSpec bad = tiny_architecture();
    bad.stack_filters = {8, 24, 48};  // not doubling
    CHECK_THROWS_AS((void)build_model<float>(bad, {{"d", 4}}, 0), ConfigError);
  }
}

TEST_CASE("fresh adapters are zero and change nothing when enabled") {
  ModelBundle bundle = build_model<float>(tiny_architecture(), {{"d", 4}}, 3);
  for (const auto& ref : param_index(bundle))
    if (ref.name.find(".adapter") != std::string::npos)
      for (const float v : ref.tensor->data) CHECK(v == 0.0f);

  const Tensor x = random_features<float>(3, 16, 20, 11);
  const std::vector<std::int64_t> lengths{20, 13, 7};
  ForwardOptions with, without;
  with.use_adapters = true;
  without.use_adapters = false;
  const Tensor y1 = forward(bundle, x, lengths, "d", with);
  const Tensor y2 = forward(bundle, x, lengths, "d", without);
  REQUIRE(y1.data.size() == y2.data.size());
  for (std::size_t i = 0; i < y1.data.size(); ++i)
    CHECK(std::abs(static_cast<double>(y1.data[i]) - y2.data[i]) <= 1e-6);

  SUBCASE("nonzero adapters do change the output") {
    bundle.domain("d").adapters[0].data[0] = 0.5f;
    const Tensor y3 = forward(bundle, x, lengths, "d", with);
    const Tensor y4 = forward(bundle, x, lengths, "d", without);
    double diff = 0.0;
    for (std::size_t i = 0; i < y3.data.size(); ++i)
      diff = std::max(diff,
                      std::abs(static_cast<double>(y3.data[i]) - y4.data[i]));
    CHECK(diff > 1e-6);
  }
}

TEST_CASE("forward produces per-sample logits and is pure in eval mode") {
  ModelBundle bundle =
      build_model<float>(tiny_architecture(), {{"A", 3}, {"B", 5}}, 21);
  const Tensor x = random_features<float>(4, 16, 24, 5);
  const std::vector<std::int64_t> lengths{24, 18, 9, 2};

  ForwardOptions opt;  // eval mode
  const Tensor y = forward(bundle, x, lengths, "A", opt);
  REQUIRE(y.shape == std::vector<std::int64_t>({4, 3}));
  const Tensor yb = forward(bundle, x, lengths, "B", opt);
  REQUIRE(yb.shape == std::vector<std::int64_t>({4, 5}));

  // Eval mode: repeated calls are bit-identical and leave no trace in the
  // bundle (running statistics untouched).
  const std::uint64_t before = checksum_params(bundle);
  const Tensor y2 = forward(bundle, x, lengths, "A", opt);
  CHECK(y.data == y2.data);
  CHECK(checksum_params(bundle) == before);

  SUBCASE("eval-mode logits are independent of batch composition") {
    // Same widths, so no padding differences: slicing one sample out of the
    // batch must reproduce its row.
    Tensor solo({1, 1, 16, 24});
    std::copy(x.data.begin() + 2 * 16 * 24, x.data.begin() + 3 * 16 * 24,
              solo.data.begin());
    const Tensor ys = forward(bundle, solo, {lengths[2]}, "A", opt);
    for (std::int64_t c = 0; c < 3; ++c)
      CHECK(std::abs(ys.at2(0, c) - y.at2(2, c)) <= 1e-5);
  }

  SUBCASE("argument validation") {
    CHECK_THROWS_AS((void)forward(bundle, x, lengths, "missing", opt),
                    DataError);
    CHECK_THROWS_AS((void)forward(bundle, x, {24, 18, 9}, "A", opt),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)forward(bundle, x, {24, 18, 9, 99}, "A", opt),
                    std::invalid_argument);
    Tensor bad({2, 3, 16, 24});
    CHECK_THROWS_AS((void)forward(bundle, bad, {24, 24}, "A", opt),
                    std::invalid_argument);
    ForwardOptions train_opt;
    train_opt.mode = Mode::Train;
    CHECK_THROWS_AS((void)forward(bundle, x, lengths, "A", train_opt),
                    std::invalid_argument);  // dropout active but no rng
  }
}

TEST_CASE("trainable masks implement the four regimes") {
  ModelBundle bundle =
      build_model<float>(tiny_architecture(), {{"A", 3}, {"B", 4}}, 5);
  const auto index = param_index(bundle);

  const auto scratch = trainable_mask(bundle, Regime::Scratch, "A");
  const auto multi = trainable_mask(bundle, Regime::SharedMultidomain, "B");
  const auto head = trainable_mask(bundle, Regime::HeadOnly, "A");
  const auto adapters = trainable_mask(bundle, Regime::AdaptersAndHead, "A");
  REQUIRE(scratch.size() == index.size());

  int head_true = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    const bool shared = index[i].owner.empty();
    const bool own_a = index[i].owner == "A";
    const bool own_b = index[i].owner == "B";
    const bool is_head =
        own_a && index[i].name.find(".head.") != std::string::npos;
    CHECK(static_cast<bool>(scratch[i]) == (shared || own_a));
    CHECK(static_cast<bool>(multi[i]) == (shared || own_b));
    CHECK(static_cast<bool>(head[i]) == is_head);
    CHECK(static_cast<bool>(adapters[i]) == own_a);
    head_true += head[i];
  }
  // Head slice: two dense layers plus one BN (with its running stats).
  CHECK(head_true == 8);
}

TEST_CASE("reinitialize_domain refreshes one domain and nothing else") {
  ModelBundle bundle =
      build_model<float>(tiny_architecture(), {{"A", 3}, {"B", 4}}, 9);
  // Dirty A's adapters and head as if trained.
  bundle.domain("A").adapters[2].data[5] = 1.25f;
  bundle.domain("A").head_w2.data[0] = -2.0f;
  const std::uint64_t shared_before = checksum_shared(bundle);

  // Checksum of everything owned by B.
  auto index = param_index(bundle);
  std::vector<std::uint8_t> b_only(index.size(), 0);
  for (std::size_t i = 0; i < index.size(); ++i)
    b_only[i] = index[i].owner == "B";
  const std::uint64_t b_before = checksum_params(bundle, &b_only);

  reinitialize_domain(bundle, "A", 6, 77);
  CHECK(checksum_shared(bundle) == shared_before);
  CHECK(checksum_params(bundle, &b_only) == b_before);
  CHECK(bundle.domain("A").n_classes == 6);
  for (const auto& adapter : bundle.domain("A").adapters)
    for (const float v : adapter.data) CHECK(v == 0.0f);

  SUBCASE("a new id is appended instead") {
    REQUIRE_FALSE(bundle.has_domain("C"));
    reinitialize_domain(bundle, "C", 2, 1);
    CHECK(bundle.has_domain("C"));
    CHECK(bundle.domains.size() == 3);
    CHECK(bundle.domains.back().domain_id == "C");
  }
  SUBCASE("unknown domain lookups raise a data error") {
    CHECK_THROWS_AS((void)bundle.domain("nope"), DataError);
  }
}

TEST_CASE("backward gradients match finite differences end to end") {
  ArchitectureSpec spec = tiny_architecture();
  spec.head_dropout_rate = 0.0;  // keep the objective deterministic
  ModelBundleT<double> bundle = build_model<double>(spec, {{"d", 3}}, 13);
  const Tensor64 x = random_features<double>(2, 12, 16, 4);
  const std::vector<std::int64_t> lengths{16, 10};
  const std::vector<std::int64_t> labels{0, 2};

  ForwardOptions opt;
  opt.mode = Mode::Train;

  // Train-mode forwards advance running statistics; snapshot/restore makes
  // each objective evaluation pure.
  auto objective = [&]() {
    const auto snap = snapshot_params(bundle);
    const Tensor64 logits = forward(bundle, x, lengths, "d", opt);
    const auto [loss, grad] = softmax_xent(logits, labels);
    (void)grad;
    restore_params(bundle, snap);
    return loss;
  };

  // Analytic gradients once.
  const auto snap = snapshot_params(bundle);
  ForwardTrace<double> trace;
  const Tensor64 logits = forward(bundle, x, lengths, "d", opt);
  restore_params(bundle, snap);
  // Re-run with the trace on restored stats so trace and FD see one state.
  const Tensor64 logits2 = forward(bundle, x, lengths, "d", opt, &trace);
  restore_params(bundle, snap);
  CHECK(logits.data == logits2.data);
  const auto [loss, grad_logits] = softmax_xent(logits2, labels);
  (void)loss;
  zero_all_grads(bundle);
  backward(bundle, trace, grad_logits, "d");

  // Sample coordinates across qualitatively different tensors.
  auto index = param_index(bundle);
  Rng pick(99);
  int checked = 0;
  for (const auto& ref : index) {
    if (ref.is_state) continue;
    const bool interesting =
        ref.name == "shared.conv00.kernel" ||
        ref.name == "shared.conv05.kernel" ||
        ref.name == "domain.d.adapter03" ||
        ref.name == "domain.d.bn03.gamma" ||
        ref.name == "domain.d.bn13.beta" ||
        ref.name == "domain.d.attention.v" ||
        ref.name == "domain.d.head.w1" ||
        ref.name == "domain.d.head.bn.gamma" ||
        ref.name == "domain.d.head.w2" ||
        ref.name == "domain.d.head.b2";
    if (!interesting) continue;
    REQUIRE(ref.tensor->has_grad());
    for (int k = 0; k < 3; ++k) {
      const std::size_t i = static_cast<std::size_t>(
          pick.uniform_int(0, ref.tensor->numel() - 1));
      const double fd = oracle::finite_diff(
          [&](std::vector<double>&) { return objective(); },
          ref.tensor->data, i, 1e-6);
      const double an = ref.tensor->grad[i];
      INFO(ref.name << "[" << i << "] analytic=" << an << " fd=" << fd);
      CHECK(oracle::rel_err(an, fd) < 1e-3);
      ++checked;
    }
  }
  CHECK(checked >= 30);

  SUBCASE("backward accumulates and zero_all_grads clears") {
    backward(bundle, trace, grad_logits, "d");
    // Second accumulation doubles a previously checked gradient.
    for (const auto& ref : index)
      if (ref.name == "domain.d.head.b2") {
        const double g = ref.tensor->grad[0];
        zero_all_grads(bundle);
        backward(bundle, trace, grad_logits, "d");
        CHECK(std::abs(ref.tensor->grad[0] - g / 2.0) <= 1e-12);
      }
  }
}

TEST_CASE("backward on one domain leaves other domains' gradients empty") {
  ModelBundle bundle =
      build_model<float>(tiny_architecture(), {{"A", 3}, {"B", 4}}, 17);
  const Tensor x = random_features<float>(2, 16, 20, 23);
  const std::vector<std::int64_t> lengths{20, 20};

  ForwardOptions opt;
  opt.mode = Mode::Train;
  Rng drop(1);
  opt.dropout_rng = &drop;
  zero_all_grads(bundle);
  ForwardTrace<float> trace;
  const Tensor logits = forward(bundle, x, lengths, "A", opt, &trace);
  const auto [loss, grad_logits] = softmax_xent(logits, {0, 1});
  (void)loss;
  backward(bundle, trace, grad_logits, "A");

  bool shared_touched = false;
  for (const auto& ref : param_index(bundle)) {
    if (ref.is_state) continue;
    if (ref.owner == "B") {
      // Never part of the A graph: untouched or still zero.
      if (ref.tensor->has_grad())
        for (const float g : ref.tensor->grad) CHECK(g == 0.0f);
    } else if (ref.owner.empty() && ref.tensor->has_grad()) {
      for (const float g : ref.tensor->grad)
        if (g != 0.0f) shared_touched = true;
    }
  }
  CHECK(shared_touched);  // shared trunk does receive gradient
}

TEST_CASE("checkpoints round trip bit for bit") {
  ModelBundle bundle =
      build_model<float>(tiny_architecture(), {{"A", 3}, {"B", 4}}, 31);
  // Make state nontrivial so stats are covered by the round trip.
  bundle.domain("A").bn[0].running_mean.data[0] = 0.75f;
  bundle.domain("B").head_bn.running_var.data[1] = 2.5f;

  const std::string path = (temp_dir() / "model.ckpt").string();
  save_checkpoint(bundle, path);
  ModelBundle back = load_checkpoint(path);

  CHECK(back.spec == bundle.spec);
  REQUIRE(back.domains.size() == 2);
  CHECK(back.domains[0].domain_id == "A");
  CHECK(back.domains[1].domain_id == "B");
  CHECK(back.domain("A").n_classes == 3);
  CHECK(back.domain("B").n_classes == 4);
  CHECK(checksum_params(back) == checksum_params(bundle));
  CHECK(back.domain("A").bn[0].running_mean.data[0] == 0.75f);

  SUBCASE("missing file") {
    CHECK_THROWS_AS((void)load_checkpoint((temp_dir() / "absent.ckpt")
                                              .string()),
                    DataError);
  }
  SUBCASE("wrong magic") {
    const std::string bad = (temp_dir() / "bad.ckpt").string();
    std::ofstream out(bad, std::ios::binary);
    out << "definitely not a checkpoint";
    out.close();
    CHECK_THROWS_AS((void)load_checkpoint(bad), DataError);
  }
  SUBCASE("truncated payload") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes(std::istreambuf_iterator<char>(in), {});
    in.close();
    REQUIRE(bytes.size() > 128);
    const std::string cut = (temp_dir() / "cut.ckpt").string();
    std::ofstream out(cut, std::ios::binary);
    out.write(bytes.data(),
              static_cast<std::streamsize>(bytes.size() - bytes.size() / 3));
    out.close();
    CHECK_THROWS_AS((void)load_checkpoint(cut), DataError);
  }
}

TEST_CASE("snapshot/restore is a faithful round trip") {
  ModelBundle bundle = build_model<float>(tiny_architecture(), {{"d", 4}}, 2);
  const auto snap = snapshot_params(bundle);
  const std::uint64_t before = checksum_params(bundle);
  bundle.shared_convs[0].data[0] += 1.0f;
  bundle.domain("d").head_b2.data[0] = 9.0f;
  bundle.domain("d").bn[1].running_var.data[0] = 5.0f;
  CHECK(checksum_params(bundle) != before);
  restore_params(bundle, snap);
  CHECK(checksum_params(bundle) == before);
  CHECK_THROWS_AS(restore_params(bundle, {}), std::invalid_argument);
}

TEST_CASE("regime names parse both long and short spellings") {
  CHECK(parse_regime("scratch") == Regime::Scratch);
  CHECK(parse_regime("head") == Regime::HeadOnly);
  CHECK(parse_regime("head_only") == Regime::HeadOnly);
  CHECK(parse_regime("adapters") == Regime::AdaptersAndHead);
  CHECK(parse_regime("adapters_and_head") == Regime::AdaptersAndHead);
  CHECK(parse_regime("multidomain") == Regime::SharedMultidomain);
  CHECK(parse_regime("shared_multidomain") == Regime::SharedMultidomain);
  CHECK_THROWS_AS((void)parse_regime("finetune"), ConfigError);
  for (const Regime r : {Regime::Scratch, Regime::HeadOnly,
                         Regime::AdaptersAndHead, Regime::SharedMultidomain})
    CHECK(parse_regime(regime_name(r)) == r);
}
