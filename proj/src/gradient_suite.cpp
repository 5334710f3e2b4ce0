#include "sapf/gradient_suite.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "sapf/cif.hpp"
#include "sapf/losses.hpp"
#include "sapf/model.hpp"
#include "sapf/nn.hpp"
#include "sapf/speaker.hpp"

namespace sapf {

namespace {

class CaseBuilder {
 public:
  explicit CaseBuilder(std::uint64_t seed) : rng_(seed) {}

  Tensor leaf(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = u(rng_);
    return Tensor::from_data(std::move(shape), std::move(v), true);
  }

  // Fixed random weights that turn any output into a scalar with a distinct
  // coefficient per element.
  Tensor probe(const Shape& shape) {
    Tensor t = leaf(shape);
    t.set_requires_grad(false);
    return t;
  }

 private:
  std::mt19937_64 rng_;
};

using OutputFn = std::function<Tensor(const std::vector<Tensor>&)>;

GradientCase check_op(const std::string& name, CaseBuilder& b, std::vector<Tensor> inputs,
                      const OutputFn& fn, const GradientSuiteOptions& opts) {
  Tensor probe;
  {
    NoGradGuard ng;
    probe = b.probe(fn(inputs).shape());
  }
  NamedTensors named;
  for (std::size_t i = 0; i < inputs.size(); ++i) named.emplace_back("x" + std::to_string(i), inputs[i]);
  auto loss = [&] { return sum(mul(fn(inputs), probe)); };
  return {name, grad_check(loss, named, opts.step, opts.op_tolerance)};
}

SpeakerInventory suite_inventory(std::size_t genuine, std::size_t total, std::size_t dim) {
  SpeakerInventory inv;
  for (std::size_t i = 0; i < total; ++i) {
    std::vector<double> v(dim, 0.1);
    v[i % dim] = 1.0;
    inv.profiles.push_back(SpeakerProfile::make("spk" + std::to_string(i), std::move(v)));
  }
  inv.true_count = genuine;
  return inv;
}

}  // namespace

GradientSuiteResult run_gradient_suite(const GradientSuiteOptions& opts) {
  GradientSuiteResult result;
  CaseBuilder b(opts.seed);
  auto record = [&](GradientCase c) {
    result.passed = result.passed && c.report.passed;
    result.max_rel_error = std::max(result.max_rel_error, c.report.max_rel_error());
    result.cases.push_back(std::move(c));
  };
  auto op = [&](const std::string& name, std::vector<Tensor> in, const OutputFn& fn) {
    record(check_op(name, b, std::move(in), fn, opts));
  };

  const std::vector<std::size_t> idx{2, 0, 2, 1};
  op("matmul", {b.leaf({3, 4}), b.leaf({4, 2})}, [](auto& v) { return matmul(v[0], v[1]); });
  op("transpose", {b.leaf({3, 4})}, [](auto& v) { return transpose(v[0]); });
  op("add", {b.leaf({2, 3}), b.leaf({2, 3})}, [](auto& v) { return add(v[0], v[1]); });
  op("sub", {b.leaf({2, 3}), b.leaf({2, 3})}, [](auto& v) { return sub(v[0], v[1]); });
  op("mul", {b.leaf({2, 3}), b.leaf({2, 3})}, [](auto& v) { return mul(v[0], v[1]); });
  op("add_row", {b.leaf({3, 4}), b.leaf({4})}, [](auto& v) { return add_row(v[0], v[1]); });
  op("scale", {b.leaf({2, 3})}, [](auto& v) { return scale(v[0], -1.7); });
  op("add_scalar", {b.leaf({2, 3})}, [](auto& v) { return add_scalar(v[0], 0.3); });
  op("mul_scalar", {b.leaf({2, 3}), b.leaf({1})}, [](auto& v) { return mul_scalar(v[0], v[1]); });
  op("reciprocal", {b.leaf({2, 3}, 0.5, 2.0)}, [](auto& v) { return reciprocal(v[0]); });
  op("exp", {b.leaf({2, 3})}, [](auto& v) { return exp(v[0]); });
  op("log", {b.leaf({2, 3}, 0.3, 2.0)}, [](auto& v) { return log(v[0]); });
  op("abs", {b.leaf({2, 3}, 0.1, 1.0)}, [](auto& v) { return abs(v[0]); });
  op("sigmoid", {b.leaf({2, 3})}, [](auto& v) { return sigmoid(v[0]); });
  op("gelu", {b.leaf({2, 3})}, [](auto& v) { return gelu(v[0]); });
  op("sum", {b.leaf({2, 3})}, [](auto& v) { return sum(mul(v[0], v[0])); });
  op("mean", {b.leaf({2, 3})}, [](auto& v) { return mean(mul(v[0], v[0])); });
  op("reshape", {b.leaf({2, 3})}, [](auto& v) { return reshape(v[0], {3, 2}); });
  op("softmax", {b.leaf({3, 4})}, [](auto& v) { return softmax(v[0], 1); });
  op("log_softmax", {b.leaf({3, 4})}, [](auto& v) { return log_softmax(v[0], 1); });
  op("layer_norm", {b.leaf({3, 5}), b.leaf({5}), b.leaf({5})},
     [](auto& v) { return layer_norm(v[0], v[1], v[2]); });
  op("concat_rows", {b.leaf({2, 3}), b.leaf({1, 3})}, [](auto& v) { return concat_rows({v[0], v[1]}); });
  op("concat_cols", {b.leaf({2, 3}), b.leaf({2, 1})}, [](auto& v) { return concat_cols({v[0], v[1]}); });
  op("slice_rows", {b.leaf({4, 3})}, [](auto& v) { return slice_rows(v[0], 1, 2); });
  op("slice_cols", {b.leaf({3, 4})}, [](auto& v) { return slice_cols(v[0], 1, 2); });
  op("gather_rows", {b.leaf({3, 2})}, [&idx](auto& v) { return gather_rows(v[0], idx); });
  op("pick", {b.leaf({4, 3})}, [&idx](auto& v) { return pick(v[0], idx); });
  op("cosine_similarity", {b.leaf({3, 4}), b.leaf({2, 4})},
     [](auto& v) { return cosine_similarity(v[0], v[1]); });

  // Layers.
  {
    const AttentionConfig cfg{8, 2, 12};
    auto store = std::make_shared<ParamStore>(opts.seed + 1);
    auto mha = std::make_shared<MultiHeadAttention>(*store, "mha", cfg);
    auto ff = std::make_shared<FeedForward>(*store, "ff", cfg);
    auto mask = std::make_shared<Tensor>(causal_mask(3));
    std::vector<Tensor> in{b.leaf({3, 8}), b.leaf({5, 8})};
    for (const auto& [name, t] : store->params()) in.push_back(t);
    op("attention_feed_forward", in, [store, mha, ff, mask](auto& v) {
      Tensor self = (*mha)(v[0], v[0], v[0], mask.get());
      return (*ff)((*mha)(self, v[1], v[1]));
    });
  }
  // CIF weights sit away from firing boundaries so the differences stay on
  // one linear piece.
  op("cif", {b.leaf({6, 3}), Tensor::from_data({6}, {0.35, 0.45, 0.5, 0.62, 0.3, 0.41}, true)},
     [](auto& v) { return integrate_and_fire(v[0], {v[1]}).embeddings; });
  op("cif_scaled", {b.leaf({5, 3}), Tensor::from_data({5}, {0.3, 0.8, 0.2, 0.55, 0.7}, true)},
     [](auto& v) { return integrate_and_fire(v[0], scale_weights({v[1]}, 3)).embeddings; });
  op("ctc", {b.leaf({6, 4}, -2.0, 2.0)}, [](auto& v) {
    const TokenId target[] = {0, 1, 1};
    return ctc_loss(v[0], target).loss;
  });
  op("speaker_loss", {b.leaf({3, 3})}, [](auto& v) {
    CosineScores s{v[0], std::vector<std::uint8_t>(9, 0), 3};
    const std::size_t who[] = {0, 2, 1};
    return speaker_loss(s, who);
  });

  if (opts.include_model) {
    ModelConfig mc;
    mc.encoder_layers = mc.decoder_layers = mc.speaker_encoder_layers = 2;
    mc.attn = {8, 2, 16};
    mc.vocab_size = 10;
    mc.feature_dim = 6;
    mc.d_spk = 4;
    mc.sampling_factor_lambda = 1.1;
    SaParaformer model(mc, opts.seed + 2);
    Tensor x = b.probe({9, 6});
    const TokenSequence y{1, 4, 2, 6, 3};
    const std::size_t spk[] = {0, 1, 1, 0, 1};
    const SpeakerInventory inv = suite_inventory(2, 3, mc.d_spk);
    TrainOptions to;
    to.fill_speakers = true;
    to.k_max = 5;
    to.fill_seed = opts.seed + 3;
    to.sampler_seed = opts.seed + 4;
    auto loss = [&] {
      const ForwardTrace tr = model.two_pass_train_forward(x, y, inv, to);
      return sa_paraformer_objective(model, tr, y, spk, LossWeights{}).total;
    };
    record({"sa_paraformer_objective",
         grad_check(loss, model.params().params(), opts.step, opts.model_tolerance)});

    ArBaseline ar(mc, opts.seed + 5);
    auto ar_loss = [&] {
      return ar_baseline_objective(ar, ar.forward(x, y, inv), y, spk);
    };
    record({"ar_baseline_objective",
         grad_check(ar_loss, ar.params().params(), opts.step, opts.model_tolerance)});
  }
  return result;
}

}  // namespace sapf
