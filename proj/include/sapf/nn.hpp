#pragma once

// Transformer building blocks over sapf::Tensor.
//
// Weight matrices are stored input-major (in x out) and applied as x * W, so a
// row of x is one sequence position.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sapf/grad_check.hpp"
#include "sapf/tensor.hpp"

namespace sapf {

struct AttentionConfig {
  std::size_t model_dim = 32;
  std::size_t num_heads = 4;
  std::size_t ff_dim = 64;

  std::size_t head_dim() const { return model_dim / num_heads; }
  /// Throws ConfigError unless model_dim is a positive multiple of num_heads.
  void validate() const;
};

enum class Init {
  kFanIn,  // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), fan_in = shape[0]
  kUnit,   // uniform(-1, 1), lookup tables
  kZeros,
  kOnes,
};

/// Owns every trainable tensor of a model under a unique dotted name.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  Tensor create(const std::string& name, Shape shape, Init init);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const NamedTensors& params() const { return params_; }
  std::size_t num_elements() const;
  void zero_grad();

 private:
  std::mt19937_64 rng_;
  NamedTensors params_;
  std::map<std::string, std::size_t> index_;
};

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

/// Linear -> GELU -> Linear.
struct FeedForward {
  Linear in;
  Linear out;

  FeedForward() = default;
  FeedForward(ParamStore& store, const std::string& name, const AttentionConfig& cfg);
  Tensor operator()(const Tensor& x) const;
};

/// Scaled dot-product attention with per-head projections. Key and value may
/// come from different sources as long as they share a sequence length.
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  std::size_t num_heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, const AttentionConfig& cfg);

  /// `mask`, when given, is an additive Lq x Lk constant (0 or a large negative).
  Tensor operator()(const Tensor& q, const Tensor& k, const Tensor& v,
                    const Tensor* mask = nullptr) const;
};

Tensor feed_forward(const Tensor& x, const FeedForward& ff);
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const MultiHeadAttention& mha, const Tensor* mask = nullptr);

/// Standard sinusoidal table, rows x dim.
Tensor sinusoidal_positions(std::size_t rows, std::size_t dim);
/// Additive causal mask: 0 on and below the diagonal, -1e30 above.
Tensor causal_mask(std::size_t size);

}  // namespace sapf
