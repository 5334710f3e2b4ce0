#include "sapf/nn.hpp"

#include <cmath>

#include "sapf/error.hpp"

namespace sapf {

void AttentionConfig::validate() const {
  if (model_dim == 0 || num_heads == 0 || model_dim % num_heads != 0) {
    throw ConfigError("attention: model_dim " + std::to_string(model_dim) +
                      " is not divisible by num_heads " + std::to_string(num_heads));
  }
  if (ff_dim == 0) throw ConfigError("attention: ff_dim must be positive");
}

Tensor ParamStore::create(const std::string& name, Shape shape, Init init) {
  if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
  std::vector<double> data(shape_numel(shape), 0.0);
  switch (init) {
    case Init::kFanIn: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(shape.empty() ? 1 : shape[0]));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : data) v = dist(rng_);
      break;
    }
    case Init::kUnit: {
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      for (auto& v : data) v = dist(rng_);
      break;
    }
    case Init::kZeros:
      break;
    case Init::kOnes:
      std::fill(data.begin(), data.end(), 1.0);
      break;
  }
  Tensor t = Tensor::from_data(std::move(shape), std::move(data), true);
  index_[name] = params_.size();
  params_.emplace_back(name, t);
  return t;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return params_[it->second].second;
}

std::size_t ParamStore::num_elements() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out)
    : weight(store.create(name + ".weight", {in, out}, Init::kFanIn)),
      bias(store.create(name + ".bias", {out}, Init::kZeros)) {}

Tensor Linear::operator()(const Tensor& x) const { return add_row(matmul(x, weight), bias); }

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t dim)
    : gain(store.create(name + ".gain", {dim}, Init::kOnes)),
      bias(store.create(name + ".bias", {dim}, Init::kZeros)) {}

FeedForward::FeedForward(ParamStore& store, const std::string& name, const AttentionConfig& cfg)
    : in(store, name + ".in", cfg.model_dim, cfg.ff_dim),
      out(store, name + ".out", cfg.ff_dim, cfg.model_dim) {}

Tensor FeedForward::operator()(const Tensor& x) const { return out(gelu(in(x))); }

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name,
                                       const AttentionConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.model_dim;
  wq = Linear(store, name + ".wq", d, d);
  wk = Linear(store, name + ".wk", d, d);
  wv = Linear(store, name + ".wv", d, d);
  wo = Linear(store, name + ".wo", d, d);
  num_heads = cfg.num_heads;
}

Tensor MultiHeadAttention::operator()(const Tensor& q, const Tensor& k, const Tensor& v,
                                      const Tensor* mask) const {
  if (k.rows() != v.rows()) {
    throw DimensionError("attention: key length " + std::to_string(k.rows()) +
                         " differs from value length " + std::to_string(v.rows()));
  }
  const std::size_t d = wq.weight.shape()[1];
  if (d % num_heads != 0) throw ConfigError("attention: model_dim not divisible by num_heads");
  const std::size_t dh = d / num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor Q = wq(q);
  Tensor K = wk(k);
  Tensor V = wv(v);
  std::vector<Tensor> heads;
  heads.reserve(num_heads);
  for (std::size_t h = 0; h < num_heads; ++h) {
    Tensor qh = slice_cols(Q, h * dh, dh);
    Tensor kh = slice_cols(K, h * dh, dh);
    Tensor vh = slice_cols(V, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (mask) scores = add(scores, *mask);
    heads.push_back(matmul(softmax(scores, 1), vh));
  }
  Tensor joined = num_heads == 1 ? heads.front() : concat_cols(heads);
  return wo(joined);
}

Tensor feed_forward(const Tensor& x, const FeedForward& ff) { return ff(x); }

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const MultiHeadAttention& mha, const Tensor* mask) {
  return mha(q, k, v, mask);
}

Tensor sinusoidal_positions(std::size_t rows, std::size_t dim) {
  std::vector<double> pe(rows * dim);
  for (std::size_t t = 0; t < rows; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      pe[t * dim + i] = (i % 2 == 0) ? std::sin(t * rate) : std::cos(t * rate);
    }
  }
  return Tensor::from_data({rows, dim}, std::move(pe));
}

Tensor causal_mask(std::size_t size) {
  std::vector<double> m(size * size, 0.0);
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = i + 1; j < size; ++j) m[i * size + j] = -1e30;
  return Tensor::from_data({size, size}, std::move(m));
}

}  // namespace sapf
