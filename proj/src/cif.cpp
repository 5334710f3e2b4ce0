#include "sapf/cif.hpp"

#include <algorithm>
#include <cmath>

#include "sapf/error.hpp"

namespace sapf {

double WeightSequence::total() const {
  double s = 0.0;
  for (double v : alpha.data()) s += v;
  return s;
}

WeightPredictor::WeightPredictor(ParamStore& store, const std::string& name, std::size_t model_dim)
    : proj(store, name, model_dim, 1) {}

WeightSequence predict_weights(const Tensor& h_asr, const WeightPredictor& predictor) {
  const std::size_t frames = h_asr.rows();
  return {sigmoid(reshape(predictor.proj(h_asr), {frames}))};
}

namespace {

// One (token, frame) share. The share is min(c_t, (n+1)beta) - max(c_{t-1}, n beta)
// where c is the running sum of alpha, so its derivative is +1 w.r.t. c_t when
// the token is still open after the frame and -1 w.r.t. c_{t-1} when the token
// was opened before the frame.
struct Share {
  std::size_t token;
  std::size_t frame;
  double d_end;    // d share / d c_t
  double d_start;  // d share / d c_{t-1}
};

}  // namespace

Tensor cif_frame_weights(const Tensor& alpha, double beta, std::vector<std::size_t>* firings,
                         double* residue) {
  if (!(beta > 0.0)) throw ContractError("integrate_and_fire: threshold must be positive");
  if (alpha.dim() != 1) throw DimensionError("integrate_and_fire: weights must be 1-D");
  const std::size_t frames = alpha.numel();
  auto a = alpha.data();
  const double tol = kFireTolerance * beta;

  std::vector<Share> shares;
  std::vector<double> values;
  std::vector<std::size_t> fired;
  double acc = 0.0;
  std::size_t token = 0;

  for (std::size_t t = 0; t < frames; ++t) {
    double rem = a[t];
    // A token opened by a firing inside this frame starts at n * beta (constant).
    bool fired_in_frame = false;
    while (acc + rem >= beta - tol) {
      const double take = std::min(std::max(beta - acc, 0.0), rem);
      shares.push_back({token, t, 0.0, fired_in_frame ? 0.0 : -1.0});
      values.push_back(take);
      fired.push_back(t);
      fired_in_frame = true;
      rem -= take;
      acc = 0.0;
      ++token;
      if (rem <= 0.0) break;
    }
    if (rem > 0.0) {
      shares.push_back({token, t, 1.0, fired_in_frame ? 0.0 : -1.0});
      values.push_back(rem);
      acc += rem;
    }
  }

  const std::size_t n_tok = fired.size();
  std::vector<double> w(n_tok * frames, 0.0);
  std::vector<Share> kept;
  kept.reserve(shares.size());
  for (std::size_t i = 0; i < shares.size(); ++i) {
    if (shares[i].token >= n_tok) continue;  // unfired tail
    w[shares[i].token * frames + shares[i].frame] += values[i];
    kept.push_back(shares[i]);
  }
  if (firings) *firings = fired;
  if (residue) *residue = acc;

  return make_result({n_tok, frames}, std::move(w), {alpha},
                     [alpha, kept, frames](std::span<const double> g) {
    Tensor ta = alpha;
    // dL/dc_t, then a reverse cumulative sum gives dL/dalpha_s.
    std::vector<double> dc(frames + 1, 0.0);
    for (const auto& s : kept) {
      const double gs = g[s.token * frames + s.frame];
      dc[s.frame + 1] += gs * s.d_end;    // c_t stored at index t + 1
      dc[s.frame] += gs * s.d_start;      // c_{t-1} at index t
    }
    auto ga = ta.mutable_grad();
    double run = 0.0;
    for (std::size_t t = frames; t-- > 0;) {
      run += dc[t + 1];
      ga[t] += run;
    }
  });
}

FiringPlan integrate_and_fire(const Tensor& h, const WeightSequence& w, double beta) {
  if (h.rows() != w.size()) {
    throw DimensionError("integrate_and_fire: " + std::to_string(h.rows()) + " frames but " +
                         std::to_string(w.size()) + " weights");
  }
  FiringPlan plan;
  plan.threshold_beta = beta;
  plan.frame_weights = cif_frame_weights(w.alpha, beta, &plan.firings, &plan.residue);
  plan.embeddings = matmul(plan.frame_weights, h);
  return plan;
}

WeightSequence scale_weights(const WeightSequence& w, std::size_t target_len, double beta) {
  if (target_len == 0) throw ContractError("scale_weights: target length must be >= 1");
  if (!(w.total() > 0.0)) throw ContractError("scale_weights: degenerate weights (sum is zero)");
  Tensor factor = scale(reciprocal(sum(w.alpha)), static_cast<double>(target_len) * beta);
  return {mul_scalar(w.alpha, factor)};
}

Tensor mae_loss(const WeightSequence& w, std::size_t target_len) {
  return abs(add_scalar(sum(w.alpha), -static_cast<double>(target_len)));
}

}  // namespace sapf
