#include "attrsae/sae.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>

namespace attrsae {
namespace {

// Selection order: larger value first, lower index breaking ties.
struct Candidate {
  double value;
  uint32_t index;
};

inline bool better(const Candidate& a, const Candidate& b) {
  if (a.value != b.value) return a.value > b.value;
  return a.index < b.index;
}

SparseCode select_from(std::vector<Candidate>& cands, int64_t k, uint32_t m) {
  SparseCode code;
  code.m = m;
  if (cands.empty() || k <= 0) return code;
  const size_t keep = std::min<size_t>(cands.size(), static_cast<size_t>(k));
  std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(), better);
  cands.resize(keep);
  std::sort(cands.begin(), cands.end(),
            [](const Candidate& a, const Candidate& b) { return a.index < b.index; });
  code.indices.reserve(keep);
  code.coeffs.reserve(keep);
  for (const Candidate& c : cands) {
    code.indices.push_back(c.index);
    code.coeffs.push_back(c.value);
  }
  return code;
}

}  // namespace

GradientSet GradientSet::zeros(int64_t d, int64_t m) {
  GradientSet g;
  g.d = d;
  g.m = m;
  g.w_enc.assign(static_cast<size_t>(m) * d, 0.0);
  g.b_enc.assign(m, 0.0);
  g.w_dec.assign(static_cast<size_t>(d) * m, 0.0);
  g.b_pre.assign(d, 0.0);
  return g;
}

void GradientSet::accumulate(const GradientSet& other) {
  assert(d == other.d && m == other.m);
  for (size_t i = 0; i < w_enc.size(); ++i) w_enc[i] += other.w_enc[i];
  for (size_t i = 0; i < b_enc.size(); ++i) b_enc[i] += other.b_enc[i];
  for (size_t i = 0; i < w_dec.size(); ++i) w_dec[i] += other.w_dec[i];
  for (size_t i = 0; i < b_pre.size(); ++i) b_pre[i] += other.b_pre[i];
}

void GradientSet::scale(double s) {
  for (double& x : w_enc) x *= s;
  for (double& x : b_enc) x *= s;
  for (double& x : w_dec) x *= s;
  for (double& x : b_pre) x *= s;
}

void GradientSet::check_finite() const {
  auto scan = [](const std::vector<double>& v, const char* name) {
    for (double x : v)
      if (!std::isfinite(x))
        throw Error(ErrKind::NonFiniteGradient, std::string("non-finite gradient in ") + name);
  };
  scan(w_enc, "w_enc");
  scan(b_enc, "b_enc");
  scan(w_dec, "w_dec");
  scan(b_pre, "b_pre");
}

SparseCode top_k_select(const std::vector<double>& values, int64_t k) {
  std::vector<Candidate> cands;
  cands.reserve(values.size());
  for (size_t i = 0; i < values.size(); ++i)
    if (values[i] > 0.0) cands.push_back({values[i], static_cast<uint32_t>(i)});
  return select_from(cands, k, static_cast<uint32_t>(values.size()));
}

SparseCode top_k_select_masked(const std::vector<double>& values, int64_t k,
                               const DeadMask& mask) {
  assert(mask.flags.size() == values.size());
  std::vector<Candidate> cands;
  for (size_t i = 0; i < values.size(); ++i)
    if (mask.flags[i] != 0 && values[i] > 0.0)
      cands.push_back({values[i], static_cast<uint32_t>(i)});
  return select_from(cands, k, static_cast<uint32_t>(values.size()));
}

std::vector<double> encoder_preactivations(const SaeModel& model,
                                           const EmbeddingVector& x) {
  if (static_cast<int64_t>(x.size()) != model.d)
    throw Error(ErrKind::DimensionMismatch,
                "encode: input length " + std::to_string(x.size()) + ", model d = " +
                    std::to_string(model.d));
  std::vector<double> centered(model.d);
  for (int64_t j = 0; j < model.d; ++j) centered[j] = x[j] - model.b_pre[j];
  std::vector<double> pre(model.m);
  for (int64_t i = 0; i < model.m; ++i) {
    const double* row = model.w_enc.data() + i * model.d;
    double acc = 0.0;
    for (int64_t j = 0; j < model.d; ++j) acc += row[j] * centered[j];
    pre[i] = acc + model.b_enc[i];
  }
  return pre;
}

SparseCode encode(const SaeModel& model, const EmbeddingVector& x, int64_t k) {
  return top_k_select(encoder_preactivations(model, x), k);
}

EmbeddingVector decode(const SaeModel& model, const SparseCode& code) {
  if (code.m != static_cast<uint32_t>(model.m))
    throw Error(ErrKind::DimensionMismatch,
                "decode: code latent space " + std::to_string(code.m) + ", model m = " +
                    std::to_string(model.m));
  EmbeddingVector out(model.b_pre.begin(), model.b_pre.end());
  for (size_t t = 0; t < code.indices.size(); ++t) {
    const double* col = model.w_dec.data() + static_cast<int64_t>(code.indices[t]) * model.d;
    const double c = code.coeffs[t];
    for (int64_t j = 0; j < model.d; ++j) out[j] += c * col[j];
  }
  return out;
}

EmbeddingVector reconstruct(const SaeModel& model, const EmbeddingVector& x, int64_t k) {
  return decode(model, encode(model, x, k));
}

double mse_loss(const EmbeddingVector& x, const EmbeddingVector& x_hat) {
  if (x.size() != x_hat.size())
    throw Error(ErrKind::DimensionMismatch, "mse_loss: length mismatch");
  double acc = 0.0;
  for (size_t j = 0; j < x.size(); ++j) {
    const double e = x[j] - x_hat[j];
    acc += e * e;
  }
  return acc;
}

SparseCode aux_selection(const SaeModel& model, const EmbeddingVector& x,
                         const DeadMask& dead, int64_t k_aux) {
  return top_k_select_masked(encoder_preactivations(model, x), k_aux, dead);
}

SparseCode aux_selection(const std::vector<double>& preactivations, int64_t k_aux,
                         const DeadMask& dead) {
  return top_k_select_masked(preactivations, k_aux, dead);
}

double aux_loss(const SaeModel& model, const EmbeddingVector& x,
                const EmbeddingVector& x_hat, const DeadMask& dead, int64_t k_aux) {
  if (x.size() != x_hat.size() || static_cast<int64_t>(x.size()) != model.d)
    throw Error(ErrKind::DimensionMismatch, "aux_loss: length mismatch");
  const std::vector<double> pre = encoder_preactivations(model, x);
  return aux_loss(model, x, x_hat, aux_selection(pre, k_aux, dead));
}

double aux_loss(const SaeModel& model, const EmbeddingVector& x,
                const EmbeddingVector& x_hat, const SparseCode& aux_code) {
  // Residual reconstruction has no b_pre: r_hat = W_dec z_aux.
  EmbeddingVector r_hat(model.d, 0.0);
  for (size_t t = 0; t < aux_code.indices.size(); ++t) {
    const double* col = model.w_dec.data() + static_cast<int64_t>(aux_code.indices[t]) * model.d;
    const double c = aux_code.coeffs[t];
    for (int64_t j = 0; j < model.d; ++j) r_hat[j] += c * col[j];
  }
  double acc = 0.0;
  for (int64_t j = 0; j < model.d; ++j) {
    const double e = (x[j] - x_hat[j]) - r_hat[j];
    acc += e * e;
  }
  return acc;
}

LossBreakdown total_loss(const SaeModel& model, const EmbeddingVector& x,
                         const TrainConfig& cfg, const DeadMask& dead) {
  const std::vector<double> pre = encoder_preactivations(model, x);
  const SparseCode code = top_k_select(pre, cfg.k);
  const EmbeddingVector x_hat = decode(model, code);

  LossBreakdown loss;
  loss.mse = mse_loss(x, x_hat);
  loss.residual_norm = std::sqrt(loss.mse);
  if (cfg.alpha != 0.0 && cfg.k_aux > 0) {
    const DeadMask& sel_mask = cfg.masked_aux ? dead : DeadMask::all(model.m);
    const SparseCode aux_code = aux_selection(pre, cfg.k_aux, sel_mask);
    loss.aux = aux_loss(model, x, x_hat, aux_code);
  }
  loss.total = loss.mse + cfg.alpha * loss.aux;
  return loss;
}

VectorGradients loss_gradients(const SaeModel& model, const EmbeddingVector& x,
                               const TrainConfig& cfg, const DeadMask& dead) {
  const std::vector<double> pre = encoder_preactivations(model, x);
  const SparseCode code = top_k_select(pre, cfg.k);
  const EmbeddingVector x_hat = decode(model, code);
  const int64_t d = model.d;

  VectorGradients out;
  out.code = code;
  out.grads = GradientSet::zeros(d, model.m);

  std::vector<double> r(d);  // x - x_hat
  for (int64_t j = 0; j < d; ++j) r[j] = x[j] - x_hat[j];

  const bool use_aux = cfg.alpha != 0.0 && cfg.k_aux > 0;
  SparseCode aux_code;
  aux_code.m = static_cast<uint32_t>(model.m);
  if (use_aux) {
    const DeadMask sel_mask = cfg.masked_aux ? dead : DeadMask::all(model.m);
    aux_code = aux_selection(pre, cfg.k_aux, sel_mask);
  }
  out.aux_code = aux_code;

  std::vector<double> q(d);  // r - r_hat, the aux residual
  if (use_aux) {
    for (int64_t j = 0; j < d; ++j) q[j] = r[j];
    for (size_t t = 0; t < aux_code.indices.size(); ++t) {
      const double* col = model.w_dec.data() + static_cast<int64_t>(aux_code.indices[t]) * d;
      const double c = aux_code.coeffs[t];
      for (int64_t j = 0; j < d; ++j) q[j] -= c * col[j];
    }
  } else {
    std::fill(q.begin(), q.end(), 0.0);
  }

  LossBreakdown loss;
  loss.mse = std::inner_product(r.begin(), r.end(), r.begin(), 0.0);
  loss.residual_norm = std::sqrt(loss.mse);
  loss.aux = use_aux ? std::inner_product(q.begin(), q.end(), q.begin(), 0.0) : 0.0;
  loss.total = loss.mse + cfg.alpha * loss.aux;
  out.loss = loss;

  // dL/dx_hat = -(2r + 2*alpha*q): both the mse term and, through the aux
  // residual r = x - x_hat, the aux term flow through the reconstruction.
  std::vector<double> g(d);
  for (int64_t j = 0; j < d; ++j) g[j] = 2.0 * r[j] + 2.0 * cfg.alpha * q[j];

  GradientSet& grads = out.grads;

  // Pre-activation gradients per selected latent (selection held fixed).
  // Main latent i: dL/dpre_i = dot(dec_col(i), -g).
  // Aux latent i:  dL/dpre_i = dot(dec_col(i), -2*alpha*q).
  // A latent can appear in both selections; contributions add.
  std::vector<std::pair<uint32_t, double>> pre_grads;
  pre_grads.reserve(code.nnz() + aux_code.nnz());

  for (size_t t = 0; t < code.indices.size(); ++t) {
    const uint32_t i = code.indices[t];
    const double* col = model.w_dec.data() + static_cast<int64_t>(i) * d;
    double gp = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      grads.w_dec[static_cast<int64_t>(i) * d + j] += -g[j] * code.coeffs[t];
      gp += col[j] * -g[j];
    }
    pre_grads.emplace_back(i, gp);
  }
  for (size_t t = 0; t < aux_code.indices.size(); ++t) {
    const uint32_t i = aux_code.indices[t];
    const double* col = model.w_dec.data() + static_cast<int64_t>(i) * d;
    double gp = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      grads.w_dec[static_cast<int64_t>(i) * d + j] += -2.0 * cfg.alpha * q[j] * aux_code.coeffs[t];
      gp += col[j] * -2.0 * cfg.alpha * q[j];
    }
    pre_grads.emplace_back(i, gp);
  }

  // pre_i = dot(w_enc_row(i), x - b_pre) + b_enc_i
  std::vector<double> centered(d);
  for (int64_t j = 0; j < d; ++j) centered[j] = x[j] - model.b_pre[j];
  for (const auto& [i, gp] : pre_grads) {
    for (int64_t j = 0; j < d; ++j) grads.w_enc[static_cast<int64_t>(i) * d + j] += gp * centered[j];
    grads.b_enc[i] += gp;
  }

  // b_pre enters the decoder output (+) and every pre-activation (-).
  for (int64_t j = 0; j < d; ++j) grads.b_pre[j] = -g[j];
  for (const auto& [i, gp] : pre_grads) {
    const double* row = model.w_enc.data() + static_cast<int64_t>(i) * d;
    for (int64_t j = 0; j < d; ++j) grads.b_pre[j] -= gp * row[j];
  }

  return out;
}

}  // namespace attrsae
