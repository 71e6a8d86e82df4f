// Core autoencoder math: encode, decode, losses, analytic gradients.
#pragma once

#include <cstdint>
#include <vector>

#include "attrsae/types.hpp"

namespace attrsae {

// Per-latent activity flags; flags[i] != 0 means latent i counts as dead.
struct DeadMask {
  std::vector<uint8_t> flags;

  static DeadMask none(int64_t m) { return DeadMask{std::vector<uint8_t>(m, 0)}; }
  static DeadMask all(int64_t m) { return DeadMask{std::vector<uint8_t>(m, 1)}; }
  int64_t count() const {
    int64_t c = 0;
    for (uint8_t f : flags) c += (f != 0);
    return c;
  }
};

// Gradients with the same layout as SaeModel.
struct GradientSet {
  int64_t d = 0, m = 0;
  std::vector<double> w_enc;  // m x d, row-major
  std::vector<double> b_enc;  // m
  std::vector<double> w_dec;  // d x m, column-contiguous
  std::vector<double> b_pre;  // d

  static GradientSet zeros(int64_t d, int64_t m);
  void accumulate(const GradientSet& other);
  void scale(double s);
  void check_finite() const;  // throws NonFiniteGradient
};

// Keeps the k largest strictly positive entries (ties broken toward the
// lower index); fewer than k survive when positives run out.
SparseCode top_k_select(const std::vector<double>& values, int64_t k);

// Same selection restricted to latents with mask.flags[i] != 0.
SparseCode top_k_select_masked(const std::vector<double>& values, int64_t k,
                               const DeadMask& mask);

// pre[i] = dot(w_enc[i], x - b_pre) + b_enc[i]
std::vector<double> encoder_preactivations(const SaeModel& model,
                                           const EmbeddingVector& x);

SparseCode encode(const SaeModel& model, const EmbeddingVector& x, int64_t k);

// x_hat = W_dec z + b_pre
EmbeddingVector decode(const SaeModel& model, const SparseCode& code);

EmbeddingVector reconstruct(const SaeModel& model, const EmbeddingVector& x,
                            int64_t k);

// Summed squared error over coordinates.
double mse_loss(const EmbeddingVector& x, const EmbeddingVector& x_hat);

// Top-k_aux over the pre-activations of dead latents (ReLU applied first).
SparseCode aux_selection(const SaeModel& model, const EmbeddingVector& x,
                         const DeadMask& dead, int64_t k_aux);

// Same, with the pre-activations already computed.
SparseCode aux_selection(const std::vector<double>& preactivations,
                         int64_t k_aux, const DeadMask& dead);

// || (x - x_hat) - W_dec z_aux ||^2 where z_aux = aux_selection over the
// pre-activations of x; the residual reconstruction deliberately has no
// b_pre term, and an empty selection leaves ||r||^2.
double aux_loss(const SaeModel& model, const EmbeddingVector& x,
                const EmbeddingVector& x_hat, const DeadMask& dead, int64_t k_aux);

// Same, with the selection already made (saves recomputing pre-activations).
double aux_loss(const SaeModel& model, const EmbeddingVector& x,
                const EmbeddingVector& x_hat, const SparseCode& aux_code);

LossBreakdown total_loss(const SaeModel& model, const EmbeddingVector& x,
                         const TrainConfig& cfg, const DeadMask& dead);

// Analytic gradients of the total single-vector loss with the top-k supports
// held fixed (straight-through through the selection).
struct VectorGradients {
  LossBreakdown loss;
  GradientSet grads;
  SparseCode code;      // main selection
  SparseCode aux_code;  // aux selection (may be empty)
};

VectorGradients loss_gradients(const SaeModel& model, const EmbeddingVector& x,
                               const TrainConfig& cfg, const DeadMask& dead);

}  // namespace attrsae
