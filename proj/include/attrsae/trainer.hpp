// Adam optimizer, latent activity tracking and the training loop.
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "attrsae/kernels.hpp"
#include "attrsae/sae.hpp"
#include "attrsae/types.hpp"

namespace attrsae {

struct AdamState {
  int64_t size = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  int64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState zeros(int64_t size);
};

// One Adam update of `param` in place given `grad`; moments live in `state`
// starting at `offset`. Exposed separately so scalar cases can be tested.
void adam_update(double* param, const double* grad, int64_t n, AdamState& state,
                 int64_t offset, double lr);

// Applies one optimizer step to every parameter tensor; throws
// NonFiniteGradient first if any gradient entry is NaN/Inf. Parameter entries
// are rounded to binary32-representable values afterwards so checkpoints
// round-trip bit-exactly. When normalize_decoder is set, decoder columns are
// rescaled to unit norm after the update; returns true if any column moved.
bool adam_step(SaeModel& model, const GradientSet& grads, AdamState& state,
               double lr, bool normalize_decoder = false);

// Steps-since-last-fire counters behind the dead-latent definition.
struct ActivityTracker {
  std::vector<int64_t> steps_since_fire;
  int64_t dead_window = 200;

  static ActivityTracker fresh(int64_t m, int64_t dead_window);
};

// Bumps all counters, then zeroes those of latents present in any code.
void update_activity(ActivityTracker& tracker,
                     const std::vector<SparseCode>& codes);

// flags[i] = 1 iff latent i has not fired for >= dead_window steps.
DeadMask dead_mask(const ActivityTracker& tracker);

struct StepRecord {
  int64_t step = 0;
  LossBreakdown loss;
  int64_t dead_count = 0;
  double mean_nnz = 0.0;
  double wall_ms = 0.0;
  bool decoder_renormalized = false;
};

struct TrainReport {
  std::vector<StepRecord> records;
  SaeModel model;
  ActivityTracker activity;
};

// b_pre = mean of a data sample, W_dec columns random unit-norm,
// W_enc = W_dec^T, b_enc = 0. Entries binary32-representable.
SaeModel init_model(int64_t d, int64_t m, uint64_t seed,
                    const EmbeddingBatch& batch_sample);

// Called after each step with the record and the updated model, so callers
// can log progress and write periodic checkpoints.
using StepCallback = std::function<void(const StepRecord&, const SaeModel&)>;

// Uniform-with-replacement batch sampling; throws NonFiniteLoss and aborts
// the run if the loss or any gradient stops being finite.
TrainReport train(const EmbeddingBatch& data, int64_t m, const TrainConfig& cfg,
                  const StepCallback& callback = nullptr);

}  // namespace attrsae
