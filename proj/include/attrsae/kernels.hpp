// Batched forward/backward kernels. The parallel path computes independent
// per-row records and accumulates them serially in row order, so results are
// bit-identical for any thread count; batch_step_serial is a separate
// reference implementation kept for testing.
#pragma once

#include <cstdint>
#include <vector>

#include "attrsae/sae.hpp"
#include "attrsae/types.hpp"

namespace attrsae {

// Number of OpenMP workers that will actually be used, honouring the
// ATTRSAE_THREADS environment cap. Returns 1 in serial builds.
int worker_count();

struct BatchStep {
  LossBreakdown loss;  // batch means
  GradientSet grads;   // mean over rows
  std::vector<SparseCode> codes;
  double mean_nnz = 0.0;
};

BatchStep batch_step(const SaeModel& model, const EmbeddingBatch& batch,
                     const TrainConfig& cfg, const DeadMask& dead);

BatchStep batch_step_serial(const SaeModel& model, const EmbeddingBatch& batch,
                            const TrainConfig& cfg, const DeadMask& dead);

// Encode every row (parallel over rows).
std::vector<SparseCode> encode_batch(const SaeModel& model,
                                     const EmbeddingBatch& batch, int64_t k);

// Decode every code into a batch (parallel over rows).
EmbeddingBatch decode_batch(const SaeModel& model,
                            const std::vector<SparseCode>& codes);

}  // namespace attrsae
