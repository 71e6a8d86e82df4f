#include "attrsae/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace attrsae {

int worker_count() {
#ifdef _OPENMP
  int n = omp_get_max_threads();
#else
  int n = 1;
#endif
  if (const char* env = std::getenv("ATTRSAE_THREADS")) {
    char* end = nullptr;
    long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1 && cap < n) n = static_cast<int>(cap);
  }
  return n < 1 ? 1 : n;
}

// Rows are processed independently (possibly in parallel), then reduced
// serially in row order; the result is bit-identical for any worker count.
// Rows are materialized one chunk at a time: per-row gradients are dense, so
// holding the whole batch at once would cost n * (2*m*d + m + d) doubles and
// push the reduction out of cache.
BatchStep batch_step(const SaeModel& model, const EmbeddingBatch& batch,
                     const TrainConfig& cfg, const DeadMask& dead) {
  // With a single worker the chunked materialization below buys nothing;
  // the immediate per-row reduction is the same computation in the same
  // order, so this changes timing only.
  if (worker_count() == 1) return batch_step_serial(model, batch, cfg, dead);

  validate_batch(batch, model.d);
  cfg.validate(model.m);

  const int64_t n = batch.n;
  constexpr int64_t kChunkRows = 64;
  std::vector<VectorGradients> rows(
      static_cast<size_t>(std::min(n, kChunkRows)));

  BatchStep out;
  out.grads = GradientSet::zeros(model.d, model.m);
  out.codes.reserve(static_cast<size_t>(n));
  double nnz_sum = 0.0;
  for (int64_t base = 0; base < n; base += kChunkRows) {
    const int64_t count = std::min(kChunkRows, n - base);

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(worker_count())
#endif
    for (int64_t i = 0; i < count; ++i) {
      rows[i] = loss_gradients(model, batch.row_vec(base + i), cfg, dead);
    }

    for (int64_t i = 0; i < count; ++i) {
      out.loss.mse += rows[i].loss.mse;
      out.loss.aux += rows[i].loss.aux;
      out.loss.total += rows[i].loss.total;
      out.loss.residual_norm += rows[i].loss.residual_norm;
      out.grads.accumulate(rows[i].grads);
      nnz_sum += static_cast<double>(rows[i].code.nnz());
      out.codes.push_back(std::move(rows[i].code));
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  out.loss.mse *= inv_n;
  out.loss.aux *= inv_n;
  out.loss.total *= inv_n;
  out.loss.residual_norm *= inv_n;
  out.grads.scale(inv_n);
  out.mean_nnz = nnz_sum * inv_n;
  return out;
}

BatchStep batch_step_serial(const SaeModel& model, const EmbeddingBatch& batch,
                            const TrainConfig& cfg, const DeadMask& dead) {
  validate_batch(batch, model.d);
  cfg.validate(model.m);

  BatchStep out;
  out.grads = GradientSet::zeros(model.d, model.m);
  double nnz_sum = 0.0;
  for (int64_t i = 0; i < batch.n; ++i) {
    VectorGradients vg = loss_gradients(model, batch.row_vec(i), cfg, dead);
    out.loss.mse += vg.loss.mse;
    out.loss.aux += vg.loss.aux;
    out.loss.total += vg.loss.total;
    out.loss.residual_norm += vg.loss.residual_norm;
    out.grads.accumulate(vg.grads);
    nnz_sum += static_cast<double>(vg.code.nnz());
    out.codes.push_back(std::move(vg.code));
  }
  const double inv_n = 1.0 / static_cast<double>(batch.n);
  out.loss.mse *= inv_n;
  out.loss.aux *= inv_n;
  out.loss.total *= inv_n;
  out.loss.residual_norm *= inv_n;
  out.grads.scale(inv_n);
  out.mean_nnz = nnz_sum * inv_n;
  return out;
}

std::vector<SparseCode> encode_batch(const SaeModel& model,
                                     const EmbeddingBatch& batch, int64_t k) {
  validate_batch(batch, model.d);
  const int64_t n = batch.n;
  std::vector<SparseCode> codes(static_cast<size_t>(n));
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(worker_count())
#endif
  for (int64_t i = 0; i < n; ++i) {
    codes[i] = encode(model, batch.row_vec(i), k);
  }
  return codes;
}

EmbeddingBatch decode_batch(const SaeModel& model,
                            const std::vector<SparseCode>& codes) {
  if (codes.empty()) throw Error(ErrKind::EmptyBatch, "decode_batch: no codes");
  // Validate up front: throwing from inside the parallel region would abort.
  for (const SparseCode& c : codes)
    if (c.m != static_cast<uint32_t>(model.m))
      throw Error(ErrKind::DimensionMismatch, "decode_batch: code latent space mismatch");
  const int64_t n = static_cast<int64_t>(codes.size());
  EmbeddingBatch out(n, model.d);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(worker_count())
#endif
  for (int64_t i = 0; i < n; ++i) {
    const EmbeddingVector x = decode(model, codes[i]);
    auto row = out.row(i);
    for (int64_t j = 0; j < model.d; ++j) row[j] = x[j];
  }
  return out;
}

}  // namespace attrsae
