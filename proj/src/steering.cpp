#include "attrsae/steering.hpp"

#include <cmath>
#include <utility>

namespace attrsae {

AttributeDirection extract_direction(const SaeModel& model,
                                     const EmbeddingVector& exemplar, int64_t k,
                                     std::string label) {
  AttributeDirection dir;
  dir.code = encode(model, exemplar, k);
  dir.label = std::move(label);
  double norm_sq = 0.0;
  for (double v : exemplar) norm_sq += v * v;
  dir.source_norm = std::sqrt(norm_sq);
  return dir;
}

AttributeDirection extract_direction(const SaeModel& model,
                                     const EmbeddingBatch& exemplars, int64_t k,
                                     std::string label, bool per_row_codes) {
  validate_batch(exemplars, model.d);
  EmbeddingVector mean(model.d, 0.0);
  for (int64_t i = 0; i < exemplars.n; ++i) {
    auto row = exemplars.row(i);
    for (int64_t j = 0; j < model.d; ++j) mean[j] += row[j];
  }
  for (double& v : mean) v /= static_cast<double>(exemplars.n);

  if (!per_row_codes || exemplars.n == 1)
    return extract_direction(model, mean, k, std::move(label));

  // Average the per-row codes over the union of their supports.
  std::vector<double> dense(model.m, 0.0);
  for (int64_t i = 0; i < exemplars.n; ++i) {
    const SparseCode code = encode(model, exemplars.row_vec(i), k);
    for (size_t t = 0; t < code.indices.size(); ++t)
      dense[code.indices[t]] += code.coeffs[t];
  }
  AttributeDirection dir;
  dir.label = std::move(label);
  dir.code.m = static_cast<uint32_t>(model.m);
  const double inv_n = 1.0 / static_cast<double>(exemplars.n);
  for (int64_t i = 0; i < model.m; ++i) {
    if (dense[i] == 0.0) continue;
    dir.code.indices.push_back(static_cast<uint32_t>(i));
    dir.code.coeffs.push_back(dense[i] * inv_n);
  }
  double norm_sq = 0.0;
  for (double v : mean) norm_sq += v * v;
  dir.source_norm = std::sqrt(norm_sq);
  return dir;
}

EmbeddingVector steering_offset(const SaeModel& model, const SteerRequest& request) {
  if (request.entries.empty())
    throw Error(ErrKind::InvalidConfig, "steering: request has no directions");
  for (const SteerEntry& entry : request.entries)
    if (!std::isfinite(entry.lambda))
      throw Error(ErrKind::InvalidConfig, "steering: non-finite lambda");
  EmbeddingVector offset(model.d, 0.0);
  for (const SteerEntry& entry : request.entries) {
    if (entry.lambda == 0.0) continue;  // exact no-op, cannot perturb a bit
    const SparseCode& code = entry.direction.code;
    if (code.m != static_cast<uint32_t>(model.m))
      throw Error(ErrKind::DimensionMismatch, "steering_offset: code latent space mismatch");
    for (size_t t = 0; t < code.indices.size(); ++t) {
      const double* col =
          model.w_dec.data() + static_cast<int64_t>(code.indices[t]) * model.d;
      const double c = entry.lambda * code.coeffs[t];
      for (int64_t j = 0; j < model.d; ++j) offset[j] += c * col[j];
    }
  }
  return offset;
}

EmbeddingVector manipulate(const SaeModel& model, const EmbeddingVector& x,
                           const SteerRequest& request) {
  if (static_cast<int64_t>(x.size()) != model.d)
    throw Error(ErrKind::DimensionMismatch, "manipulate: input length mismatch");
  if (request.entries.empty())
    throw Error(ErrKind::InvalidConfig, "steering: request has no directions");
  for (const SteerEntry& entry : request.entries)
    if (!std::isfinite(entry.lambda))
      throw Error(ErrKind::InvalidConfig, "steering: non-finite lambda");
  // All-zero-lambda requests return x verbatim: even adding 0.0 would
  // canonicalize a -0.0 coordinate and break bit-exact identity.
  bool active = false;
  for (const SteerEntry& entry : request.entries) active |= entry.lambda != 0.0;
  if (!active) return x;
  const EmbeddingVector offset = steering_offset(model, request);
  EmbeddingVector out(x);
  for (int64_t j = 0; j < model.d; ++j) out[j] += offset[j];
  return out;
}

std::vector<EmbeddingVector> sweep(const SaeModel& model, const EmbeddingVector& x,
                                   const AttributeDirection& direction,
                                   const std::vector<double>& lambdas) {
  std::vector<EmbeddingVector> out;
  out.reserve(lambdas.size());
  for (double lambda : lambdas) {
    SteerRequest req;
    req.entries.push_back({direction, lambda});
    out.push_back(manipulate(model, x, req));
  }
  return out;
}

}  // namespace attrsae
