// Latent-direction extraction and embedding manipulation.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attrsae/sae.hpp"
#include "attrsae/types.hpp"

namespace attrsae {

// Sparse latent code of an attribute exemplar, reusable across targets.
struct AttributeDirection {
  SparseCode code;
  std::string label;
  double source_norm = 0.0;  // norm of the originating exemplar, for diagnostics
};

struct SteerEntry {
  AttributeDirection direction;
  double lambda = 0.0;
};

struct SteerRequest {
  std::vector<SteerEntry> entries;
};

AttributeDirection extract_direction(const SaeModel& model,
                                     const EmbeddingVector& exemplar, int64_t k,
                                     std::string label = "");

// Multi-row exemplar files: encode the per-coordinate mean row by default;
// with per_row_codes, encode each row and average the codes instead.
AttributeDirection extract_direction(const SaeModel& model,
                                     const EmbeddingBatch& exemplars, int64_t k,
                                     std::string label = "",
                                     bool per_row_codes = false);

// sum_j lambda_j * W_dec code_j; entries with lambda == 0 contribute nothing
// (skipped outright, so they cannot perturb a single bit).
EmbeddingVector steering_offset(const SaeModel& model, const SteerRequest& request);

// x + steering_offset, coordinate by coordinate.
EmbeddingVector manipulate(const SaeModel& model, const EmbeddingVector& x,
                           const SteerRequest& request);

// One manipulated copy of x per lambda, with the same direction.
std::vector<EmbeddingVector> sweep(const SaeModel& model, const EmbeddingVector& x,
                                   const AttributeDirection& direction,
                                   const std::vector<double>& lambdas);

}  // namespace attrsae
