#include "attrsae/types.hpp"

#include <cmath>
#include <cstdint>

namespace attrsae {

const char* errkind_name(ErrKind k) {
  switch (k) {
    case ErrKind::DimensionMismatch: return "DimensionMismatch";
    case ErrKind::NonFiniteValue: return "NonFiniteValue";
    case ErrKind::EmptyBatch: return "EmptyBatch";
    case ErrKind::InvalidConfig: return "InvalidConfig";
    case ErrKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrKind::IoError: return "IoError";
    case ErrKind::BadMagic: return "BadMagic";
    case ErrKind::TruncatedPayload: return "TruncatedPayload";
    case ErrKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrKind::ConfigParseError: return "ConfigParseError";
  }
  return "Unknown";
}

EmbeddingBatch EmbeddingBatch::from_rows(const std::vector<EmbeddingVector>& rows) {
  if (rows.empty()) throw Error(ErrKind::EmptyBatch, "from_rows: no rows");
  const int64_t d = static_cast<int64_t>(rows.front().size());
  if (d == 0) throw Error(ErrKind::DimensionMismatch, "from_rows: zero-dimensional rows");
  EmbeddingBatch batch(static_cast<int64_t>(rows.size()), d);
  for (size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<int64_t>(rows[i].size()) != d)
      throw Error(ErrKind::DimensionMismatch,
                  "from_rows: row " + std::to_string(i) + " has length " +
                      std::to_string(rows[i].size()) + ", expected " + std::to_string(d));
    for (int64_t j = 0; j < d; ++j) batch.data[i * d + j] = rows[i][j];
  }
  return batch;
}

void SparseCode::check(int64_t k) const {
  if (indices.size() != coeffs.size())
    throw std::logic_error("SparseCode: index/coeff length mismatch");
  if (k >= 0 && static_cast<int64_t>(indices.size()) > k)
    throw std::logic_error("SparseCode: nnz exceeds k");
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= m) throw std::logic_error("SparseCode: index out of range");
    if (i > 0 && indices[i] <= indices[i - 1])
      throw std::logic_error("SparseCode: indices not strictly ascending");
    if (!(coeffs[i] > 0.0)) throw std::logic_error("SparseCode: non-positive coefficient");
    if (!std::isfinite(coeffs[i])) throw std::logic_error("SparseCode: non-finite coefficient");
  }
}

bool SaeModel::shapes_ok() const {
  return d > 0 && m > 0 && static_cast<int64_t>(w_enc.size()) == m * d &&
         static_cast<int64_t>(b_enc.size()) == m &&
         static_cast<int64_t>(w_dec.size()) == d * m &&
         static_cast<int64_t>(b_pre.size()) == d;
}

void SaeModel::check_finite() const {
  auto scan = [](const std::vector<double>& v, const char* name) {
    for (double x : v)
      if (!std::isfinite(x))
        throw Error(ErrKind::NonFiniteValue, std::string("non-finite entry in ") + name);
  };
  scan(w_enc, "w_enc");
  scan(b_enc, "b_enc");
  scan(w_dec, "w_dec");
  scan(b_pre, "b_pre");
}

void TrainConfig::validate(int64_t m) const {
  auto fail = [](const std::string& msg) { throw Error(ErrKind::InvalidConfig, msg); };
  if (k < 1) fail("k must be >= 1");
  if (m > 0 && k > m) fail("k exceeds latent count m");
  if (k_aux < 1) fail("k_aux must be >= 1");
  if (m > 0 && k_aux > m) fail("k_aux exceeds latent count m");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail("alpha must be finite and >= 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    fail("learning_rate must be finite and > 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (total_steps < 0) fail("total_steps must be >= 0");
  if (dead_window < 1) fail("dead_window must be >= 1");
}

void validate_batch(const EmbeddingBatch& batch, int64_t expected_d) {
  if (batch.n == 0) throw Error(ErrKind::EmptyBatch, "batch has no rows");
  if (batch.d != expected_d)
    throw Error(ErrKind::DimensionMismatch,
                "batch dimension " + std::to_string(batch.d) + ", expected " +
                    std::to_string(expected_d));
  for (int64_t i = 0; i < batch.n; ++i)
    for (double x : batch.row(i))
      if (!std::isfinite(x))
        throw Error(ErrKind::NonFiniteValue, "non-finite value in row " + std::to_string(i));
}

}  // namespace attrsae
