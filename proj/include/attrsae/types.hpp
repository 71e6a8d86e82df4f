// Core value types shared by every module.
#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace attrsae {

// Error taxonomy. The CLI maps kinds onto exit codes:
// usage/config errors -> 2, data/format errors -> 3, numerical failures -> 4.
enum class ErrKind {
  DimensionMismatch,
  NonFiniteValue,
  EmptyBatch,
  InvalidConfig,
  NonFiniteGradient,
  NonFiniteLoss,
  IoError,
  BadMagic,
  TruncatedPayload,
  UnsupportedVersion,
  ConfigParseError,
};

const char* errkind_name(ErrKind k);

class Error : public std::runtime_error {
 public:
  Error(ErrKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrKind kind() const { return kind_; }

 private:
  ErrKind kind_;
};

// Dense embedding vector of length d.
using EmbeddingVector = std::vector<double>;

// Row-major n x d matrix of embedding vectors.
struct EmbeddingBatch {
  int64_t n = 0;
  int64_t d = 0;
  std::vector<double> data;  // n * d, row-major

  EmbeddingBatch() = default;
  EmbeddingBatch(int64_t rows, int64_t dim)
      : n(rows), d(dim), data(static_cast<size_t>(rows) * static_cast<size_t>(dim), 0.0) {}

  std::span<const double> row(int64_t i) const {
    return {data.data() + i * d, static_cast<size_t>(d)};
  }
  std::span<double> row(int64_t i) { return {data.data() + i * d, static_cast<size_t>(d)}; }
  EmbeddingVector row_vec(int64_t i) const {
    auto r = row(i);
    return EmbeddingVector(r.begin(), r.end());
  }

  // Throws DimensionMismatch on ragged input, EmptyBatch on zero rows.
  static EmbeddingBatch from_rows(const std::vector<EmbeddingVector>& rows);
};

// Sparse nonnegative activation in an m-dimensional latent space. Zeros are
// elided: only strictly positive coefficients are stored, indices sorted
// ascending. With m ~ 32768 and k ~ 128 a dense layout would waste two
// orders of magnitude of memory.
struct SparseCode {
  std::vector<uint32_t> indices;
  std::vector<double> coeffs;
  uint32_t m = 0;

  size_t nnz() const { return indices.size(); }
  bool empty() const { return indices.empty(); }

  // Structural validator. `k` < 0 skips the nnz bound. Producers call this
  // in debug builds; it throws std::logic_error since a violation is an
  // internal bug, not bad user input.
  void check(int64_t k = -1) const;
};

// Autoencoder parameters. b_pre is a single vector shared between the
// encoder subtraction and the decoder addition.
//
// Storage precision: every entry is kept exactly representable in IEEE-754
// binary32 (the checkpoint payload type) by the code paths that produce
// trained models; arithmetic on them runs in binary64 throughout.
struct SaeModel {
  int64_t d = 0;
  int64_t m = 0;
  std::vector<double> w_enc;  // m x d, row-major; encoder row i at [i*d, (i+1)*d)
  std::vector<double> b_enc;  // m
  std::vector<double> w_dec;  // d x m, stored column-contiguous: column j at [j*d, (j+1)*d)
  std::vector<double> b_pre;  // d

  std::span<const double> enc_row(int64_t i) const {
    return {w_enc.data() + i * d, static_cast<size_t>(d)};
  }
  std::span<double> enc_row(int64_t i) { return {w_enc.data() + i * d, static_cast<size_t>(d)}; }
  std::span<const double> dec_col(int64_t j) const {
    return {w_dec.data() + j * d, static_cast<size_t>(d)};
  }
  std::span<double> dec_col(int64_t j) { return {w_dec.data() + j * d, static_cast<size_t>(d)}; }

  bool shapes_ok() const;
  void check_finite() const;  // throws NonFiniteValue
};

struct TrainConfig {
  int64_t k = 128;
  int64_t k_aux = 256;
  double alpha = 0.1;
  double learning_rate = 4e-4;
  int64_t batch_size = 4096;
  int64_t total_steps = 10000;
  int64_t dead_window = 200;  // steps without firing before a neuron counts as dead
  uint64_t seed = 0;
  bool normalize_decoder = false;
  bool masked_aux = true;  // false: aux selection ignores the dead mask

  void validate(int64_t m) const;  // throws InvalidConfig
};

// Latent dimension used when none is requested: m = 16 * d.
inline constexpr int64_t kDefaultExpansion = 16;

struct LossBreakdown {
  double mse = 0.0;
  double aux = 0.0;
  double total = 0.0;           // mse + alpha * aux
  double residual_norm = 0.0;   // ||x - x_hat||
};

// Throws DimensionMismatch or NonFiniteValue (message carries the row index).
void validate_batch(const EmbeddingBatch& batch, int64_t expected_d);

// Round to the nearest binary32 value, widened back to double.
inline double round_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace attrsae
