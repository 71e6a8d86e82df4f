// Planted-dictionary synthetic benchmark: corpus generation, atom matching
// and recovery/disentanglement metrics.
#pragma once

#include <cstdint>
#include <vector>

#include "attrsae/types.hpp"

namespace attrsae {

struct PlantedDictionary {
  int64_t d = 0;  // embedding dimension
  int64_t p = 0;  // number of atoms
  std::vector<double> atoms;        // d x p, column-contiguous, unit columns
  std::vector<double> offset;       // d
  std::vector<double> frequencies;  // p, sums to 1
  uint64_t seed = 0;
  double max_abs_cos = 0.0;  // coherence of the drawn atoms
};

// Atoms are normalized Gaussian directions (optionally orthonormalized),
// frequencies proportional to (i + 1)^-skew.
PlantedDictionary gen_dictionary(int64_t d, int64_t p, double skew, uint64_t seed,
                                 bool orthonormalize = false);

struct SynthCorpus {
  EmbeddingBatch batch;
  std::vector<SparseCode> truth;  // planted supports and coefficients
};

// Each row: s distinct atoms drawn by frequency without replacement,
// coefficients uniform in [coeff_lo, coeff_hi], Gaussian noise added.
// Row generation is seeded per row, so results do not depend on threading.
SynthCorpus gen_corpus(const PlantedDictionary& dict, int64_t s, int64_t n,
                       double noise_sigma, double coeff_lo, double coeff_hi,
                       uint64_t seed);

struct MatchedPair {
  int64_t atom = -1;
  int64_t latent = -1;
  double abs_cosine = 0.0;
};

struct RecoveryReport {
  std::vector<MatchedPair> matching;  // best-first greedy order
  double mean_abs_cosine = 0.0;       // over matched pairs only
  int64_t recovered_count = 0;        // pairs at or above threshold
  double threshold = 0.9;
  double dead_fraction = 0.0;  // filled by callers that have corpus codes
};

// Greedy one-to-one assignment of atoms to decoder columns by descending
// |cosine| (cosine when signed_cos). Greedy is the shipped matcher; tests
// compare it against exhaustive assignment on small instances.
RecoveryReport match_atoms(const SaeModel& model, const PlantedDictionary& dict,
                           double threshold = 0.9, bool signed_cos = false);

// Fraction of latents that never activate in the top-k codes of the batch.
double corpus_dead_fraction(const SaeModel& model, const EmbeddingBatch& batch,
                            int64_t k);

// Mean support purity: probe_count single-atom probes per atom are encoded,
// and each probe scores the fraction of its active latents that coincide
// with the learned column matched to the probed atom.
double disentanglement_score(const SaeModel& model, const PlantedDictionary& dict,
                             int64_t probe_count, int64_t k, uint64_t seed);

}  // namespace attrsae
