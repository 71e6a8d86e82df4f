#include "attrsae/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "attrsae/rng.hpp"
#include "attrsae/sae.hpp"

namespace attrsae {
namespace {

// One atom index drawn from `weights` (entries already drawn are zeroed).
int64_t draw_weighted(Rng& rng, std::vector<double>& weights, double& total) {
  const double u = rng.uniform() * total;
  double cum = 0.0;
  int64_t last_positive = -1;
  for (size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    cum += weights[i];
    last_positive = static_cast<int64_t>(i);
    if (u < cum) break;
  }
  // last_positive also covers u landing on the rounding slack past the sum.
  const int64_t pick = last_positive;
  total -= weights[pick];
  weights[pick] = 0.0;
  return pick;
}

}  // namespace

PlantedDictionary gen_dictionary(int64_t d, int64_t p, double skew, uint64_t seed,
                                 bool orthonormalize) {
  if (d < 1 || p < 1) throw Error(ErrKind::InvalidConfig, "gen_dictionary: d and p must be >= 1");
  if (orthonormalize && p > d)
    throw Error(ErrKind::InvalidConfig, "gen_dictionary: orthonormal atoms need p <= d");
  if (skew < 0.0) throw Error(ErrKind::InvalidConfig, "gen_dictionary: skew must be >= 0");

  PlantedDictionary dict;
  dict.d = d;
  dict.p = p;
  dict.seed = seed;
  dict.atoms.assign(static_cast<size_t>(d) * p, 0.0);

  Rng rng(mix_seed(seed, 0xd1c7));
  for (int64_t j = 0; j < p; ++j) {
    double* col = dict.atoms.data() + j * d;
    double norm_sq = 0.0;
    do {
      norm_sq = 0.0;
      for (int64_t i = 0; i < d; ++i) {
        col[i] = rng.normal();
        norm_sq += col[i] * col[i];
      }
    } while (norm_sq == 0.0);
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (int64_t i = 0; i < d; ++i) col[i] *= inv;
  }

  if (orthonormalize) {
    // Modified Gram-Schmidt with re-normalization.
    for (int64_t j = 0; j < p; ++j) {
      double* col = dict.atoms.data() + j * d;
      for (int64_t prev = 0; prev < j; ++prev) {
        const double* q = dict.atoms.data() + prev * d;
        double proj = 0.0;
        for (int64_t i = 0; i < d; ++i) proj += q[i] * col[i];
        for (int64_t i = 0; i < d; ++i) col[i] -= proj * q[i];
      }
      double norm_sq = 0.0;
      for (int64_t i = 0; i < d; ++i) norm_sq += col[i] * col[i];
      const double inv = 1.0 / std::sqrt(norm_sq);
      for (int64_t i = 0; i < d; ++i) col[i] *= inv;
    }
  }

  dict.offset.resize(d);
  const double offset_scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (int64_t i = 0; i < d; ++i) dict.offset[i] = rng.normal() * offset_scale;

  dict.frequencies.resize(p);
  double freq_sum = 0.0;
  for (int64_t j = 0; j < p; ++j) {
    dict.frequencies[j] = std::pow(static_cast<double>(j + 1), -skew);
    freq_sum += dict.frequencies[j];
  }
  for (double& f : dict.frequencies) f /= freq_sum;

  dict.max_abs_cos = 0.0;
  for (int64_t a = 0; a < p; ++a)
    for (int64_t b = a + 1; b < p; ++b) {
      const double* ca = dict.atoms.data() + a * d;
      const double* cb = dict.atoms.data() + b * d;
      double dot = 0.0;
      for (int64_t i = 0; i < d; ++i) dot += ca[i] * cb[i];
      dict.max_abs_cos = std::max(dict.max_abs_cos, std::abs(dot));
    }
  return dict;
}

SynthCorpus gen_corpus(const PlantedDictionary& dict, int64_t s, int64_t n,
                       double noise_sigma, double coeff_lo, double coeff_hi,
                       uint64_t seed) {
  if (s < 1 || s > dict.p)
    throw Error(ErrKind::InvalidConfig, "gen_corpus: need 1 <= s <= p");
  if (n < 1) throw Error(ErrKind::InvalidConfig, "gen_corpus: n must be >= 1");
  if (!(coeff_lo > 0.0) || !(coeff_hi >= coeff_lo))
    throw Error(ErrKind::InvalidConfig, "gen_corpus: need 0 < coeff_lo <= coeff_hi");
  if (noise_sigma < 0.0)
    throw Error(ErrKind::InvalidConfig, "gen_corpus: noise_sigma must be >= 0");

  const int64_t d = dict.d;
  SynthCorpus corpus;
  corpus.batch = EmbeddingBatch(n, d);
  corpus.truth.resize(static_cast<size_t>(n));

  // Each row has its own derived seed, so the output is independent of how
  // rows are scheduled across workers.
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int64_t row = 0; row < n; ++row) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(row) + 1));

    std::vector<double> weights = dict.frequencies;
    double total = 0.0;
    for (double w : weights) total += w;

    std::vector<std::pair<uint32_t, double>> picks;
    picks.reserve(static_cast<size_t>(s));
    for (int64_t t = 0; t < s; ++t) {
      const int64_t atom = draw_weighted(rng, weights, total);
      picks.emplace_back(static_cast<uint32_t>(atom), 0.0);
    }
    for (auto& pick : picks) pick.second = rng.uniform(coeff_lo, coeff_hi);
    std::sort(picks.begin(), picks.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    auto out = corpus.batch.row(row);
    for (int64_t i = 0; i < d; ++i) out[i] = dict.offset[i];
    for (const auto& [atom, coeff] : picks) {
      const double* col = dict.atoms.data() + static_cast<int64_t>(atom) * d;
      for (int64_t i = 0; i < d; ++i) out[i] += coeff * col[i];
    }
    if (noise_sigma > 0.0)
      for (int64_t i = 0; i < d; ++i) out[i] += noise_sigma * rng.normal();

    SparseCode truth;
    truth.m = static_cast<uint32_t>(dict.p);
    for (const auto& [atom, coeff] : picks) {
      truth.indices.push_back(atom);
      truth.coeffs.push_back(coeff);
    }
    corpus.truth[row] = std::move(truth);
  }
  return corpus;
}

RecoveryReport match_atoms(const SaeModel& model, const PlantedDictionary& dict,
                           double threshold, bool signed_cos) {
  if (model.d != dict.d)
    throw Error(ErrKind::DimensionMismatch,
                "match_atoms: model d = " + std::to_string(model.d) + ", dictionary d = " +
                    std::to_string(dict.d));
  const int64_t p = dict.p;
  const int64_t m = model.m;

  // Cosines between unit atoms and (normalized) decoder columns.
  std::vector<double> cosines(static_cast<size_t>(p) * m, 0.0);
  for (int64_t j = 0; j < m; ++j) {
    auto col = model.dec_col(j);
    double norm_sq = 0.0;
    for (double v : col) norm_sq += v * v;
    if (norm_sq == 0.0) continue;
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (int64_t a = 0; a < p; ++a) {
      const double* atom = dict.atoms.data() + a * dict.d;
      double dot = 0.0;
      for (int64_t i = 0; i < dict.d; ++i) dot += atom[i] * col[i];
      cosines[a * m + j] = dot * inv;
    }
  }

  auto score = [&](int64_t a, int64_t j) {
    const double c = cosines[a * m + j];
    return signed_cos ? c : std::abs(c);
  };

  RecoveryReport report;
  report.threshold = threshold;
  std::vector<bool> atom_used(p, false), col_used(m, false);
  const int64_t pairs = std::min(p, m);
  double cos_sum = 0.0;
  for (int64_t t = 0; t < pairs; ++t) {
    // Signed scores reach -1 exactly, so the sentinel must sit below it.
    double best = -std::numeric_limits<double>::infinity();
    int64_t best_a = -1, best_j = -1;
    for (int64_t a = 0; a < p; ++a) {
      if (atom_used[a]) continue;
      for (int64_t j = 0; j < m; ++j) {
        if (col_used[j]) continue;
        const double sc = score(a, j);
        if (sc > best) {
          best = sc;
          best_a = a;
          best_j = j;
        }
      }
    }
    atom_used[best_a] = true;
    col_used[best_j] = true;
    const double abs_cos = std::abs(cosines[best_a * m + best_j]);
    report.matching.push_back({best_a, best_j, abs_cos});
    cos_sum += abs_cos;
    // Recovery is judged on the matching score itself, so oriented matching
    // rejects sign-flipped columns even though their magnitude is reported.
    if (best >= threshold) report.recovered_count += 1;
  }
  if (!report.matching.empty())
    report.mean_abs_cosine = cos_sum / static_cast<double>(report.matching.size());
  return report;
}

double corpus_dead_fraction(const SaeModel& model, const EmbeddingBatch& batch,
                            int64_t k) {
  validate_batch(batch, model.d);
  std::vector<uint8_t> fired(model.m, 0);
  for (int64_t i = 0; i < batch.n; ++i) {
    const SparseCode code = encode(model, batch.row_vec(i), k);
    for (uint32_t idx : code.indices) fired[idx] = 1;
  }
  int64_t dead = 0;
  for (uint8_t f : fired) dead += (f == 0);
  return static_cast<double>(dead) / static_cast<double>(model.m);
}

double disentanglement_score(const SaeModel& model, const PlantedDictionary& dict,
                             int64_t probe_count, int64_t k, uint64_t seed) {
  if (probe_count < 1)
    throw Error(ErrKind::InvalidConfig, "disentanglement_score: probe_count must be >= 1");
  const RecoveryReport report = match_atoms(model, dict);
  std::vector<int64_t> matched_col(dict.p, -1);
  for (const MatchedPair& pair : report.matching) matched_col[pair.atom] = pair.latent;

  double purity_sum = 0.0;
  int64_t probes = 0;
  for (int64_t a = 0; a < dict.p; ++a) {
    Rng rng(mix_seed(seed, 0x9b0be5ull + static_cast<uint64_t>(a)));
    const double* atom = dict.atoms.data() + a * dict.d;
    for (int64_t t = 0; t < probe_count; ++t) {
      const double coeff = rng.uniform(0.5, 2.0);
      EmbeddingVector probe(dict.offset.begin(), dict.offset.end());
      for (int64_t i = 0; i < dict.d; ++i) probe[i] += coeff * atom[i];
      const SparseCode code = encode(model, probe, k);
      probes += 1;
      if (code.empty() || matched_col[a] < 0) continue;
      bool hit = false;
      for (uint32_t idx : code.indices)
        if (static_cast<int64_t>(idx) == matched_col[a]) hit = true;
      if (hit) purity_sum += 1.0 / static_cast<double>(code.nnz());
    }
  }
  return purity_sum / static_cast<double>(probes);
}

}  // namespace attrsae
