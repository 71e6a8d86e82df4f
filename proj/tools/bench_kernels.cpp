// Compares the OpenMP batch kernel against the serial reference and reports
// throughput, plus corpus generation speed. The two kernels must agree
// bit-for-bit; the benchmark aborts if they ever do not.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "attrsae/kernels.hpp"
#include "attrsae/synth.hpp"
#include "attrsae/trainer.hpp"

using namespace attrsae;

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
      .count();
}

bool identical(const GradientSet& a, const GradientSet& b) {
  return a.w_enc == b.w_enc && a.b_enc == b.b_enc && a.w_dec == b.w_dec &&
         a.b_pre == b.b_pre;
}

}  // namespace

int main(int argc, char** argv) {
  int64_t d = 64, m = 1024, n = 2048, k = 16, reps = 5;
  CLI::App app{"batch kernel benchmark: OpenMP vs serial reference"};
  app.add_option("--d", d, "embedding dimension");
  app.add_option("--m", m, "latent count");
  app.add_option("--n", n, "batch rows");
  app.add_option("--k", k, "active latents");
  app.add_option("--reps", reps, "repetitions per kernel");
  CLI11_PARSE(app, argc, argv);

  std::printf("workers=%d d=%lld m=%lld n=%lld k=%lld\n", worker_count(),
              static_cast<long long>(d), static_cast<long long>(m),
              static_cast<long long>(n), static_cast<long long>(k));

  const PlantedDictionary dict = gen_dictionary(d, std::min<int64_t>(m / 2, 4 * d), 1.0, 7);
  const SynthCorpus corpus = gen_corpus(dict, 3, n, 0.01, 0.5, 2.0, 7);
  const SaeModel model = init_model(d, m, 7, corpus.batch);

  TrainConfig cfg;
  cfg.k = k;
  cfg.k_aux = 2 * k;
  const DeadMask dead = DeadMask::none(m);

  auto t0 = std::chrono::steady_clock::now();
  const SynthCorpus timing_corpus = gen_corpus(dict, 3, 50000, 0.01, 0.5, 2.0, 8);
  std::printf("gen_corpus n=50000 ms=%.1f\n", ms_since(t0));

  BatchStep serial, parallel;
  double serial_ms = 0.0, parallel_ms = 0.0;
  for (int64_t r = 0; r < reps; ++r) {
    t0 = std::chrono::steady_clock::now();
    serial = batch_step_serial(model, corpus.batch, cfg, dead);
    serial_ms += ms_since(t0);

    t0 = std::chrono::steady_clock::now();
    parallel = batch_step(model, corpus.batch, cfg, dead);
    parallel_ms += ms_since(t0);

    if (!identical(serial.grads, parallel.grads) ||
        serial.loss.total != parallel.loss.total) {
      std::fprintf(stderr, "kernel mismatch: serial and parallel results differ\n");
      return 1;
    }
  }
  serial_ms /= static_cast<double>(reps);
  parallel_ms /= static_cast<double>(reps);
  std::printf("batch_step_serial ms=%.1f\n", serial_ms);
  std::printf("batch_step ms=%.1f speedup=%.2fx (bit-identical)\n", parallel_ms,
              serial_ms / parallel_ms);
  return 0;
}
