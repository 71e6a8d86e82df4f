#include "attrsae/trainer.hpp"

#include <chrono>
#include <cmath>

#include "attrsae/rng.hpp"

namespace attrsae {

AdamState AdamState::zeros(int64_t size) {
  AdamState s;
  s.size = size;
  s.first_moment.assign(size, 0.0);
  s.second_moment.assign(size, 0.0);
  return s;
}

void adam_update(double* param, const double* grad, int64_t n, AdamState& state,
                 int64_t offset, double lr) {
  // Bias correction uses the step count already advanced by the caller.
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (int64_t i = 0; i < n; ++i) {
    double& m1 = state.first_moment[offset + i];
    double& m2 = state.second_moment[offset + i];
    m1 = state.beta1 * m1 + (1.0 - state.beta1) * grad[i];
    m2 = state.beta2 * m2 + (1.0 - state.beta2) * grad[i] * grad[i];
    const double m1_hat = m1 / bc1;
    const double m2_hat = m2 / bc2;
    param[i] -= lr * m1_hat / (std::sqrt(m2_hat) + state.epsilon);
  }
}

bool adam_step(SaeModel& model, const GradientSet& grads, AdamState& state,
               double lr, bool normalize_decoder) {
  grads.check_finite();
  const int64_t we = model.m * model.d;
  const int64_t be = model.m;
  const int64_t wd = model.d * model.m;
  state.step_count += 1;
  int64_t off = 0;
  adam_update(model.w_enc.data(), grads.w_enc.data(), we, state, off, lr);
  off += we;
  adam_update(model.b_enc.data(), grads.b_enc.data(), be, state, off, lr);
  off += be;
  adam_update(model.w_dec.data(), grads.w_dec.data(), wd, state, off, lr);
  off += wd;
  adam_update(model.b_pre.data(), grads.b_pre.data(), model.d, state, off, lr);

  bool renormalized = false;
  if (normalize_decoder) {
    for (int64_t j = 0; j < model.m; ++j) {
      auto col = model.dec_col(j);
      double norm_sq = 0.0;
      for (double v : col) norm_sq += v * v;
      const double norm = std::sqrt(norm_sq);
      if (norm > 0.0 && norm != 1.0) {
        for (double& v : col) v /= norm;
        renormalized = true;
      }
    }
  }

  // Keep every parameter entry representable in the checkpoint payload type.
  for (double& v : model.w_enc) v = round_f32(v);
  for (double& v : model.b_enc) v = round_f32(v);
  for (double& v : model.w_dec) v = round_f32(v);
  for (double& v : model.b_pre) v = round_f32(v);
  return renormalized;
}

ActivityTracker ActivityTracker::fresh(int64_t m, int64_t dead_window) {
  ActivityTracker t;
  t.steps_since_fire.assign(m, 0);
  t.dead_window = dead_window;
  return t;
}

void update_activity(ActivityTracker& tracker, const std::vector<SparseCode>& codes) {
  for (int64_t& c : tracker.steps_since_fire) c += 1;
  for (const SparseCode& code : codes)
    for (uint32_t i : code.indices) tracker.steps_since_fire[i] = 0;
}

DeadMask dead_mask(const ActivityTracker& tracker) {
  DeadMask mask;
  mask.flags.resize(tracker.steps_since_fire.size());
  for (size_t i = 0; i < mask.flags.size(); ++i)
    mask.flags[i] = tracker.steps_since_fire[i] >= tracker.dead_window ? 1 : 0;
  return mask;
}

SaeModel init_model(int64_t d, int64_t m, uint64_t seed,
                    const EmbeddingBatch& batch_sample) {
  if (d < 1 || m < 1) throw Error(ErrKind::InvalidConfig, "init_model: d and m must be >= 1");
  validate_batch(batch_sample, d);

  SaeModel model;
  model.d = d;
  model.m = m;
  model.b_pre.assign(d, 0.0);
  for (int64_t i = 0; i < batch_sample.n; ++i) {
    auto row = batch_sample.row(i);
    for (int64_t j = 0; j < d; ++j) model.b_pre[j] += row[j];
  }
  for (int64_t j = 0; j < d; ++j)
    model.b_pre[j] = round_f32(model.b_pre[j] / static_cast<double>(batch_sample.n));

  // Unit-norm random decoder columns; encoder starts as the transpose.
  model.w_dec.assign(static_cast<size_t>(d) * m, 0.0);
  Rng rng(mix_seed(seed, 0x5ae0));
  for (int64_t j = 0; j < m; ++j) {
    auto col = model.dec_col(j);
    double norm_sq = 0.0;
    do {
      norm_sq = 0.0;
      for (int64_t i = 0; i < d; ++i) {
        col[i] = rng.normal();
        norm_sq += col[i] * col[i];
      }
    } while (norm_sq == 0.0);
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (int64_t i = 0; i < d; ++i) col[i] = round_f32(col[i] * inv);
  }
  model.w_enc.assign(static_cast<size_t>(m) * d, 0.0);
  for (int64_t i = 0; i < m; ++i) {
    auto row = model.enc_row(i);
    auto col = model.dec_col(i);
    for (int64_t j = 0; j < d; ++j) row[j] = col[j];
  }
  model.b_enc.assign(m, 0.0);
  return model;
}

TrainReport train(const EmbeddingBatch& data, int64_t m, const TrainConfig& cfg,
                  const StepCallback& callback) {
  cfg.validate(m);
  if (data.n == 0) throw Error(ErrKind::EmptyBatch, "train: empty data");

  TrainReport report;
  report.model = init_model(data.d, m, cfg.seed, data);
  report.activity = ActivityTracker::fresh(m, cfg.dead_window);

  AdamState adam = AdamState::zeros(report.model.d * m * 2 + m + report.model.d);
  Rng sampler(mix_seed(cfg.seed, 0xba7c4));

  EmbeddingBatch minibatch(cfg.batch_size, data.d);
  report.records.reserve(cfg.total_steps);

  for (int64_t step = 0; step < cfg.total_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();

    for (int64_t b = 0; b < cfg.batch_size; ++b) {
      const int64_t src = static_cast<int64_t>(sampler.below(static_cast<uint64_t>(data.n)));
      auto from = data.row(src);
      auto to = minibatch.row(b);
      for (int64_t j = 0; j < data.d; ++j) to[j] = from[j];
    }

    const DeadMask dead = dead_mask(report.activity);
    BatchStep bs = batch_step(report.model, minibatch, cfg, dead);
    if (!std::isfinite(bs.loss.total))
      throw Error(ErrKind::NonFiniteLoss,
                  "non-finite loss at step " + std::to_string(step));

    const bool renorm = adam_step(report.model, bs.grads, adam, cfg.learning_rate,
                                  cfg.normalize_decoder);
    update_activity(report.activity, bs.codes);

    StepRecord rec;
    rec.step = step;
    rec.loss = bs.loss;
    rec.dead_count = dead_mask(report.activity).count();
    rec.mean_nnz = bs.mean_nnz;
    rec.decoder_renormalized = renorm;
    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    if (callback) callback(rec, report.model);
    report.records.push_back(rec);
  }
  return report;
}

}  // namespace attrsae
