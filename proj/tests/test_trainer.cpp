#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "attrsae/synth.hpp"
#include "attrsae/trainer.hpp"
#include "test_util.hpp"

using namespace attrsae;
using testutil::random_batch;
using testutil::random_model;
using testutil::thrown_kind;

namespace {

void round_params(SaeModel& model) {
  for (double& v : model.w_enc) v = round_f32(v);
  for (double& v : model.b_enc) v = round_f32(v);
  for (double& v : model.w_dec) v = round_f32(v);
  for (double& v : model.b_pre) v = round_f32(v);
}

bool models_bit_equal(const SaeModel& a, const SaeModel& b) {
  return a.d == b.d && a.m == b.m && a.w_enc == b.w_enc && a.b_enc == b.b_enc &&
         a.w_dec == b.w_dec && a.b_pre == b.b_pre;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("adam_update reproduces the hand-computed two-step trace") {
  // Scalar parameter, lr 0.1: step 1 with grad 3, step 2 with grad -1.
  double w = 1.0;
  AdamState state = AdamState::zeros(1);

  state.step_count = 1;
  double g = 3.0;
  adam_update(&w, &g, 1, state, 0, 0.1);
  CHECK(w == doctest::Approx(0.9000000003333333).epsilon(1e-12));

  state.step_count = 2;
  g = -1.0;
  adam_update(&w, &g, 1, state, 0, 0.1);
  CHECK(w == doctest::Approx(0.8599781433169098).epsilon(1e-12));
}

TEST_CASE("adam_update with zero gradient leaves the parameter untouched") {
  double w = 0.625;  // binary32-representable
  AdamState state = AdamState::zeros(1);
  for (int t = 1; t <= 5; ++t) {
    state.step_count = t;
    const double g = 0.0;
    adam_update(&w, &g, 1, state, 0, 0.1);
  }
  CHECK(w == 0.625);
}

TEST_CASE("adam drives a quadratic toward its minimum") {
  // f(w) = w^2, grad 2w, from w = 1.
  double w = 1.0;
  AdamState state = AdamState::zeros(1);
  for (int t = 1; t <= 100; ++t) {
    state.step_count = t;
    const double g = 2.0 * w;
    adam_update(&w, &g, 1, state, 0, 0.1);
  }
  CHECK(std::abs(w) < 0.05);
}

TEST_CASE("adam_step updates every tensor and keeps entries binary32-representable") {
  SaeModel model = random_model(4, 6, 11);
  round_params(model);
  GradientSet grads = GradientSet::zeros(4, 6);
  for (double& v : grads.w_enc) v = 0.5;
  for (double& v : grads.b_enc) v = -0.25;
  for (double& v : grads.w_dec) v = 1.0;
  for (double& v : grads.b_pre) v = 2.0;
  const SaeModel before = model;
  AdamState state = AdamState::zeros(4 * 6 * 2 + 6 + 4);

  adam_step(model, grads, state, 1e-3);

  CHECK(state.step_count == 1);
  for (size_t i = 0; i < model.w_enc.size(); ++i) CHECK(model.w_enc[i] != before.w_enc[i]);
  for (size_t i = 0; i < model.b_pre.size(); ++i) CHECK(model.b_pre[i] != before.b_pre[i]);
  for (double v : model.w_enc) CHECK(v == round_f32(v));
  for (double v : model.b_enc) CHECK(v == round_f32(v));
  for (double v : model.w_dec) CHECK(v == round_f32(v));
  for (double v : model.b_pre) CHECK(v == round_f32(v));
}

TEST_CASE("adam_step with zero gradients is a bit-exact no-op on rounded params") {
  SaeModel model = random_model(5, 7, 21);
  round_params(model);
  const SaeModel before = model;
  AdamState state = AdamState::zeros(5 * 7 * 2 + 7 + 5);
  const bool renorm = adam_step(model, GradientSet::zeros(5, 7), state, 0.1);
  CHECK(!renorm);
  CHECK(models_bit_equal(model, before));
}

TEST_CASE("adam_step rejects non-finite gradients") {
  SaeModel model = random_model(3, 4, 31);
  GradientSet grads = GradientSet::zeros(3, 4);
  grads.w_dec[5] = std::numeric_limits<double>::quiet_NaN();
  AdamState state = AdamState::zeros(3 * 4 * 2 + 4 + 3);
  CHECK(thrown_kind([&] { adam_step(model, grads, state, 0.1); }) ==
        ErrKind::NonFiniteGradient);
  CHECK(state.step_count == 0);  // rejected before any mutation
}

TEST_CASE("decoder renormalization restores unit columns and reports movement") {
  SaeModel model = random_model(6, 9, 41);
  round_params(model);
  AdamState state = AdamState::zeros(6 * 9 * 2 + 9 + 6);
  const bool renorm =
      adam_step(model, GradientSet::zeros(6, 9), state, 0.1, /*normalize_decoder=*/true);
  CHECK(renorm);  // random columns were not unit norm
  for (int64_t j = 0; j < model.m; ++j) {
    auto col = model.dec_col(j);
    double norm_sq = 0.0;
    for (double v : col) norm_sq += v * v;
    CHECK(std::sqrt(norm_sq) == doctest::Approx(1.0).epsilon(1e-6));
  }

  // Columns that are exactly standard basis vectors stay put.
  SaeModel basis;
  basis.d = 3;
  basis.m = 3;
  basis.w_dec = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  basis.w_enc = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  basis.b_enc = {0, 0, 0};
  basis.b_pre = {0, 0, 0};
  const SaeModel before = basis;
  AdamState state2 = AdamState::zeros(3 * 3 * 2 + 3 + 3);
  const bool renorm2 =
      adam_step(basis, GradientSet::zeros(3, 3), state2, 0.1, /*normalize_decoder=*/true);
  CHECK(!renorm2);
  CHECK(models_bit_equal(basis, before));
}

TEST_CASE("activity tracker flags latents that stopped firing") {
  ActivityTracker tracker = ActivityTracker::fresh(3, 10);
  CHECK(tracker.steps_since_fire == std::vector<int64_t>{0, 0, 0});
  CHECK(dead_mask(tracker).count() == 0);

  tracker.steps_since_fire = {12, 3, 10};
  DeadMask mask = dead_mask(tracker);
  CHECK(mask.flags == std::vector<uint8_t>{1, 0, 1});  // >= window counts as dead

  SparseCode fired;
  fired.indices = {0};
  fired.coeffs = {1.0};
  fired.m = 3;
  update_activity(tracker, {fired});
  CHECK(tracker.steps_since_fire == std::vector<int64_t>{0, 4, 11});
  CHECK(dead_mask(tracker).flags == std::vector<uint8_t>{0, 0, 1});

  update_activity(tracker, {});  // empty batch of codes still ages everyone
  CHECK(tracker.steps_since_fire == std::vector<int64_t>{1, 5, 12});
}

TEST_CASE("init_model centers on the sample mean with unit decoder columns") {
  EmbeddingBatch sample = EmbeddingBatch::from_rows({
      {1.0, 0.0, -2.5},
      {3.0, 0.5, -0.5},
  });
  const SaeModel model = init_model(3, 8, 7, sample);
  CHECK(model.b_pre == std::vector<double>{2.0, 0.25, -1.5});  // exact mean
  CHECK(model.b_enc == std::vector<double>(8, 0.0));
  for (int64_t j = 0; j < model.m; ++j) {
    auto col = model.dec_col(j);
    double norm_sq = 0.0;
    for (double v : col) norm_sq += v * v;
    CHECK(std::sqrt(norm_sq) == doctest::Approx(1.0).epsilon(1e-6));
  }
  // Encoder rows start as the decoder transpose, entry for entry.
  for (int64_t i = 0; i < model.m; ++i) {
    auto row = model.enc_row(i);
    auto col = model.dec_col(i);
    for (int64_t j = 0; j < model.d; ++j) CHECK(row[j] == col[j]);
  }
  for (double v : model.w_dec) CHECK(v == round_f32(v));

  const SaeModel again = init_model(3, 8, 7, sample);
  CHECK(models_bit_equal(model, again));
  const SaeModel other = init_model(3, 8, 8, sample);
  CHECK(model.w_dec != other.w_dec);
}

TEST_CASE("train with zero steps returns the initialized model unchanged") {
  const EmbeddingBatch data = random_batch(32, 5, 51);
  TrainConfig cfg;
  cfg.k = 2;
  cfg.k_aux = 3;
  cfg.total_steps = 0;
  cfg.batch_size = 8;
  cfg.seed = 9;
  const TrainReport report = train(data, 10, cfg);
  CHECK(report.records.empty());
  CHECK(models_bit_equal(report.model, init_model(5, 10, 9, data)));
}

TEST_CASE("train is deterministic given the seed") {
  const EmbeddingBatch data = random_batch(64, 6, 61);
  TrainConfig cfg;
  cfg.k = 2;
  cfg.k_aux = 3;
  cfg.alpha = 0.1;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 8;
  cfg.total_steps = 25;
  cfg.dead_window = 5;
  cfg.seed = 3;

  const TrainReport a = train(data, 12, cfg);
  const TrainReport b = train(data, 12, cfg);
  CHECK(models_bit_equal(a.model, b.model));
  REQUIRE(a.records.size() == 25);
  REQUIRE(b.records.size() == 25);
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].loss.total == b.records[i].loss.total);
    CHECK(a.records[i].dead_count == b.records[i].dead_count);
    CHECK(a.records[i].mean_nnz == b.records[i].mean_nnz);
  }

  TrainConfig other = cfg;
  other.seed = 4;
  const TrainReport c = train(data, 12, other);
  CHECK(a.model.w_enc != c.model.w_enc);
}

TEST_CASE("training reduces reconstruction loss on a planted corpus") {
  const PlantedDictionary dict = gen_dictionary(8, 4, 0.0, 71);
  const SynthCorpus corpus = gen_corpus(dict, 2, 512, 0.01, 0.5, 2.0, 72);
  TrainConfig cfg;
  cfg.k = 2;
  cfg.k_aux = 4;
  cfg.alpha = 0.1;
  cfg.learning_rate = 2e-3;
  cfg.batch_size = 32;
  cfg.total_steps = 400;
  cfg.dead_window = 50;
  cfg.seed = 0;

  const TrainReport report = train(corpus.batch, 16, cfg);
  REQUIRE(report.records.size() == 400);
  auto window_mean = [&](size_t begin, size_t end) {
    double sum = 0.0;
    for (size_t i = begin; i < end; ++i) sum += report.records[i].loss.mse;
    return sum / static_cast<double>(end - begin);
  };
  const double early = window_mean(0, 50);
  const double late = window_mean(350, 400);
  INFO("early mse ", early, " late mse ", late);
  CHECK(late < 0.5 * early);
  for (const StepRecord& rec : report.records) CHECK(std::isfinite(rec.loss.total));
}

TEST_CASE("train invokes the callback with each record and the live model") {
  const EmbeddingBatch data = random_batch(16, 4, 81);
  TrainConfig cfg;
  cfg.k = 2;
  cfg.k_aux = 2;
  cfg.batch_size = 4;
  cfg.total_steps = 6;
  std::vector<int64_t> seen;
  SaeModel last_cb_model;
  const TrainReport report = train(data, 8, cfg, [&](const StepRecord& rec, const SaeModel& m) {
    seen.push_back(rec.step);
    last_cb_model = m;
  });
  CHECK(seen == std::vector<int64_t>{0, 1, 2, 3, 4, 5});
  CHECK(models_bit_equal(last_cb_model, report.model));
}

TEST_CASE("train rejects bad inputs and non-finite trajectories") {
  TrainConfig cfg;
  cfg.k = 2;
  cfg.k_aux = 2;
  cfg.batch_size = 4;
  cfg.total_steps = 5;

  CHECK(thrown_kind([&] { train(EmbeddingBatch{}, 8, cfg); }) == ErrKind::EmptyBatch);

  TrainConfig bad = cfg;
  bad.k = 99;
  const EmbeddingBatch data = random_batch(16, 4, 91);
  CHECK(thrown_kind([&] { train(data, 8, bad); }) == ErrKind::InvalidConfig);

  TrainConfig exploding = cfg;
  exploding.learning_rate = 1e308;  // first step blows parameters past float range
  CHECK(thrown_kind([&] { train(data, 8, exploding); }) == ErrKind::NonFiniteLoss);
}

}  // TEST_SUITE
