#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "stnas/errors.hpp"
#include "stnas/training.hpp"
#include "support.hpp"

using namespace stnas;

namespace {

struct Fixture {
  RawDataset raw = synthesize_dataset(17, 5, 400, 6, 3);
  DatasetSplits splits = window_split(raw, 6, 3);
  AdjacencySet adj = build_adjacency_set(raw.adjacency);
  ModelConfig cfg;

  Fixture() {
    cfg.hidden_size = 8;
    cfg.attn_dim = 8;
    cfg.attn_heads = 2;
    cfg.ffn_dim = 16;
    cfg.node_emb_dim = 4;
    cfg.history = 6;
    cfg.horizon = 3;
    cfg.nodes = 5;
  }
};

}  // namespace

TEST_CASE("compute_metrics") {
  const std::vector<Real> y{3, -1, 7};
  const Metrics perfect = compute_metrics(y, y);
  CHECK(perfect.mae == 0);
  CHECK(perfect.rmse == 0);
  CHECK(perfect.mape == 0.0);

  const std::vector<Real> pred{1, 2}, actual{1, 4};
  const Metrics m = compute_metrics(pred, actual);
  CHECK(m.mae == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(m.rmse == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  REQUIRE(m.mape.has_value());
  CHECK(*m.mape == doctest::Approx(25.0).epsilon(1e-15));

  CHECK(*compute_metrics(std::vector<Real>{110}, std::vector<Real>{100}).mape == doctest::Approx(10.0));

  // Targets at or below the threshold drop out of MAPE only.
  const Metrics zeros = compute_metrics(std::vector<Real>{1, 2}, std::vector<Real>{0, 1e-5});
  CHECK_FALSE(zeros.mape.has_value());
  CHECK(zeros.mae == doctest::Approx(1.5));
  const Metrics partial = compute_metrics(std::vector<Real>{5, 3}, std::vector<Real>{0, 2});
  CHECK(*partial.mape == doctest::Approx(50.0));

  CHECK_THROWS_AS(compute_metrics(std::vector<Real>{1}, std::vector<Real>{1, 2}), DimensionError);
  CHECK_THROWS_AS(compute_metrics(std::vector<Real>{}, std::vector<Real>{}), InputError);
}

TEST_CASE("metrics against a naive reference") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Real> pred(100), actual(100);
    for (auto& v : pred) v = u(rng);
    for (auto& v : actual) v = u(rng) + (trial % 2 ? 60 : 0);
    const Metrics m = compute_metrics(pred, actual);
    // 10 x 10 double loop over the same entries.
    double abs_sum = 0, err_sum = 0;
    for (std::size_t row = 0; row < 10; ++row)
      for (std::size_t col = 0; col < 10; ++col) {
        abs_sum += std::abs(pred[row * 10 + col] - actual[row * 10 + col]);
        err_sum += pred[row * 10 + col] - actual[row * 10 + col];
      }
    CHECK(std::abs(m.mae - abs_sum / 100) < 1e-12);
    CHECK(m.mae >= 0);
    CHECK(m.rmse >= std::abs(err_sum / 100));
  }
}

TEST_CASE("quick_tune") {
  Fixture f;
  const ArchSpec spec = uniform_spec(CellKind::STT);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.seed = 99;

  SUBCASE("zero learning rate leaves parameters and loss unchanged") {
    ModelInstance m = init_model(spec, f.cfg, 1);
    const ParamStore before = m.params;
    tc.learning_rate = 0;
    tc.dropout_active = false;
    tc.epochs = 3;
    // Full batches only, so every epoch averages the same set of batch means.
    const std::size_t usable = 8 * 20 + 6 + 3 - 1;
    Tensor segment({usable, 5});
    std::copy_n(f.raw.readings.data(), segment.size(), segment.data());
    const WindowedDataset even(Split::Train, 0, segment, f.splits.normalizer, 6, 3);
    REQUIRE(even.size() == 160);
    const TrainResult r = quick_tune(m, even, f.adj, tc);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(m.params[ParamId{i}].value == before[ParamId{i}].value);
    REQUIRE(r.epoch_losses.size() == 3);
    CHECK(r.epoch_losses[1] == doctest::Approx(r.epoch_losses[0]).epsilon(1e-12));
    CHECK(r.epoch_losses[2] == doctest::Approx(r.epoch_losses[0]).epsilon(1e-12));
    CHECK(r.step_losses.size() == 60);
  }

  SUBCASE("fifty steps reduce the training loss") {
    ModelInstance m = init_model(spec, f.cfg, 2);
    tc.epochs = 100;
    tc.max_steps = 50;
    const double initial = dataset_loss(m, f.splits.train, f.adj);
    const TrainResult r = quick_tune(m, f.splits.train, f.adj, tc);
    CHECK(r.step_losses.size() == 50);
    const double final_loss = dataset_loss(m, f.splits.train, f.adj);
    MESSAGE("train loss " << initial << " -> " << final_loss);
    CHECK(final_loss < initial);
  }

  SUBCASE("same seeds give bit-identical runs") {
    tc.epochs = 2;
    tc.max_steps = 12;
    ModelInstance a = init_model(spec, f.cfg, 3);
    ModelInstance b = init_model(spec, f.cfg, 3);
    const TrainResult ra = quick_tune(a, f.splits.train, f.adj, tc);
    const TrainResult rb = quick_tune(b, f.splits.train, f.adj, tc);
    CHECK(ra.step_losses == rb.step_losses);
    CHECK(a.params == b.params);
    TrainConfig other = tc;
    other.seed = 100;
    ModelInstance c = init_model(spec, f.cfg, 3);
    CHECK(quick_tune(c, f.splits.train, f.adj, other).step_losses != ra.step_losses);
  }

  SUBCASE("a non-finite reading surfaces as divergence with its epoch") {
    Tensor segment({60, 5});
    std::copy_n(f.raw.readings.data(), segment.size(), segment.data());
    segment.at(30, 2) = std::numeric_limits<Real>::quiet_NaN();
    const WindowedDataset poisoned(Split::Train, 0, segment, f.splits.normalizer, 6, 3);
    ModelInstance m = init_model(spec, f.cfg, 4);
    tc.batch_size = 64;
    try {
      quick_tune(m, poisoned, f.adj, tc);
      FAIL("expected divergence");
    } catch (const TrainingDivergence& e) {
      CHECK(e.epoch() == 1);
    }
  }

  SUBCASE("bad configuration") {
    ModelInstance m = init_model(spec, f.cfg, 5);
    tc.epochs = 0;
    CHECK_THROWS_AS(quick_tune(m, f.splits.train, f.adj, tc), ConfigError);
    ModelConfig wrong = f.cfg;
    wrong.horizon = 4;
    ModelInstance w = init_model(spec, wrong, 5);
    tc.epochs = 1;
    CHECK_THROWS_AS(quick_tune(w, f.splits.train, f.adj, tc), ContractError);
  }
}

TEST_CASE("evaluate denormalizes predictions") {
  Fixture f;
  const ModelInstance m = init_model(uniform_spec(CellKind::TTS), f.cfg, 6);
  const Metrics got = evaluate(m, f.splits.valid, f.adj, f.splits.normalizer);
  CHECK(got.window_count == f.splits.valid.size());

  std::vector<Real> pred, actual;
  for (std::size_t i = 0; i < f.splits.valid.size(); ++i) {
    const Tensor p = predict(m, f.splits.valid.input(i), f.adj);  // [P, N]
    const Tensor y = f.splits.valid.target(i);
    for (std::size_t k = 0; k < p.size(); ++k) {
      pred.push_back(f.splits.normalizer.invert(p[k]));
      actual.push_back(y[k]);
    }
  }
  const Metrics expect = compute_metrics(pred, actual);
  CHECK(got.mae == doctest::Approx(expect.mae).epsilon(1e-12));
  CHECK(got.rmse == doctest::Approx(expect.rmse).epsilon(1e-12));
  CHECK(*got.mape == doctest::Approx(*expect.mape).epsilon(1e-12));
  CHECK(std::abs(dataset_loss(m, f.splits.valid, f.adj) * f.splits.normalizer.std - got.mae) < 1e-9);
}
