#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "iman/config.hpp"
#include "iman/experiment.hpp"
#include "iman/missingness.hpp"
#include "iman/oracles.hpp"
#include "test_util.hpp"

using namespace iman;
using testutil::rand_tensor;

namespace {

ModelConfig small_model() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.num_layers = 1;
  cfg.prompt_len = 1;
  cfg.cafa_num_param = 3;
  cfg.stem_channels = 2;
  cfg.patch_size = 4;
  cfg.image_channels = 1;
  cfg.image_height = 8;
  cfg.image_width = 8;
  cfg.ebv_dim = 3;
  cfg.normal_dim = 4;
  cfg.mlp_ratio = 2;
  return cfg;
}

SyntheticSpec small_spec() {
  SyntheticSpec spec;
  spec.n_samples = 60;
  spec.image_shape = {1, 8, 8};
  spec.ebv_dim = 3;
  spec.normal_dim = 4;
  spec.seed = 21;
  return spec;
}

}  // namespace

TEST_CASE("auc matches its worked examples") {
  {
    const double scores[] = {0.9, 0.8, 0.3, 0.2};
    const int labels[] = {1, 1, 0, 0};
    CHECK(auc_score(scores, labels) == 1.0);
  }
  {
    const double scores[] = {0.4, 0.4, 0.4, 0.4, 0.4};
    const int labels[] = {1, 0, 1, 0, 0};
    CHECK(auc_score(scores, labels) == 0.5);
  }
  {
    // Pairs: (0.9,0.2)+, (0.9,0.8)+, (0.3,0.2)+, (0.3,0.8)-: 3/4.
    const double scores[] = {0.9, 0.2, 0.8, 0.3};
    const int labels[] = {1, 0, 0, 1};
    CHECK(auc_score(scores, labels) == 0.75);
  }
  {
    const double scores[] = {0.9, 0.8};
    const int labels[] = {1, 1};
    CHECK_THROWS_AS(auc_score(scores, labels), MetricError);
  }
}

TEST_CASE("auc complement identity holds for tie-free scores") {
  Rng rng(600);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 4 + rng.next_below(20);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool pos = false, neg = false;
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = rng.next_normal();  // continuous, ties have measure zero
      labels[i] = static_cast<int>(rng.next_u64() & 1);
      (labels[i] ? pos : neg) = true;
    }
    if (!pos || !neg) continue;
    std::vector<int> flipped(n);
    for (std::size_t i = 0; i < n; ++i) flipped[i] = 1 - labels[i];
    CHECK(auc_score(scores, labels) ==
          doctest::Approx(1.0 - auc_score(scores, flipped)).epsilon(1e-12));
  }
}

TEST_CASE("evaluate_scores matches the brute-force oracle on 100 random sets") {
  Rng rng(601);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.next_below(29);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.next_below(10)) / 10.0;  // forces ties
      labels[i] = static_cast<int>(rng.next_u64() & 1);
    }
    if (trial % 7 == 0)
      for (auto& l : labels) l = trial % 14 == 0 ? 1 : 0;  // single-class cases
    const auto got = evaluate_scores(scores, labels, 0.5);
    const auto expected = oracle::metrics_bruteforce(scores, labels, 0.5);
    CHECK(got.tp == expected.tp);
    CHECK(got.fp == expected.fp);
    CHECK(got.tn == expected.tn);
    CHECK(got.fn == expected.fn);
    CHECK(got.accuracy == expected.accuracy);
    CHECK(got.precision == expected.precision);
    CHECK(got.recall == expected.recall);
    CHECK(got.f1 == expected.f1);
    CHECK(got.auc.has_value() == expected.auc.has_value());
    if (got.auc) CHECK(*got.auc == *expected.auc);
  }
}

TEST_CASE("evaluate_scores worked examples: oracle labels and inverted scores") {
  const int labels[] = {1, 0, 1, 0, 1};
  {
    const double scores[] = {1, 0, 1, 0, 1};
    const auto r = evaluate_scores(scores, labels, 0.5);
    CHECK(r.accuracy == 1.0);
    CHECK(r.f1 == 1.0);
    CHECK(*r.auc == 1.0);
  }
  {
    const double scores[] = {0, 1, 0, 1, 0};
    const auto r = evaluate_scores(scores, labels, 0.5);
    CHECK(r.accuracy == 0.0);
    CHECK(*r.auc == 0.0);
  }
}

TEST_CASE("lr schedule hits its pinned values and stays piecewise linear") {
  const double base = 1e-4;
  CHECK(lr_at(0, 1000, 0.1, base) == 0.0);
  CHECK(lr_at(100, 1000, 0.1, base) == base);
  CHECK(lr_at(1000, 1000, 0.1, base) == 0.0);
  CHECK(lr_at(50, 1000, 0.1, base) == doctest::Approx(base * 0.5).epsilon(1e-15));
  CHECK(lr_at(550, 1000, 0.1, base) == doctest::Approx(base * 0.5).epsilon(1e-12));
  double peak = 0.0;
  for (std::size_t s = 0; s <= 1000; ++s) peak = std::max(peak, lr_at(s, 1000, 0.1, base));
  CHECK(peak == base);
  // Zero warmup decays from the full rate.
  CHECK(lr_at(0, 100, 0.0, base) == base);
}

TEST_CASE("gen_synthetic is deterministic and balanced") {
  const SyntheticSpec spec = small_spec();
  const Dataset a = gen_synthetic(spec);
  const Dataset b = gen_synthetic(spec);
  REQUIRE(a.samples.size() == 60);
  CHECK(a.train_idx.size() == 42);
  CHECK(a.val_idx.size() == 9);
  CHECK(a.test_idx.size() == 9);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].label == b.samples[i].label);
    CHECK(a.samples[i].ebv.data() == b.samples[i].ebv.data());
    CHECK(a.samples[i].images[2].data() == b.samples[i].images[2].data());
  }
  CHECK(a.train_idx == b.train_idx);

  SyntheticSpec big = spec;
  big.n_samples = 400;
  const Dataset c = gen_synthetic(big);
  std::size_t positives = 0;
  for (const auto& s : c.samples) positives += s.label;
  const double balance = static_cast<double>(positives) / 400.0;
  CHECK(balance >= 0.45);
  CHECK(balance <= 0.55);
}

TEST_CASE("noiseless plant is perfectly separable through the ebv projection") {
  SyntheticSpec spec = small_spec();
  spec.n_samples = 100;
  spec.noise_scale = 0.0;
  spec.signal_strength = 1.5;
  const Dataset ds = gen_synthetic(spec);
  // Scores along the (unknown) unit direction are proportional to z; any
  // fixed coordinate of the ebv vector works because noise is zero.
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : ds.samples) {
    scores.push_back(s.ebv.at(0));
    labels.push_back(s.label);
  }
  // Direction coordinates can be negative; orient by correlation.
  double corr = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) corr += scores[i] * (labels[i] * 2.0 - 1.0);
  if (corr < 0.0)
    for (auto& v : scores) v = -v;
  CHECK(auc_score(scores, labels) == 1.0);
}

TEST_CASE("signal-free cohort scores near chance for a fixed classifier") {
  SyntheticSpec spec = small_spec();
  spec.n_samples = 500;
  spec.signal_strength = 0.0;
  spec.seed = 99;
  const Dataset ds = gen_synthetic(spec);
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : ds.samples) {
    double v = 0.0;
    for (std::size_t j = 0; j < s.ebv.numel(); ++j) v += s.ebv.at(j);
    scores.push_back(v);
    labels.push_back(s.label);
  }
  const double auc = auc_score(scores, labels);
  CHECK(auc >= 0.4);
  CHECK(auc <= 0.6);
}

TEST_CASE("dataset directories round-trip through save and load") {
  namespace fs = std::filesystem;
  const Dataset ds = gen_synthetic(small_spec());
  const auto dir = fs::temp_directory_path() / "iman_ds_roundtrip";
  fs::remove_all(dir);
  save_dataset(dir.string(), ds);
  CHECK(fs::exists(dir / "meta.csv"));
  CHECK(fs::exists(dir / "table.csv"));
  CHECK(fs::exists(dir / "SAMPLE_0.bin"));
  const Dataset loaded = load_dataset(dir.string());
  REQUIRE(loaded.samples.size() == ds.samples.size());
  CHECK(loaded.train_idx == ds.train_idx);
  CHECK(loaded.val_idx == ds.val_idx);
  CHECK(loaded.test_idx == ds.test_idx);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(loaded.samples[i].label == ds.samples[i].label);
    CHECK(loaded.samples[i].present == ds.samples[i].present);
    CHECK(loaded.samples[i].ebv.data() == ds.samples[i].ebv.data());
    CHECK(loaded.samples[i].normal.data() == ds.samples[i].normal.data());
    for (std::size_t m = 0; m < 3; ++m)
          CHECK(loaded.samples[i].images[m].data() == ds.samples[i].images[m].data());
  }
  fs::remove_all(dir);
}

TEST_CASE("train drives a separable field-only toy below 0.1 loss in 200 steps") {
  // Hand-built cohort: labels decided by the first ebv coordinate with a
  // wide margin; every image modality masked out.
  const ModelConfig cfg = small_model();
  Dataset ds;
  ds.image_shape = {1, 8, 8};
  ds.ebv_dim = 3;
  ds.normal_dim = 4;
  Rng rng(700);
  for (std::size_t i = 0; i < 32; ++i) {
    PatientSample s;
    s.id = static_cast<std::int64_t>(i);
    s.label = static_cast<int>(i % 2);
    const double direction = s.label == 1 ? 1.0 : -1.0;
    std::vector<double> ebv = {direction * (2.0 + 0.2 * rng.next_normal()),
                               0.1 * rng.next_normal(), 0.1 * rng.next_normal()};
    s.ebv = Tensor::from({3}, std::move(ebv));
    s.normal = Tensor::from({4}, rng.normal_vector(4, 0.1));
    for (auto& img : s.images) img = Tensor::zeros({1, 8, 8});
    s = apply_missing(s, {0, 0, 1, 1, 1});
    ds.samples.push_back(std::move(s));
    ds.train_idx.push_back(i);
  }

  // Independent oracle: plain logistic regression on the same inputs
  // reaches < 0.05 mean loss, so the toy is genuinely easy.
  {
    std::vector<double> w(7, 0.0);
    double bias = 0.0;
    double oracle_loss = 1.0;
    for (int it = 0; it < 400; ++it) {
      std::vector<double> gw(7, 0.0);
      double gb = 0.0;
      oracle_loss = 0.0;
      for (const auto& s : ds.samples) {
        double z = bias;
        for (std::size_t j = 0; j < 3; ++j) z += w[j] * s.ebv.at(j);
        for (std::size_t j = 0; j < 4; ++j) z += w[3 + j] * s.normal.at(j);
        const double p = 1.0 / (1.0 + std::exp(-z));
        const double target = static_cast<double>(s.label);
        oracle_loss += target > 0.5 ? -std::log(p) : -std::log(1.0 - p);
        const double err = p - target;
        for (std::size_t j = 0; j < 3; ++j) gw[j] += err * s.ebv.at(j);
        for (std::size_t j = 0; j < 4; ++j) gw[3 + j] += err * s.normal.at(j);
        gb += err;
      }
      oracle_loss /= 32.0;
      for (std::size_t j = 0; j < 7; ++j) w[j] -= 0.5 * gw[j] / 32.0;
      bias -= 0.5 * gb / 32.0;
    }
    CHECK(oracle_loss < 0.05);
  }

  ImanModel model = ImanModel::init(cfg, Rng(7).split("init"));
  TrainConfig tc;
  tc.batch_size = 8;   // 4 steps per epoch
  tc.epochs = 50;      // exactly 200 steps
  tc.learning_rate = 3e-3;
  tc.seed = 7;
  const TrainResult result = train(model, ds, tc);
  CHECK(result.history.back().train_loss < 0.1);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  const ModelConfig cfg = small_model();
  const Dataset ds = gen_synthetic(small_spec());
  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 2;
  tc.learning_rate = 1e-3;
  tc.seed = 5;

  ImanModel m1 = ImanModel::init(cfg, Rng(5).split("init"));
  ImanModel m2 = ImanModel::init(cfg, Rng(5).split("init"));
  const TrainResult r1 = train(m1, ds, tc);
  const TrainResult r2 = train(m2, ds, tc);
  REQUIRE(r1.history.size() == r2.history.size());
  for (std::size_t e = 0; e < r1.history.size(); ++e) {
    CHECK(r1.history[e].train_loss == r2.history[e].train_loss);
    CHECK(*r1.history[e].val_auc == *r2.history[e].val_auc);
  }
  const auto p1 = m1.parameters();
  const auto p2 = m2.parameters();
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].second.data() == p2[i].second.data());
}

TEST_CASE("training throws a step-indexed error when it diverges") {
  const ModelConfig cfg = small_model();
  const Dataset ds = gen_synthetic(small_spec());
  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 3;
  tc.learning_rate = 1e18;  // guaranteed blow-up
  tc.warmup_fraction = 0.0;
  ImanModel model = ImanModel::init(cfg, Rng(5).split("init"));
  CHECK_THROWS_AS(train(model, ds, tc), TrainError);
}

TEST_CASE("a zero-rate sweep cell reproduces plain train and evaluate") {
  const ModelConfig cfg = small_model();
  const Dataset ds = gen_synthetic(small_spec());
  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 2;
  tc.learning_rate = 1e-3;

  const std::vector<SweepScenario> scenarios = {{"none", {0, 0, 0, 0, 0}}};
  const std::uint64_t seeds[1] = {31};
  const auto cells = sweep_missing(ds, scenarios, seeds, cfg, tc, 1);
  REQUIRE(cells.size() == 1);

  ImanModel model = ImanModel::init(cfg, Rng(31).split("init"));
  TrainConfig direct = tc;
  direct.seed = 31;
  train(model, ds, direct);
  const EvalReport expected = evaluate(model, ds, Split::Test);
  CHECK(cells[0].report.accuracy == expected.accuracy);
  CHECK(*cells[0].report.auc == *expected.auc);
  CHECK(cells[0].report.tp == expected.tp);
}

TEST_CASE("duplicate scenarios produce identical rows") {
  const ModelConfig cfg = small_model();
  const Dataset ds = gen_synthetic(small_spec());
  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 1;
  tc.learning_rate = 1e-3;
  const std::vector<SweepScenario> scenarios = {{"a", {0.2, 0, 0, 0.3, 0}},
                                                {"b", {0.2, 0, 0, 0.3, 0}}};
  const std::uint64_t seeds[2] = {1, 2};
  const auto cells = sweep_missing(ds, scenarios, seeds, cfg, tc, 2);
  REQUIRE(cells.size() == 4);
  CHECK(cells[0].report.accuracy == cells[2].report.accuracy);
  CHECK(*cells[0].report.auc == *cells[2].report.auc);
  CHECK(cells[1].report.accuracy == cells[3].report.accuracy);
  CHECK(*cells[1].report.auc == *cells[3].report.auc);
  // Scenario-major ordering.
  CHECK(cells[0].scenario == "a");
  CHECK(cells[1].scenario == "a");
  CHECK(cells[2].scenario == "b");
  CHECK(cells[3].seed == 2);
}

TEST_CASE("masking a dataset keeps labels and applies rows to every split") {
  const Dataset ds = gen_synthetic(small_spec());
  const double rates[5] = {0.5, 0, 0, 0, 0.5};
  const auto table = build_table(ds.samples.size(), rates, Rng(8));
  const Dataset masked = mask_dataset(ds, table);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(masked.samples[i].label == ds.samples[i].label);
    for (std::size_t k = 0; k < 5; ++k)
      CHECK(masked.samples[i].present[k] == (table.at(i, k) == 0));
  }
}

TEST_CASE("run config round-trips through its resolved form") {
  namespace fs = std::filesystem;
  RunConfig cfg;
  cfg.seed = 42;
  cfg.model.d_model = 16;
  cfg.model.num_heads = 2;
  cfg.train.epochs = 3;
  cfg.n_samples = 120;
  cfg.scenarios = {{"m20", {0.2, 0.2, 0.2, 0.2, 0.2}}, {"m80", {0.8, 0.8, 0.8, 0.8, 0.8}}};
  const auto dir = fs::temp_directory_path() / "iman_cfg_roundtrip";
  fs::create_directories(dir);
  cfg.write_resolved(dir.string());

  const RunConfig parsed = RunConfig::from_file((dir / "config.resolved").string());
  CHECK(parsed.kv() == cfg.kv());
  CHECK(parsed.seed == 42);
  CHECK(parsed.model.d_model == 16);
  REQUIRE(parsed.scenarios.size() == 2);
  CHECK(parsed.scenarios[0].name == "m20");
  CHECK(parsed.scenarios[1].rates[0] == 0.8);
  fs::remove_all(dir);
}

TEST_CASE("unknown config keys are rejected") {
  RunConfig cfg;
  CHECK_THROWS_AS(cfg.set("model.banana", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("nonsense", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("train.learning_rate", "fast"), ConfigError);
  CHECK_THROWS_AS(cfg.set("data.missing_rates", "0.1,0.2"), ConfigError);
}
