#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "ssgrn/trainer.hpp"
#include "testing.hpp"

using namespace ssgrn;

namespace {

struct Scene {
  data::HsiCube cube;
  data::LabelMap labels;
  data::SplitSpec split;
};

Scene small_scene(double sigma, std::uint64_t seed) {
  auto [cube, labels] = data::synth_scene(16, 16, 6, 4, sigma, seed);
  std::vector<data::ClassCount> counts;
  for (std::uint16_t c = 1; c <= 4; ++c) counts.push_back({c, 6, 2});
  auto split = data::make_split(labels, counts, seed);
  return {std::move(cube), std::move(labels), std::move(split)};
}

ModelConfig small_config(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.in_bands = 6;
  c.height = c.width = 16;
  c.widths = {8, 8, 16};
  c.classes = 4;
  c.descriptors = 4;
  c.spectral_descriptors = 4;
  c.head_hidden = 16;
  c.slic.iters = 2;
  return c;
}

std::string bytes(const ModelState& m) {
  std::ostringstream os;
  write_checkpoint(os, m);
  return os.str();
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("poly schedule") {
    CHECK(train::poly_lr(1e-3, 0, 1000, 0.9) == 1e-3);
    CHECK(train::poly_lr(1e-3, 1000, 1000, 0.9) == 0.0);
    CHECK(std::abs(train::poly_lr(1e-3, 500, 1000, 0.9) - 5.359e-4) < 1e-7);
    CHECK_THROWS_AS(train::poly_lr(1e-3, 1, 0, 0.9), std::out_of_range);
    CHECK_THROWS_AS(train::poly_lr(1e-3, 11, 10, 0.9), std::out_of_range);
    for (std::size_t i = 1; i <= 100; ++i) CHECK(train::poly_lr(1.0, i, 100, 0.9) < train::poly_lr(1.0, i - 1, 100, 0.9));
  }

  TEST_CASE("decay applies to weights only") {
    CHECK(train::decays("backbone.block1.conv.weight"));
    CHECK(train::decays("sagrn.gcn.weight"));
    CHECK_FALSE(train::decays("backbone.block1.conv.bias"));
    CHECK_FALSE(train::decays("backbone.block1.gn.gamma"));
    CHECK_FALSE(train::decays("weight"));
  }

  TEST_CASE("sgd follows the unrolled recurrence") {
    ParamStore<double> p;
    p.add("w.weight", Tensor<double>::scalar(0.5));
    p.add("b.bias", Tensor<double>::scalar(-0.25));
    train::SgdOptimizer<double> opt(0.9, 0.01);
    const double g[3] = {0.3, -0.2, 0.7}, lr[3] = {0.1, 0.05, 0.02};
    double w = 0.5, vw = 0, b = -0.25, vb = 0;
    for (int s = 0; s < 3; ++s) {
      p.get("w.weight").grad_mut()[0] = g[s];
      p.get("b.bias").grad_mut()[0] = 2 * g[s];
      opt.step(p, lr[s]);
      p.zero_grad();
      vw = 0.9 * vw + (g[s] + 0.01 * w);
      w -= lr[s] * vw;
      vb = 0.9 * vb + 2 * g[s];
      b -= lr[s] * vb;
      CHECK(std::abs(p.get("w.weight").item() - w) < 1e-9);
      CHECK(std::abs(p.get("b.bias").item() - b) < 1e-9);
    }

    // Zero gradient, zero decay: momentum alone keeps the parameter moving.
    train::SgdOptimizer<double> coast(0.5, 0.0);
    ParamStore<double> q;
    q.add("x.bias", Tensor<double>::scalar(1.0));
    q.get("x.bias").grad_mut()[0] = 1.0;
    coast.step(q, 0.1);  // v = 1, x = 0.9
    q.get("x.bias").grad_mut()[0] = 0.0;
    coast.step(q, 0.1);  // v = 0.5, x = 0.85
    CHECK(q.get("x.bias").item() == doctest::Approx(0.85));

    train::SgdOptimizer<double> plain(0.0, 0.0);
    q.get("x.bias").grad_mut()[0] = 2.0;
    plain.step(q, 0.1);
    CHECK(q.get("x.bias").item() == doctest::Approx(0.65));

    ParamStore<double> missing;
    missing.add("y.weight", Tensor<double>::scalar(1.0));
    CHECK_THROWS_AS(plain.step(missing, 0.1), std::invalid_argument);
  }

  TEST_CASE("masked cross entropy against a per-pixel oracle") {
    std::mt19937 rng(81);
    const auto logits = testing::random_tensor({3, 4, 4}, rng, -3, 3, false);
    data::LabelMap labels{4, 4, std::vector<std::uint16_t>(16)};
    data::SplitSpec split{4, 4, std::vector<data::Subset>(16), 0, {}};
    for (std::size_t i = 0; i < 16; ++i) {
      labels.labels[i] = static_cast<std::uint16_t>(rng() % 4);
      split.assignment[i] = labels.labels[i] ? (i % 2 ? data::Subset::train : data::Subset::test) : data::Subset::none;
    }
    labels.labels[1] = 2;
    split.assignment[1] = data::Subset::train;
    double total = 0;
    int n = 0;
    for (std::size_t j = 0; j < 16; ++j) {
      if (split.assignment[j] != data::Subset::train) continue;
      double mx = -1e300, s = 0;
      for (std::size_t c = 0; c < 3; ++c) mx = std::max(mx, logits.at(c * 16 + j));
      for (std::size_t c = 0; c < 3; ++c) s += std::exp(logits.at(c * 16 + j) - mx);
      total += std::log(s) + mx - logits.at((labels.labels[j] - 1) * 16 + j);
      ++n;
    }
    CHECK(std::abs(train::cross_entropy_masked(logits, labels, split, data::Subset::train).item() - total / n) < 1e-6);
    CHECK(train::cross_entropy_masked(Tensor<double>::zeros({3, 4, 4}), labels, split, data::Subset::train).item() ==
          doctest::Approx(std::log(3.0)));

    const auto targets = train::make_targets(labels, split, data::Subset::train, 5, 6);
    CHECK(targets.size() == 30u);
    CHECK(targets[0 * 6 + 1] == 1);
    for (std::size_t c = 4; c < 6; ++c) CHECK(targets[c] == -1);
    for (std::size_t c = 0; c < 6; ++c) CHECK(targets[4 * 6 + c] == -1);
  }

  TEST_CASE("zero iterations or zero learning rate leave parameters unchanged") {
    const auto s = small_scene(0.0, 1);
    ModelState m(small_config(Variant::fcn), 3);
    const auto before = bytes(m);
    train::TrainConfig cfg;
    cfg.max_iter = 0;
    CHECK(train::train(m, s.cube, s.labels, s.split, cfg).empty());
    CHECK(bytes(m) == before);

    cfg.max_iter = 2;
    cfg.base_lr = 0.0;
    train::train(m, s.cube, s.labels, s.split, cfg);
    ModelState fresh(small_config(Variant::fcn), 3);
    fresh.iteration = 2;
    CHECK(bytes(m) == bytes(fresh));
  }

  TEST_CASE("same seed, same checkpoint after training") {
    const auto s = small_scene(0.1, 2);
    train::TrainConfig cfg;
    cfg.max_iter = 3;
    cfg.eval_every = 0;
    ModelState a(small_config(Variant::ssgrn), 4), b(small_config(Variant::ssgrn), 4);
    const auto ha = train::train(a, s.cube, s.labels, s.split, cfg);
    const auto hb = train::train(b, s.cube, s.labels, s.split, cfg);
    CHECK(bytes(a) == bytes(b));
    REQUIRE(ha.size() == 3);
    CHECK(ha[2].loss == hb[2].loss);
    CHECK_FALSE(ha[2].val_oa.has_value());
  }

  TEST_CASE("fcn on a noiseless scene learns quickly") {
    const auto s = small_scene(0.0, 5);
    ModelState m(small_config(Variant::fcn), 6);
    train::TrainConfig cfg;
    cfg.max_iter = 50;
    cfg.base_lr = 0.01;
    cfg.eval_every = 25;
    const auto h = train::train(m, s.cube, s.labels, s.split, cfg);
    REQUIRE(h.size() == 50);
    double best = 1e9;
    for (const auto& r : h) best = std::min(best, r.loss);
    CHECK(best < std::log(4.0));
    CHECK(h[24].val_oa.has_value());
    CHECK(h[49].val_oa.has_value());
    CHECK_FALSE(h[10].val_oa.has_value());
    CHECK(m.iteration == 50);

    std::ostringstream csv;
    train::write_history_csv(csv, {h[0], h[24]});
    CHECK(csv.str().rfind("iter,lr,loss,val_oa\n1,", 0) == 0);
  }

  TEST_CASE("input validation") {
    const auto s = small_scene(0.0, 7);
    ModelState m(small_config(Variant::fcn), 0);
    train::TrainConfig cfg;
    cfg.max_iter = 1;
    auto wrong = s.labels;
    wrong.labels[0] = 9;
    CHECK_THROWS_AS(train::train(m, s.cube, wrong, s.split, cfg), std::invalid_argument);
    auto empty = s.split;
    for (auto& a : empty.assignment)
      if (a == data::Subset::train) a = data::Subset::test;
    CHECK_THROWS_AS(train::train(m, s.cube, s.labels, empty, cfg), std::invalid_argument);
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
}
