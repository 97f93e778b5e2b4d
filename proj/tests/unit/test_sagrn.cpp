#include <doctest.h>

#include <cmath>
#include <random>

#include "ssgrn/sagrn.hpp"
#include "testing.hpp"

using namespace ssgrn;

namespace {

superpix::SuperpixelAssignment<double> hard_assignment(std::size_t n, std::size_t k, std::vector<std::size_t> s) {
  std::vector<double> q(n * k, 0.0);
  for (std::size_t j = 0; j < n; ++j) q[j * k + s[j]] = 1.0;
  return {Tensor<double>::from_data({n, k}, q), std::move(s), Tensor<double>{}};
}

Projection<double> identity_projection(std::size_t d) {
  std::vector<double> w(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) w[i * d + i] = 1.0;
  return {Tensor<double>::from_data({d, d}, w), Tensor<double>::zeros({d})};
}

Projection<double> random_projection(std::size_t in, std::size_t out, std::mt19937& rng) {
  return {testing::random_tensor({in, out}, rng, -0.5, 0.5), testing::random_tensor({out}, rng, -0.1, 0.1)};
}

ProjectionSet<double> random_set(std::size_t width, std::size_t embed, std::mt19937& rng) {
  ProjectionSet<double> p;
  p.phi = random_projection(width, embed, rng);
  p.psi = random_projection(width, embed, rng);
  p.rho = random_projection(width, embed, rng);
  p.eta = random_projection(width, embed, rng);
  p.xi = random_projection(width, width, rng);
  p.zeta = random_projection(width, width, rng);
  p.gcn_weight = testing::random_tensor({width, width}, rng, -0.5, 0.5);
  return p;
}

std::vector<double> softmax_row(std::vector<double> z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double s = 0;
  for (double& v : z) s += (v = std::exp(v - mx));
  for (double& v : z) v /= s;
  return z;
}

}  // namespace

TEST_SUITE("sagrn") {
  TEST_CASE("hard pooling by hand") {
    const auto f = Tensor<double>::from_data({1, 2, 2}, {1, 2, 3, 5});
    const auto d = sagrn::pool_descriptors(f, hard_assignment(4, 2, {0, 0, 1, 1}), sagrn::PoolMode::hard);
    CHECK(d.at(0) == doctest::Approx(1.5));
    CHECK(d.at(1) == doctest::Approx(4.0));
  }

  TEST_CASE("uniform soft assignment pools the global mean") {
    std::mt19937 rng(41);
    const auto f = testing::random_tensor({3, 4, 4}, rng);
    superpix::SuperpixelAssignment<double> a{Tensor<double>::full({16, 5}, 0.2), std::vector<std::size_t>(16, 0),
                                             Tensor<double>{}};
    const auto d = sagrn::pool_descriptors(f, a, sagrn::PoolMode::soft);
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0;
      for (std::size_t j = 0; j < 16; ++j) m += f.at(c * 16 + j);
      m /= 16;
      for (std::size_t i = 0; i < 5; ++i) CHECK(d.at(i * 3 + c) == doctest::Approx(m).epsilon(1e-7));
    }
  }

  TEST_CASE("hard pooling conserves per-channel mass") {
    std::mt19937 rng(42);
    const auto f = testing::random_tensor({2, 5, 6}, rng);
    std::vector<std::size_t> s(30);
    for (auto& v : s) v = rng() % 4;
    s[0] = 0, s[1] = 1, s[2] = 2, s[3] = 3;
    const auto d = sagrn::pool_descriptors(f, hard_assignment(30, 4, s), sagrn::PoolMode::hard);
    for (std::size_t c = 0; c < 2; ++c) {
      double lhs = 0, rhs = 0;
      for (std::size_t i = 0; i < 4; ++i) lhs += d.at(i * 2 + c) * static_cast<double>(std::count(s.begin(), s.end(), i));
      for (std::size_t j = 0; j < 30; ++j) rhs += f.at(c * 30 + j);
      CHECK(std::abs(lhs - rhs) < 1e-4);
    }
  }

  TEST_CASE("attention adjacency examples") {
    const auto d = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
    const auto id = identity_projection(2);
    const auto z = sagrn::attention_adjacency(d, id, id);
    CHECK(z.at(0) == doctest::Approx(0.73106).epsilon(1e-5));
    CHECK(z.at(1) == doctest::Approx(0.26894).epsilon(1e-5));

    const auto same = Tensor<double>::full({3, 2}, 0.4);
    const auto u = sagrn::attention_adjacency(same, id, id);
    for (double v : u.values()) CHECK(v == doctest::Approx(1.0 / 3));

    const auto single = sagrn::attention_adjacency(Tensor<double>::from_data({1, 2}, {3, -1}), id, id);
    CHECK(single.at(0) == 1.0);
  }

  TEST_CASE("reasoning with identity adjacency is relu(XW)") {
    std::mt19937 rng(43);
    const auto x = testing::random_tensor({3, 4}, rng), w = testing::random_tensor({4, 4}, rng);
    const auto eye = Tensor<double>::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const auto g = sagrn::reason(eye, x, w);
    const auto ref = ops::relu(ops::matmul(x, w));
    for (std::size_t i = 0; i < 12; ++i) CHECK(g.at(i) == doctest::Approx(ref.at(i)));
    const auto zero = sagrn::reason(eye, x, Tensor<double>::zeros({4, 4}));
    for (double v : zero.values()) CHECK(v == 0.0);
  }

  TEST_CASE("reprojection matches a direct evaluation") {
    std::mt19937 rng(44);
    const std::size_t k = 3, c = 4, h = 3, w = 2, n = h * w;
    const auto g = testing::random_tensor({k, c}, rng), f = testing::random_tensor({c, h, w}, rng);
    const auto rho = random_projection(c, 2, rng), eta = random_projection(c, 2, rng),
               zeta = random_projection(c, c, rng);
    const auto out = sagrn::reproject(g, f, rho, eta, zeta);
    const auto rg = rho(g), zg = zeta(g);
    std::vector<std::vector<double>> a(k);
    for (std::size_t i = 0; i < k; ++i) {
      std::vector<double> logits(n);
      for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> fj(c);
        for (std::size_t ch = 0; ch < c; ++ch) fj[ch] = f.at(ch * n + j);
        const auto ej = eta(Tensor<double>::from_data({1, c}, fj));
        logits[j] = rg.at(i * 2) * ej.at(0) + rg.at(i * 2 + 1) * ej.at(1);
      }
      a[i] = softmax_row(logits);
      for (std::size_t j = 0; j < n; ++j) CHECK(out.affinity.at(i * n + j) == doctest::Approx(a[i][j]).epsilon(1e-10));
    }
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < n; ++j) {
        double v = 0;
        for (std::size_t i = 0; i < k; ++i) v += a[i][j] * zg.at(i * c + ch);
        CHECK(std::abs(out.feature.at(ch * n + j) - v) < 1e-5);
      }

    Projection<double> zero{Tensor<double>::zeros({c, c}), Tensor<double>::zeros({c})};
    const auto silent = sagrn::reproject(g, f, rho, eta, zero);
    for (double v : silent.feature.values()) CHECK(v == 0.0);
  }

  TEST_CASE("identical descriptors give a spatially constant reprojection") {
    std::mt19937 rng(45);
    const auto g = Tensor<double>::full({3, 4}, 0.3);
    const auto f = testing::random_tensor({4, 3, 3}, rng);
    const auto out = sagrn::reproject(g, f, random_projection(4, 2, rng), random_projection(4, 2, rng),
                                      random_projection(4, 4, rng));
    // Every row of A is a distribution and every row of zeta(G) is equal,
    // so each pixel receives that common row scaled by its total attention.
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 9; ++j) s += out.affinity.at(i * 9 + j);
      CHECK(s == doctest::Approx(1.0));
    }
    for (std::size_t j = 0; j < 9; ++j) {
      double mass = 0;
      for (std::size_t i = 0; i < 3; ++i) mass += out.affinity.at(i * 9 + j);
      const double ratio = out.feature.at(j) / mass;
      for (std::size_t ch = 1; ch < 4; ++ch) CHECK(out.feature.at(ch * 9 + j) / mass == doctest::Approx(out.feature.at(ch * 9) / (out.affinity.at(0) + out.affinity.at(9) + out.affinity.at(18))));
      CHECK(ratio == doctest::Approx(out.feature.at(0) / (out.affinity.at(0) + out.affinity.at(9) + out.affinity.at(18))));
    }
  }

  TEST_CASE("spatial branch: stochastic rows, op count, gradients") {
    std::mt19937 rng(46);
    auto f = testing::random_tensor({4, 6, 6}, rng, -0.5, 0.5);
    auto proj = random_set(4, 2, rng);
    superpix::SlicConfig slic;
    slic.num_superpixels = 5;
    slic.iters = 2;
    slic.temperature = 0.5;
    ops::InnerProductCounter counter;
    const auto out = sagrn::spatial_reasoning(f, proj, slic, sagrn::PoolMode::soft, &counter);
    CHECK(counter.count == 5u * 5u + 36u * 5u);
    for (std::size_t i = 0; i < 5; ++i) {
      double z = 0, a = 0;
      for (std::size_t j = 0; j < 5; ++j) z += out.graph.adjacency.at(i * 5 + j);
      for (std::size_t j = 0; j < 36; ++j) a += out.reprojection.affinity.at(i * 36 + j);
      CHECK(std::abs(z - 1) < 1e-6);
      CHECK(std::abs(a - 1) < 1e-6);
    }
    std::mt19937 wr;
    const auto fn = [&] {
      wr.seed(3);
      return testing::weighted_sum(
          sagrn::spatial_reasoning(f, proj, slic, sagrn::PoolMode::soft).reprojection.feature, wr);
    };
    CHECK(testing::check_gradients(fn, {f, proj.phi.weight, proj.rho.weight, proj.xi.weight, proj.gcn_weight,
                                        proj.zeta.bias})
              .max_rel_error < 1e-4);
  }

  TEST_CASE("heads") {
    std::mt19937_64 init(1);
    ParamStore<double> store;
    sagrn::declare_head(store, "head", {6, 8, 3}, init);
    std::mt19937 rng(47);
    auto f = testing::random_tensor({6, 4, 5}, rng);
    const auto p = sagrn::head_delta(store, "head", f, 8, 10);
    CHECK(p.shape() == Shape{3, 8, 10});
    CHECK(sagrn::aux_head(store, "head", f, 8, 10).values() == p.values());

    std::mt19937 wr;
    const auto fn = [&] {
      wr.seed(4);
      return testing::weighted_sum(sagrn::head_delta(store, "head", f, 8, 10), wr);
    };
    CHECK(testing::check_gradients(fn, {f, store.get("head.conv1.weight"), store.get("head.gn.gamma"),
                                        store.get("head.conv2.weight")},
                                   1e-5, 40)
              .max_rel_error < 1e-4);

    for (auto& v : store.get("head.conv2.weight").data()) v = 0.0;
    const auto flat = sagrn::head_delta(store, "head", f, 8, 10);
    for (double v : flat.values()) CHECK(v == 0.0);
    const std::vector<int> targets(80, 1);
    CHECK(sagrn::sagrn_loss(flat, flat, targets).item() == doctest::Approx(2 * std::log(3.0)));
  }

  TEST_CASE("sagrn loss is the sum of two masked cross entropies") {
    std::mt19937 rng(48);
    const auto a = testing::random_tensor({3, 2, 3}, rng, -2, 2), b = testing::random_tensor({3, 2, 3}, rng, -2, 2);
    const std::vector<int> t{0, -1, 2, 1, 1, -1};
    double ref = 0;
    for (const auto* logits : {&a, &b}) {
      double s = 0;
      int n = 0;
      for (std::size_t j = 0; j < 6; ++j) {
        if (t[j] < 0) continue;
        std::vector<double> z(3);
        for (std::size_t c = 0; c < 3; ++c) z[c] = logits->at(c * 6 + j);
        s -= std::log(softmax_row(z)[t[j]]);
        ++n;
      }
      ref += s / n;
    }
    CHECK(std::abs(sagrn::sagrn_loss(a, b, t).item() - ref) < 1e-6);
  }
}
