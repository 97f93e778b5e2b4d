#include <doctest.h>

#include <cmath>
#include <random>

#include "ssgrn/superpix.hpp"
#include "testing.hpp"

using namespace ssgrn;
using superpix::SlicConfig;

namespace {

SlicConfig cfg(std::size_t k, std::size_t iters = 5, double compactness = 0.5, double temperature = 0.1) {
  SlicConfig c;
  c.num_superpixels = k;
  c.iters = iters;
  c.compactness = compactness;
  c.temperature = temperature;
  return c;
}

void check_row_stochastic(const Tensor<double>& q, double tol) {
  const std::size_t n = q.dim(0), k = q.dim(1);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(q.at(j * k + i) >= 0.0);
      s += q.at(j * k + i);
    }
    CHECK(std::abs(s - 1.0) < tol);
  }
}

}  // namespace

TEST_SUITE("superpix") {
  TEST_CASE("grid seeds") {
    const auto one = superpix::grid_seed_positions(5, 7, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0].first == doctest::Approx(2.0));
    CHECK(one[0].second == doctest::Approx(3.0));

    const auto quad = superpix::grid_seed_positions(4, 4, 4);
    const std::vector<std::pair<double, double>> expect{{0.5, 0.5}, {0.5, 2.5}, {2.5, 0.5}, {2.5, 2.5}};
    REQUIRE(quad.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(quad[i].first == doctest::Approx(expect[i].first));
      CHECK(quad[i].second == doctest::Approx(expect[i].second));
    }

    const auto nine = superpix::grid_seed_positions(30, 30, 9);
    REQUIRE(nine.size() == 9);
    for (std::size_t i = 0; i < 9; ++i) {
      if (i % 3 != 2) CHECK(std::abs(nine[i + 1].second - nine[i].second - 10.0) <= 1.0);
      if (i < 6) CHECK(std::abs(nine[i + 3].first - nine[i].first - 10.0) <= 1.0);
    }

    for (std::size_t k : {2u, 5u, 7u, 13u, 24u}) CHECK(superpix::grid_seed_positions(6, 9, k).size() == k);
    CHECK_THROWS_AS(superpix::grid_seed_positions(2, 2, 5), std::invalid_argument);
  }

  TEST_CASE("hard map takes the first maximum") {
    const auto q = Tensor<double>::from_data({3, 2}, {0.2, 0.8, 0.5, 0.5, 0.9, 0.1});
    CHECK(superpix::hard_map(q) == std::vector<std::size_t>{1, 0, 0});

    std::mt19937 rng(31);
    const auto r = testing::random_tensor({40, 6}, rng, 0, 1, false);
    const auto s = superpix::hard_map(r);
    for (std::size_t j = 0; j < 40; ++j) {
      std::size_t best = 0;
      for (std::size_t i = 0; i < 6; ++i)
        if (r.at(j * 6 + i) > r.at(j * 6 + best)) best = i;
      CHECK(s[j] == best);
    }
  }

  TEST_CASE("single superpixel owns every pixel") {
    std::mt19937 rng(32);
    const auto f = testing::random_tensor({3, 5, 4}, rng);
    const auto a = superpix::soft_assign_iterate(f, cfg(1));
    for (double v : a.soft.values()) CHECK(v == 1.0);
    for (auto s : a.hard) CHECK(s == 0u);
  }

  TEST_CASE("constant features assign to the nearest seed") {
    const auto f = Tensor<double>::full({2, 4, 4}, 0.7);
    const auto a = superpix::soft_assign_iterate(f, cfg(4, 1));
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) CHECK(a.hard[r * 4 + c] == (r / 2) * 2 + c / 2);
  }

  TEST_CASE("two separated blobs are recovered without position weight") {
    std::vector<double> v(4 * 8);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 8; ++c) v[r * 8 + c] = c < 3 ? 0.0 : 5.0;
    const auto f = Tensor<double>::from_data({1, 4, 8}, v);
    const auto a = superpix::soft_assign_iterate(f, cfg(2, 5, 0.0));
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 8; ++c) CHECK(a.hard[r * 8 + c] == (c < 3 ? 0u : 1u));
  }

  TEST_CASE("assignments stay row-stochastic and conserve mass") {
    std::mt19937 rng(33);
    for (int trial = 0; trial < 10; ++trial) {
      const auto f = testing::random_tensor({4, 6, 7}, rng, -2, 2);
      for (std::size_t iters = 1; iters <= 4; ++iters) {
        const auto a = superpix::soft_assign_iterate(f, cfg(5, iters));
        check_row_stochastic(a.soft, 1e-6);
        double mass = 0;
        for (double v : a.soft.values()) mass += v;
        CHECK(std::abs(mass - 42.0) < 1e-4);
        for (double v : a.centroids.values()) CHECK(std::isfinite(v));
      }
    }
  }

  TEST_CASE("lower temperature never softens the assignment") {
    std::mt19937 rng(34);
    const auto f = testing::random_tensor({3, 5, 5}, rng);
    const auto cents = superpix::init_centroids_grid(f, 4);
    const auto warm = superpix::assign_to_centroids(f, cents, cfg(4, 1, 0.5, 0.5));
    const auto cold = superpix::assign_to_centroids(f, cents, cfg(4, 1, 0.5, 0.05));
    for (std::size_t j = 0; j < 25; ++j) {
      double mw = 0, mc = 0;
      for (std::size_t i = 0; i < 4; ++i) {
        mw = std::max(mw, warm.at(j * 4 + i));
        mc = std::max(mc, cold.at(j * 4 + i));
      }
      CHECK(mc >= mw - 1e-12);
    }
  }

  TEST_CASE("empty clusters are frozen, not NaN") {
    // Two far-apart feature values and a cold temperature starve a cluster.
    std::vector<double> v(16, 0.0);
    v[0] = 50.0;
    const auto f = Tensor<double>::from_data({1, 4, 4}, v);
    const auto a = superpix::soft_assign_iterate(f, cfg(4, 5, 0.0, 1e-3));
    for (double x : a.centroids.values()) CHECK(std::isfinite(x));
    check_row_stochastic(a.soft, 1e-6);
  }

  TEST_CASE("gradients flow through iterated assignments") {
    std::mt19937 rng(35);
    auto f = testing::random_tensor({2, 4, 5}, rng, -0.5, 0.5);
    std::mt19937 wr;
    const auto fn = [&] {
      wr.seed(2);
      return testing::weighted_sum(superpix::soft_assign_iterate(f, cfg(3, 3, 0.5, 0.5)).soft, wr);
    };
    CHECK(testing::check_gradients(fn, {f}).max_rel_error < 1e-4);
  }

  TEST_CASE("config validation") {
    CHECK_THROWS_AS(cfg(0).validate(), std::invalid_argument);
    CHECK_THROWS_AS(cfg(2, 0).validate(), std::invalid_argument);
    CHECK_THROWS_AS(cfg(2, 1, -1.0).validate(), std::invalid_argument);
    CHECK_THROWS_AS(cfg(2, 1, 0.5, 0.0).validate(), std::invalid_argument);
  }
}
