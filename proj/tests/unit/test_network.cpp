#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "ssgrn/network.hpp"
#include "testing.hpp"

using namespace ssgrn;

namespace {

ModelConfig desk_config(Variant v, std::size_t h = 16, std::size_t w = 16) {
  ModelConfig c;
  c.variant = v;
  c.in_bands = 8;
  c.height = h;
  c.width = w;
  c.widths = {8, 16, 32};
  c.classes = 3;
  c.descriptors = 4;
  c.spectral_descriptors = 4;
  c.head_hidden = 8;
  c.slic.iters = 2;
  return c;
}

double ce_oracle(const Tensor<double>& logits, const std::vector<int>& targets) {
  const std::size_t c = logits.dim(0), n = logits.dim(1) * logits.dim(2);
  double total = 0;
  int count = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (targets[j] < 0) continue;
    double mx = -1e300;
    for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, logits.at(k * n + j));
    double s = 0;
    for (std::size_t k = 0; k < c; ++k) s += std::exp(logits.at(k * n + j) - mx);
    total += std::log(s) + mx - logits.at(targets[j] * n + j);
    ++count;
  }
  return total / count;
}

std::string checkpoint_bytes(const ModelState& m) {
  std::ostringstream os;
  write_checkpoint(os, m);
  return os.str();
}

}  // namespace

TEST_SUITE("network") {
  TEST_CASE("backbone shape and gradient") {
    Model<double> m(desk_config(Variant::fcn), 1);
    std::mt19937 rng(61);
    const auto x = testing::random_tensor({8, 16, 16}, rng, -1, 1, false);
    CHECK(m.backbone_forward(x).shape() == Shape{32, 8, 8});

    Model<double> small(desk_config(Variant::fcn, 6, 6), 2);
    const auto xs = testing::random_tensor({8, 6, 6}, rng, -1, 1, false);
    const auto fn = [&] { return ops::mean(small.backbone_forward(xs)); };
    CHECK(testing::check_gradients(fn, {small.params.get("backbone.block1.conv.weight")}, 1e-5, 60).max_rel_error <
          1e-4);
  }

  TEST_CASE("odd extents are padded to even") {
    auto c = desk_config(Variant::ssgrn, 7, 9);
    CHECK(c.padded_height() == 8);
    CHECK(c.padded_width() == 10);
    Model<double> m(c, 3);
    std::mt19937 rng(62);
    const auto r = m.forward(testing::random_tensor({8, 8, 10}, rng, -1, 1, false));
    CHECK(r.prediction_logits().shape() == Shape{3, 8, 10});
    CHECK_THROWS_AS(m.forward(testing::random_tensor({8, 7, 9}, rng, -1, 1, false)), ShapeError);
  }

  TEST_CASE("fusion") {
    std::mt19937 rng(63);
    const auto f = testing::random_tensor({3, 2, 2}, rng, -1, 1, false);
    const auto a = testing::random_tensor({3, 2, 2}, rng, -1, 1, false);
    const auto b = testing::random_tensor({3, 2, 2}, rng, -1, 1, false);
    const auto zero = Tensor<double>::zeros({3, 2, 2});
    CHECK(fuse(zero, zero, f).values() == f.values());
    const auto s = fuse(a, b, zero);
    const auto t = fuse(a, b, f);
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK(s.at(i) == a.at(i) + b.at(i));
      CHECK(t.at(i) == (a.at(i) + b.at(i)) + f.at(i));
    }
    CHECK_THROWS_AS(fuse(a, b, Tensor<double>::zeros({3, 2, 3})), ShapeError);
  }

  TEST_CASE("total loss composition") {
    ComponentLosses<double> l;
    l.sa = Tensor<double>::scalar(1);
    l.se = Tensor<double>::scalar(2);
    l.fused = Tensor<double>::scalar(3);
    CHECK(total_loss(Variant::ssgrn, l).item() == 6.0);
    CHECK(total_loss(Variant::sagrn, l).item() == 1.0);
    CHECK(total_loss(Variant::segrn, l).item() == 2.0);
    CHECK_THROWS_AS(total_loss(Variant::fcn, l), std::invalid_argument);
    ComponentLosses<double> z;
    z.sa = z.se = z.fused = Tensor<double>::scalar(0);
    CHECK(total_loss(Variant::ssgrn, z).item() == 0.0);

    auto cfg = desk_config(Variant::ssgrn, 8, 8);
    cfg.classes = 2;
    Model<double> m(cfg, 4);
    std::mt19937 rng(64);
    const auto r = m.forward(testing::random_tensor({8, 8, 8}, rng, -1, 1, false));
    std::vector<int> targets(64);
    for (auto& t : targets) t = static_cast<int>(rng() % 3) - 1;
    targets[0] = 0;
    const double expect = ce_oracle(r.logits.at("sa_main"), targets) + ce_oracle(r.logits.at("sa_aux"), targets) +
                          ce_oracle(r.logits.at("se"), targets) + ce_oracle(r.logits.at("fused"), targets);
    CHECK(std::abs(total_loss(Variant::ssgrn, compute_losses(r, targets)).item() - expect) < 1e-6);
  }

  TEST_CASE("variants declare only their own heads") {
    const auto has_prefix = [](const Model<float>& m, const std::string& p) {
      for (const auto& [name, t] : m.params.items())
        if (name.rfind(p, 0) == 0) return true;
      return false;
    };
    Model<float> fcn(desk_config(Variant::fcn), 0), sa(desk_config(Variant::sagrn), 0),
        se(desk_config(Variant::segrn), 0), ss(desk_config(Variant::ssgrn), 0);
    CHECK(has_prefix(fcn, "head.fcn."));
    CHECK_FALSE(has_prefix(fcn, "sagrn."));
    CHECK(has_prefix(sa, "sagrn."));
    CHECK_FALSE(has_prefix(sa, "segrn."));
    CHECK(has_prefix(se, "segrn."));
    CHECK_FALSE(has_prefix(se, "head.fused."));
    CHECK(has_prefix(ss, "head.fused."));
    CHECK(count_params(ss) > count_params(sa));
    CHECK(count_params(ss) > count_params(se));
  }

  TEST_CASE("same seed, same parameters and outputs") {
    Model<float> a(desk_config(Variant::ssgrn), 9), b(desk_config(Variant::ssgrn), 9), c(desk_config(Variant::ssgrn), 10);
    CHECK(checkpoint_bytes(a) == checkpoint_bytes(b));
    CHECK(checkpoint_bytes(a) != checkpoint_bytes(c));
    std::mt19937 rng(65);
    const auto x = testing::random_tensor<float>({8, 16, 16}, rng, -1, 1, false);
    NoGradGuard ng;
    CHECK(a.forward(x).prediction_logits().values() == b.forward(x).prediction_logits().values());
  }

  TEST_CASE("checkpoint round trip is byte identical") {
    auto cfg = desk_config(Variant::ssgrn, 9, 12);
    cfg.slic.compactness = 0.3;
    cfg.slic.temperature = 0.07;
    cfg.eval_pool = sagrn::PoolMode::hard;
    ModelState m(cfg, 5);
    m.iteration = 17;
    const auto bytes = checkpoint_bytes(m);
    std::istringstream in(bytes);
    const auto back = read_checkpoint(in);
    CHECK(back.iteration == 17);
    CHECK(back.config.serialize() == cfg.serialize());
    CHECK(checkpoint_bytes(back) == bytes);
  }

  TEST_CASE("corrupted checkpoints are rejected") {
    const auto bytes = checkpoint_bytes(ModelState(desk_config(Variant::sagrn), 6));
    const auto reject = [](const std::string& s) {
      std::istringstream in(s);
      CHECK_THROWS_AS(read_checkpoint(in), FormatError);
    };
    reject("");
    reject("NOTACKPT\n");
    reject(bytes.substr(0, bytes.size() - 3));
    reject(bytes + "x");
    std::string bad_key = bytes;
    bad_key.replace(bad_key.find("classes="), 8, "clazzes=");
    reject(bad_key);
    std::string nan = bytes;
    for (int i = 1; i <= 4; ++i) nan[nan.size() - i] = static_cast<char>(0xFF);
    reject(nan);
    std::string wrong_shape = bytes;
    wrong_shape.replace(wrong_shape.find("head_hidden=8"), 13, "head_hidden=9");
    reject(wrong_shape);
  }

  TEST_CASE("attention op count") {
    CHECK(count_attention_ops(2, 4) == 12u);
    CHECK(count_attention_ops(0, 100) == 0u);
    auto cfg = desk_config(Variant::sagrn, 32, 32);
    cfg.descriptors = 16;
    Model<float> m(cfg, 7);
    std::mt19937 rng(66);
    ops::InnerProductCounter counter;
    NoGradGuard ng;
    m.forward(testing::random_tensor<float>({8, 32, 32}, rng, -1, 1, false), {sagrn::PoolMode::soft, &counter});
    CHECK(counter.count == count_attention_ops(16, 256));
  }

  TEST_CASE("config validation and parsing") {
    auto c = desk_config(Variant::sagrn);
    c.descriptors = 65;  // feature map is 8x8
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.variant = Variant::segrn;
    CHECK_NOTHROW(c.validate());
    CHECK_THROWS_AS(parse_variant("gcn"), std::invalid_argument);
    CHECK_THROWS_AS(ModelConfig::parse({{"bogus", "1"}}), std::invalid_argument);
    CHECK_THROWS_AS(ModelConfig::parse({{"widths", "1,2"}}), std::invalid_argument);
    CHECK(desk_config(Variant::ssgrn).spectral_length() == 4u);
  }
}
