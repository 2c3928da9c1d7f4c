#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "sthoi/autograd.hpp"
#include "sthoi/nn.hpp"
#include "sthoi/oracle/reference.hpp"

using namespace sthoi;

namespace {

Tensor random_tensor(const Shape& s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(s);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Direct nested-loop cross-correlation.
Tensor conv_reference(const Tensor& x, const Tensor& k, const Tensor& b, kernels::Triple s, kernels::Triple p) {
  const std::size_t ci = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t co = k.dim(0), kt = k.dim(2), kh = k.dim(3), kw = k.dim(4);
  const std::size_t To = (T + 2 * p[0] - kt) / s[0] + 1, Ho = (H + 2 * p[1] - kh) / s[1] + 1,
                    Wo = (W + 2 * p[2] - kw) / s[2] + 1;
  Tensor out({co, To, Ho, Wo});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t t = 0; t < To; ++t)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t xx = 0; xx < Wo; ++xx) {
          double acc = b[o];
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t a = 0; a < kt; ++a)
              for (std::size_t e = 0; e < kh; ++e)
                for (std::size_t f = 0; f < kw; ++f) {
                  const long ti = static_cast<long>(t * s[0] + a) - static_cast<long>(p[0]);
                  const long yi = static_cast<long>(y * s[1] + e) - static_cast<long>(p[1]);
                  const long xi = static_cast<long>(xx * s[2] + f) - static_cast<long>(p[2]);
                  if (ti < 0 || yi < 0 || xi < 0 || ti >= static_cast<long>(T) || yi >= static_cast<long>(H) ||
                      xi >= static_cast<long>(W))
                    continue;
                  acc += k.at(o, c, a, e, f) * x.at(c, ti, yi, xi);
                }
          out.at(o, t, y, xx) = acc;
        }
  return out;
}

double scalar_of(const ag::Var& v) { return v.value()[0]; }

}  // namespace

TEST(Tensor, ShapeChecks) {
  EXPECT_THROW(Tensor(Shape{2, 0}), ShapeError);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  Tensor t({2, 3});
  t.at(1, 2) = 5;
  EXPECT_EQ(t[5], 5);
  EXPECT_EQ(t.reshaped({3, 2}).at(2, 1), 5);
}

TEST(Conv3d, IdentityKernel) {
  const Tensor x = random_tensor({1, 2, 3, 4}, 1);
  const auto y = kernels::conv3d_forward(x, Tensor({1, 1, 1, 1, 1}, 1.0), Tensor({1}, 0.0), {1, 1, 1}, {0, 0, 0});
  EXPECT_EQ(y.data().size(), x.size());
  EXPECT_EQ(max_abs_diff(y.reshaped(x.shape()), x), 0.0);
}

TEST(Conv3d, ConstantInputAllOnesKernel) {
  const std::size_t cin = 3;
  const auto y = kernels::conv3d_forward(Tensor({cin, 5, 5, 5}, 1.0), Tensor({1, cin, 3, 3, 3}, 1.0),
                                         Tensor({1}, 0.0), {1, 1, 1}, {0, 0, 0});
  ASSERT_EQ(y.shape(), (Shape{1, 3, 3, 3}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 27.0 * cin);
}

TEST(Conv3d, OutputShape) {
  const auto y = kernels::conv3d_forward(Tensor({2, 8, 16, 16}, 0.5), random_tensor({4, 2, 3, 3, 3}, 2),
                                         Tensor({4}, 0.0), {1, 1, 1}, {1, 1, 1});
  EXPECT_EQ(y.shape(), (Shape{4, 8, 16, 16}));
}

TEST(Conv3d, MatchesNestedLoopReference) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 30; ++i) {
    const std::size_t ci = 1 + i % 3, co = 1 + i % 2;
    const kernels::Triple s{1, 1 + static_cast<std::size_t>(i % 2), 1 + static_cast<std::size_t>(i % 2)};
    const Tensor x = random_tensor({ci, 3, 6, 6}, rng());
    const Tensor k = random_tensor({co, ci, 3, 4, 4}, rng());
    const Tensor b = random_tensor({co}, rng());
    const auto y = kernels::conv3d_forward(x, k, b, s, {1, 1, 1});
    EXPECT_LT(max_abs_diff(y, conv_reference(x, k, b, s, {1, 1, 1})), 1e-12);
  }
}

TEST(Conv3d, ShapeErrorsNameTheDimension) {
  try {
    kernels::conv3d_forward(Tensor({1, 2, 5, 5}), Tensor({1, 1, 3, 4, 4}), Tensor({1}), {1, 2, 2}, {1, 1, 1});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("axis H"), std::string::npos);
  }
  EXPECT_THROW(kernels::conv3d_forward(Tensor({2, 2, 5, 5}), Tensor({1, 1, 3, 3, 3}), Tensor({1}), {1, 1, 1},
                                       {1, 1, 1}),
               ShapeError);
}

TEST(Conv3dProperty, ShiftEquivariantOnInterior) {
  const Tensor k = random_tensor({2, 1, 3, 3, 3}, 4), b = random_tensor({2}, 5);
  const Tensor x = random_tensor({1, 4, 9, 9}, 6);
  Tensor shifted({1, 4, 9, 9});
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t y = 0; y < 9; ++y)
      for (std::size_t xx = 1; xx < 9; ++xx) shifted.at(0, t, y, xx) = x.at(0, t, y, xx - 1);
  const auto a = kernels::conv3d_forward(x, k, b, {1, 1, 1}, {0, 0, 0});
  const auto c = kernels::conv3d_forward(shifted, k, b, {1, 1, 1}, {0, 0, 0});
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t t = 0; t < a.dim(1); ++t)
      for (std::size_t y = 0; y < a.dim(2); ++y)
        for (std::size_t xx = 1; xx + 1 < a.dim(3); ++xx) EXPECT_NEAR(c.at(o, t, y, xx + 1), a.at(o, t, y, xx), 1e-12);
}

TEST(Linear, Examples) {
  Tensor x({1, 3}, std::vector<double>{1, 2, 3});
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1;
  EXPECT_EQ(max_abs_diff(kernels::linear_forward(x, eye, Tensor({3})), x), 0.0);
  const auto y = kernels::linear_forward(x, Tensor({2, 3}, 1.0), Tensor({2}, std::vector<double>{0.5, -1}));
  EXPECT_DOUBLE_EQ(y[0], 6.5);
  EXPECT_DOUBLE_EQ(y[1], 5.0);
  EXPECT_EQ(kernels::linear_forward(Tensor({5, 8}), Tensor({3, 8}), Tensor({3})).shape(), (Shape{5, 3}));
  EXPECT_THROW(kernels::linear_forward(Tensor({5, 8}), Tensor({3, 7}), Tensor({3})), ShapeError);
}

TEST(Activations, Examples) {
  const auto r = ag::relu(ag::constant(Tensor({2}, std::vector<double>{-1, 2}))).value();
  EXPECT_EQ(r[0], 0);
  EXPECT_EQ(r[1], 2);
  EXPECT_EQ(ag::sigmoid(ag::constant(Tensor::scalar(0))).value()[0], 0.5);
  const auto s = ag::sigmoid(ag::constant(Tensor({2}, std::vector<double>{-800, 800}))).value();
  EXPECT_GT(s[0], 0.0);
  EXPECT_LT(s[1], 1.0 + 1e-300);
}

TEST(Activations, SigmoidSlopeAtZero) {
  auto x = ag::leaf(Tensor::scalar(0));
  ag::backward(ag::sigmoid(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
}

TEST(MeanPool, TimeConstantMapIsUnchanged) {
  Tensor m({2, 5, 3, 3});
  const Tensor frame = random_tensor({2, 3, 3}, 7);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 3; ++x) m.at(c, t, y, x) = frame.at(c, y, x);
  const auto p = ag::mean_pool(ag::constant(m), {1}).value();
  EXPECT_LT(max_abs_diff(p.reshaped(frame.shape()), frame), 1e-15);
  EXPECT_THROW(ag::mean_pool(ag::constant(m), {4}), ShapeError);
}

TEST(Bce, Examples) {
  EXPECT_NEAR(scalar_of(ag::bce_multilabel(ag::constant(Tensor({3, 4})), Tensor({3, 4}, 1.0))), std::log(2.0), 1e-15);
  EXPECT_LT(scalar_of(ag::bce_multilabel(ag::constant(Tensor({1, 1}, 30.0)), Tensor({1, 1}, 1.0))), 1e-12);
  EXPECT_NEAR(scalar_of(ag::bce_multilabel(ag::constant(Tensor({1, 1}, 0.5)), Tensor({1, 1}, 1.0))),
              std::log1p(std::exp(-0.5)), 1e-15);
  EXPECT_NEAR(std::log1p(std::exp(-0.5)), 0.4741, 1e-4);
  EXPECT_THROW(ag::bce_multilabel(ag::constant(Tensor({1, 1})), Tensor({1, 1}, 0.5)), InputError);
  EXPECT_THROW(ag::bce_multilabel(ag::constant(Tensor({1, 2})), Tensor({2, 1})), ShapeError);
}

TEST(BceProperty, NonNegativeAndPermutationInvariant) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 1 + i % 4, C = 2 + i % 3;
    const Tensor z = random_tensor({n, C}, rng(), -40, 40);
    Tensor y({n, C});
    for (auto& v : y.data()) v = rng() % 2;
    const double loss = scalar_of(ag::bce_multilabel(ag::constant(z), y));
    EXPECT_GE(loss, 0.0);
    // Cyclic class permutation applied to both.
    Tensor zp({n, C}), yp({n, C});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        zp.at(r, (c + 1) % C) = z.at(r, c);
        yp.at(r, (c + 1) % C) = y.at(r, c);
      }
    EXPECT_NEAR(scalar_of(ag::bce_multilabel(ag::constant(zp), yp)), loss, 1e-12);
  }
}

TEST(Backward, LinearGradientMatchesFiniteDifferences) {
  const Tensor w = random_tensor({3, 4}, 9), b = random_tensor({3}, 10), x = random_tensor({2, 4}, 11);
  auto f = [&](const Tensor& wt) {
    return ag::weighted_sum(ag::linear(ag::constant(x), ag::constant(wt), ag::constant(b)), Tensor({2, 3}, 1.0))
        .value()[0];
  };
  auto wl = ag::leaf(w);
  ag::backward(ag::weighted_sum(ag::linear(ag::constant(x), wl, ag::constant(b)), Tensor({2, 3}, 1.0)));
  const Tensor num = oracle::numeric_gradient(f, w);
  for (std::size_t i = 0; i < w.size(); ++i) {
    EXPECT_LT(std::abs(wl.grad()[i] - num[i]) / std::max({std::abs(num[i]), std::abs(wl.grad()[i]), 1e-8}), 1e-6);
  }
}

TEST(GradCheck, SpecTolerances) {
  const Tensor w = random_tensor({3, 5}, 12), b = random_tensor({3}, 13);
  EXPECT_LT(grad_check([&](const ag::Var& v) { return ag::linear(v, ag::constant(w), ag::constant(b)); },
                       random_tensor({2, 5}, 14))
                .max_rel_error,
            1e-6);
  const Tensor k = random_tensor({2, 2, 3, 3, 3}, 15), kb = random_tensor({2}, 16);
  EXPECT_LT(grad_check([&](const ag::Var& v) { return ag::conv3d(v, ag::constant(k), ag::constant(kb), {1, 1, 1}, {1, 1, 1}); },
                       random_tensor({2, 3, 4, 4}, 17))
                .max_rel_error,
            1e-5);
  Tensor away = random_tensor({20}, 18, 0.2, 1.0);
  for (std::size_t i = 0; i < away.size(); i += 2) away[i] = -away[i];
  EXPECT_LT(grad_check([](const ag::Var& v) { return ag::relu(v); }, away).max_rel_error, 1e-6);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // A forward that is x^2 but advertises gradient 1: the check must notice.
  auto bad = [](const ag::Var& x) {
    Tensor out = x.value();
    for (auto& v : out.data()) v = v * v;
    return ag::detail::make_result(std::move(out), {x}, [](ag::Node& self) {
      self.parents[0]->accumulate(self.grad);
    });
  };
  EXPECT_GT(grad_check(bad, random_tensor({4}, 19, 1, 2)).max_rel_error, 0.1);
}

TEST(Sgd, ZeroGradientLeavesWeights) {
  Parameter p("w", Tensor({3}, 2.0));
  std::vector<Parameter*> ps{&p};
  TrainConfig cfg;
  cfg.weight_decay = 0;
  sgd_step(ps, cfg, 1);
  for (double v : p.value().data()) EXPECT_EQ(v, 2.0);
}

TEST(Sgd, HandComputedUpdate) {
  Parameter p("w", Tensor::scalar(1.0));
  p.var.mutable_grad() = Tensor::scalar(0.5);
  std::vector<Parameter*> ps{&p};
  TrainConfig cfg;
  cfg.base_lr = 0.01;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0;
  sgd_step(ps, cfg, 1);
  EXPECT_DOUBLE_EQ(p.momentum_buf[0], 0.5);
  EXPECT_DOUBLE_EQ(p.value()[0], 0.995);
  // Second step: v = 0.9*0.5 + 0.5 = 0.95.
  sgd_step(ps, cfg, 1);
  EXPECT_DOUBLE_EQ(p.momentum_buf[0], 0.95);
}

TEST(Sgd, WeightDecayIsCoupled) {
  Parameter p("w", Tensor::scalar(2.0));
  p.var.mutable_grad() = Tensor::scalar(0.0);
  std::vector<Parameter*> ps{&p};
  TrainConfig cfg;
  cfg.base_lr = 0.1;
  cfg.weight_decay = 0.5;
  sgd_step(ps, cfg, 1);
  EXPECT_DOUBLE_EQ(p.momentum_buf[0], 1.0);
  EXPECT_DOUBLE_EQ(p.value()[0], 1.9);
}

TEST(Schedule, StepDecay) {
  TrainConfig cfg;
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 1), 1e-2);
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 9), 1e-2);
  EXPECT_NEAR(learning_rate(cfg, 10), 1e-3, 1e-18);
  EXPECT_NEAR(learning_rate(cfg, 14), 1e-3, 1e-18);
  EXPECT_NEAR(learning_rate(cfg, 15), 1e-4, 1e-18);
  EXPECT_NEAR(learning_rate(cfg, 20), 1e-4, 1e-18);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.base_lr = 0;
  EXPECT_THROW(cfg.validate(), InputError);
  cfg = {};
  cfg.decay_epochs = {0};
  EXPECT_THROW(cfg.validate(), InputError);
  cfg = {};
  cfg.momentum = 1.0;
  EXPECT_THROW(cfg.validate(), InputError);
}

TEST(Checkpoint, ByteExactRoundTrip) {
  Parameter a("a", random_tensor({2, 3}, 20)), b("b.bias", random_tensor({4}, 21));
  const auto path = (std::filesystem::temp_directory_path() / "sthoi_ckpt_test.bin").string();
  checkpoint::save(path, {&a, &b});
  const auto bytes = checkpoint::read_file(path);
  ASSERT_GE(bytes.size(), 5u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 5), "STHOI");
  Parameter a2("a", Tensor({2, 3})), b2("b.bias", Tensor({4}));
  std::vector<Parameter*> ps{&a2, &b2};
  checkpoint::load(path, ps);
  EXPECT_EQ(max_abs_diff(a.value(), a2.value()), 0.0);
  EXPECT_EQ(max_abs_diff(b.value(), b2.value()), 0.0);
  EXPECT_EQ(checkpoint::encode({{"a", a2.value()}, {"b.bias", b2.value()}}), bytes);
  Parameter wrong("a", Tensor({3, 2}));
  std::vector<Parameter*> pw{&wrong};
  EXPECT_THROW(checkpoint::load(path, pw), FormatError);
  EXPECT_THROW(checkpoint::decode({'N', 'O', 'P', 'E', '!'}), FormatError);
  std::filesystem::remove(path);
}

TEST(Autograd, SharedSubgraphAccumulates) {
  auto x = ag::leaf(Tensor::scalar(3.0));
  ag::backward(ag::add(ag::scale(x, 2.0), ag::scale(x, 5.0)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Tensor, NonFiniteIsReported) {
  Tensor t({2}, std::vector<double>{1, std::nan("")});
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(t.require_finite("test"), NumericError);
}
