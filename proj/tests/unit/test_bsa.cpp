#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "support/fixtures.hpp"
#include "vlattack/bsa/bsa.hpp"
#include "vlattack/util/random.hpp"

namespace {

using namespace vlattack;
using vlattack::testing::constant_task;
using vlattack::testing::held_out;
using vlattack::testing::tiny_model;
using vlattack::testing::trained_lab;
using namespace vlattack::bsa;
using modelzoo::Matrix;

ImageTensor random_image(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> px(192);
  for (double& v : px) v = rng.uniform();
  return ImageTensor(8, 8, 3, std::move(px));
}

// Plain loop cosine, kept apart from the library helper.
double cos_oracle(const Matrix& a, const Matrix& b, Eigen::Index r) {
  double dot = 0, na = 0, nb = 0;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    dot += a(r, j) * b(r, j);
    na += a(r, j) * a(r, j);
    nb += b(r, j) * b(r, j);
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double loss_oracle(const FeatureStack& c, const FeatureStack& a, bool image, bool fusion) {
  double s = 0;
  if (image) {
    for (std::size_t i = 0; i < c.image_blocks.size(); ++i)
      for (Eigen::Index r = 0; r < c.image_blocks[i].rows(); ++r) s += cos_oracle(c.image_blocks[i], a.image_blocks[i], r);
  }
  if (fusion) {
    for (std::size_t i = 0; i < c.fusion_blocks.size(); ++i)
      for (Eigen::Index r = 0; r < c.fusion_blocks[i].rows(); ++r) s += cos_oracle(c.fusion_blocks[i], a.fusion_blocks[i], r);
  }
  return s;
}

class Bsa : public ::testing::Test {
 protected:
  modelzoo::PretrainedModel model = vlattack::testing::tiny_model();
  ImageTensor clean = random_image(1);
  TokenSequence text = TokenSequence::from_text("what color is the circle");
  AttackBudget budget = [] {
    AttackBudget b;
    b.total_iterations = 10;
    b.single_modal_iterations = 5;
    return b;
  }();
};

TEST_F(Bsa, CleanLossEqualsVectorCount) {
  const FeatureStack fs = model.forward_with_features(clean, text);
  EXPECT_NEAR(bsa_loss(fs, fs), static_cast<double>(fs.vector_count()), 1e-12);
  BsaObjective obj(model, clean, text);
  EXPECT_NEAR(obj.loss(clean, text), static_cast<double>(fs.vector_count()), 1e-12);
}

TEST_F(Bsa, LossMatchesOracleForEveryScope) {
  const FeatureStack c = model.forward_with_features(clean, text);
  const FeatureStack a = model.forward_with_features(random_image(2), TokenSequence::from_text("what color is the disk"));
  EXPECT_NEAR(bsa_loss(c, a), loss_oracle(c, a, true, true), 1e-10);
  EXPECT_NEAR(bsa_loss(c, a, LossScope::kImageEncoder), loss_oracle(c, a, true, false), 1e-10);
  EXPECT_NEAR(bsa_loss(c, a, LossScope::kFusionEncoder), loss_oracle(c, a, false, true), 1e-10);
  EXPECT_LT(bsa_loss(c, a), static_cast<double>(c.vector_count()));
}

TEST_F(Bsa, ShapeMismatchIsAnInputError) {
  const FeatureStack c = model.forward_with_features(clean, text);
  FeatureStack a = c;
  a.fusion_blocks.pop_back();
  EXPECT_THROW(bsa_loss(c, a), InputError);
  a = c;
  a.image_blocks[0] = Matrix::Zero(3, 3);
  EXPECT_THROW(bsa_loss(c, a), InputError);
  BsaObjective obj(model, clean, text);
  EXPECT_THROW(obj.loss(clean, TokenSequence::from_text("red")), InputError);
}

TEST_F(Bsa, GradientMatchesFiniteDifferences) {
  for (auto scope : {LossScope::kFull, LossScope::kImageEncoder, LossScope::kFusionEncoder}) {
    BsaObjective obj(model, clean, text, scope);
    const ImageTensor x = init_perturbation(clean, 0.1, 3);
    const LossAndGradient lg = obj.evaluate(x, text);
    EXPECT_NEAR(lg.loss, obj.loss(x, text), 1e-10);
    Rng rng(5);
    for (int t = 0; t < 12; ++t) {
      const auto i = static_cast<std::size_t>(rng.below(192));
      std::vector<double> up(x.pixels().begin(), x.pixels().end()), dn = up;
      if (up[i] < 1e-3 || up[i] > 1.0 - 1e-3) continue;
      up[i] += 1e-4;
      dn[i] -= 1e-4;
      const double fd = (obj.loss(ImageTensor(8, 8, 3, up), text) - obj.loss(ImageTensor(8, 8, 3, dn), text)) / 2e-4;
      EXPECT_NEAR(lg.gradient[i], fd, 1e-5 + 1e-4 * std::abs(fd));
    }
  }
}

TEST_F(Bsa, ImageScopeIgnoresTheText) {
  BsaObjective obj(model, clean, text, LossScope::kImageEncoder);
  const ImageTensor x = init_perturbation(clean, 0.1, 3);
  EXPECT_EQ(obj.evaluate(x, text).gradient,
            obj.evaluate(x, TokenSequence::from_text("find the big red box")).gradient);
}

TEST_F(Bsa, ProjectionMatchesClampOracle) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const double sigma = rng.uniform(0.0, 0.3);
    std::vector<double> raw(192);
    for (double& v : raw) v = rng.uniform(-0.5, 1.5);
    const ImageTensor p = project(clean, raw, sigma);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const double c = clean.pixels()[i];
      double want = raw[i];
      if (want > c + sigma) want = c + sigma;
      if (want < c - sigma) want = c - sigma;
      if (want > 1) want = 1;
      if (want < 0) want = 0;
      ASSERT_EQ(p.pixels()[i], want);
    }
    const ImageTensor again = project(clean, {p.pixels().begin(), p.pixels().end()}, sigma);
    EXPECT_EQ(again, p);
  }
}

TEST_F(Bsa, InitPerturbationStaysInBudget) {
  const ImageTensor a = init_perturbation(clean, 16.0 / 255.0, 4);
  EXPECT_LE(linf_distance(a, clean), 16.0 / 255.0);
  EXPECT_GT(linf_distance(a, clean), 0.0);
  EXPECT_EQ(a, init_perturbation(clean, 16.0 / 255.0, 4));
  EXPECT_NE(a, init_perturbation(clean, 16.0 / 255.0, 5));
  EXPECT_EQ(init_perturbation(clean, 0.0, 4), clean);
}

TEST_F(Bsa, StepMovesEachPixelBySignOnce) {
  BsaObjective obj(model, clean, text);
  const ImageTensor x = init_perturbation(clean, budget.sigma_i, 2);
  const LossAndGradient lg = obj.evaluate(x, text);
  const ImageTensor y = bsa_step(obj, x, text, budget);
  for (std::size_t i = 0; i < 192; ++i) {
    const double g = lg.gradient[i];
    const double raw = x.pixels()[i] - budget.step_size * (g > 0 ? 1.0 : g < 0 ? -1.0 : 0.0);
    const double c = clean.pixels()[i];
    const double want = std::clamp(std::clamp(raw, c - budget.sigma_i, c + budget.sigma_i), 0.0, 1.0);
    ASSERT_EQ(y.pixels()[i], want);
  }
}

TEST_F(Bsa, ZeroStepSizeKeepsTheIterate) {
  budget.step_size = 0.0;
  BsaObjective obj(model, clean, text);
  const ImageTensor x = init_perturbation(clean, budget.sigma_i, 2);
  EXPECT_EQ(bsa_step(obj, x, text, budget), x);
}

TEST_F(Bsa, AttackLowersTheLossWithinBudget) {
  BsaObjective obj(model, clean, text);
  std::vector<LossPoint> trace;
  budget.step_size = 2.0 / 255.0;
  const ImageTensor adv = bsa_attack(obj, 10, budget, 1, &trace);
  ASSERT_EQ(trace.size(), 10u);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(trace[static_cast<std::size_t>(i)].iteration, i + 1);
  EXPECT_LT(obj.loss(adv, text), trace.front().loss);
  EXPECT_LE(linf_distance(adv, clean), budget.sigma_i);
  EXPECT_EQ(adv, bsa_attack(obj, 10, budget, 1));
}

TEST_F(Bsa, MomentumMatchesOracle) {
  BsaObjective obj(model, clean, text);
  MomentumState state;
  std::vector<double> v(192, 0.0);
  ImageTensor x = init_perturbation(clean, budget.sigma_i, 2);
  for (int s = 0; s < 3; ++s) {
    const auto g = obj.evaluate(x, text).gradient;
    double l1 = 0;
    for (double gi : g) l1 += std::abs(gi);
    for (std::size_t i = 0; i < 192; ++i) v[i] = 0.8 * v[i] + g[i] / l1;
    x = bsa_step_momentum(obj, x, text, budget, state, 0.8);
    ASSERT_EQ(state.velocity.size(), 192u);
    for (std::size_t i = 0; i < 192; ++i) EXPECT_NEAR(state.velocity[i], v[i], 1e-15);
  }
  EXPECT_THROW(bsa_step_momentum(obj, x, text, budget, state, -1.0), ConfigurationError);
}

TEST_F(Bsa, MomentumWithoutMemoryIsPgd) {
  BsaObjective obj(model, clean, text);
  MomentumState state;
  const ImageTensor x = init_perturbation(clean, budget.sigma_i, 2);
  EXPECT_EQ(bsa_step_momentum(obj, x, text, budget, state, 0.0), bsa_step(obj, x, text, budget));
}

TEST_F(Bsa, NonFiniteGradientIsAnAttackError) {
  auto& params = model.network().params();
  params[0].value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const ImageTensor x = init_perturbation(clean, budget.sigma_i, 2);
  const PretrainedModel healthy = tiny_model();
  BsaObjective obj(healthy, clean, text);
  BsaObjective broken(model, clean, text);
  EXPECT_THROW(bsa_step(broken, x, text, budget), AttackError);
  EXPECT_NO_THROW(bsa_step(obj, x, text, budget));
}

TEST_F(Bsa, RunnerCarriesStateAcrossCalls) {
  BsaObjective obj(model, clean, text);
  BsaRunner split(obj, budget, {Optimizer::kMomentum, 1.0});
  ImageTensor a = split.run(split.initialize(3), text, 2);
  a = split.run(a, text, 3);
  BsaRunner whole(obj, budget, {Optimizer::kMomentum, 1.0});
  const ImageTensor b = whole.run(whole.initialize(3), text, 5);
  EXPECT_EQ(a, b);
  EXPECT_EQ(split.iterations(), 5);
  EXPECT_EQ(split.trace(), whole.trace());
  EXPECT_EQ(split.momentum().velocity, whole.momentum().velocity);
  EXPECT_EQ(split.trace().back().iteration, 5);
  EXPECT_THROW(split.run(a, text, -1), ConfigurationError);
}

TEST(AttackBudget, Validation) {
  AttackBudget b;
  EXPECT_NO_THROW(b.validate());
  b.sigma_i = 0.0;
  b.step_size = 0.0;
  b.sigma_s = 1.5;
  EXPECT_NO_THROW(b.validate());
  auto bad = [](auto mutate) {
    AttackBudget x;
    mutate(x);
    EXPECT_THROW(x.validate(), ConfigurationError);
  };
  bad([](AttackBudget& x) { x.sigma_i = -0.01; });
  bad([](AttackBudget& x) { x.sigma_i = 1.0; });
  bad([](AttackBudget& x) { x.sigma_s = 0.0; });
  bad([](AttackBudget& x) { x.single_modal_iterations = 0; });
  bad([](AttackBudget& x) { x.single_modal_iterations = 41; });
  bad([](AttackBudget& x) { x.step_size = -1.0; });
  bad([](AttackBudget& x) { x.max_modified_words = -1; });
  EXPECT_DOUBLE_EQ(AttackBudget::defaults_for(TaskKind::kGrounding).sigma_i, 4.0 / 255.0);
  EXPECT_DOUBLE_EQ(AttackBudget::defaults_for(TaskKind::kClassification).sigma_i, 16.0 / 255.0);
}

TEST(Optimizer, NamesRoundTrip) {
  for (auto o : {Optimizer::kPgd, Optimizer::kMomentum}) EXPECT_EQ(optimizer_from_string(to_string(o)), o);
  EXPECT_THROW(optimizer_from_string("adam"), ConfigurationError);
}

}  // namespace
