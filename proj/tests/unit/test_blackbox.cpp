#include <gtest/gtest.h>

#include "support/fixtures.hpp"
#include "vlattack/blackbox/blackbox.hpp"
#include "vlattack/util/random.hpp"

namespace {

using namespace vlattack;
using vlattack::testing::constant_task;
using vlattack::testing::held_out;
using vlattack::testing::tiny_model;
using vlattack::testing::trained_lab;
using namespace vlattack::blackbox;

// Counts covered unit cells on the pixel grid.
double grid_iou(const BoundingBox& a, const BoundingBox& b) {
  long inter = 0, uni = 0;
  for (int y = 0; y < 40; ++y) {
    for (int x = 0; x < 40; ++x) {
      const bool in_a = a.x1 <= x && x < a.x2 && a.y1 <= y && y < a.y2;
      const bool in_b = b.x1 <= x && x < b.x2 && b.y1 <= y && y < b.y2;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

BoundingBox random_box(Rng& rng) {
  const int x1 = rng.below(33), y1 = rng.below(33);
  return {x1, y1, x1 + rng.below(33 - x1), y1 + rng.below(33 - y1)};
}

TEST(Iou, MatchesGridCountOracle) {
  Rng rng(17);
  for (int i = 0; i < 2000; ++i) {
    const BoundingBox a = random_box(rng), b = random_box(rng);
    EXPECT_DOUBLE_EQ(iou(a, b), grid_iou(a, b));
    EXPECT_DOUBLE_EQ(iou(a, b), iou(b, a));
  }
}

TEST(Iou, EdgeCases) {
  EXPECT_DOUBLE_EQ(iou({0, 0, 4, 4}, {0, 0, 4, 4}), 1.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 4, 4}, {4, 0, 8, 4}), 0.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 0, 0}, {0, 0, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 4, 4}, {0, 0, 4, 2}), 0.5);
}

TEST(IsAdversarial, Classification) {
  const Prediction y{ClassLabel{3}, 0.9};
  EXPECT_FALSE(is_adversarial({ClassLabel{3}, 0.2}, y, TaskKind::kClassification));
  EXPECT_TRUE(is_adversarial({ClassLabel{4}, 0.9}, y, TaskKind::kClassification));
}

TEST(IsAdversarial, GenerationComparesWholeSequence) {
  const Prediction y{GeneratedTokens{{5, 6}}, 0.9};
  EXPECT_FALSE(is_adversarial({GeneratedTokens{{5, 6}}, 0.1}, y, TaskKind::kSequenceGeneration));
  EXPECT_TRUE(is_adversarial({GeneratedTokens{{5}}, 0.9}, y, TaskKind::kSequenceGeneration));
  EXPECT_TRUE(is_adversarial({GeneratedTokens{{5, 6, 7}}, 0.9}, y, TaskKind::kSequenceGeneration));
  EXPECT_TRUE(is_adversarial({GeneratedTokens{{6, 5}}, 0.9}, y, TaskKind::kSequenceGeneration));
}

TEST(IsAdversarial, GroundingThresholdIsInclusive) {
  const Prediction y{BoundingBox{0, 0, 4, 4}, 0.9};
  EXPECT_TRUE(is_adversarial({BoundingBox{0, 0, 4, 2}, 0.9}, y, TaskKind::kGrounding));  // exactly 0.5
  EXPECT_FALSE(is_adversarial({BoundingBox{0, 0, 4, 3}, 0.9}, y, TaskKind::kGrounding));
}

TEST(IsAdversarial, KindMismatchIsAnInputError) {
  EXPECT_THROW(is_adversarial({ClassLabel{1}, 1.0}, {ClassLabel{1}, 1.0}, TaskKind::kGrounding), InputError);
  EXPECT_TRUE(is_correct({ClassLabel{2}, 0.3}, ClassLabel{2}, TaskKind::kClassification));
  EXPECT_FALSE(is_correct({BoundingBox{0, 0, 4, 2}, 0.3}, BoundingBox{0, 0, 4, 4}, TaskKind::kGrounding));
}

class Session : public ::testing::Test {
 protected:
  static const modelzoo::FineTunedTask& task() {
    static const auto t = vlattack::testing::constant_task(modelzoo::ModelConfig::tiny(), 4, 2);
    return t;
  }
  static const modelzoo::SentenceEncoder& encoder() {
    static const auto e = modelzoo::build_pretrained(modelzoo::ModelConfig::tiny(), 7).sentence_encoder();
    return e;
  }

  ImageTensor image = ImageTensor(8, 8, 3, std::vector<double>(192, 0.5));
  TokenSequence text = TokenSequence::from_text("what color is the circle");

  QuerySession make(Constraints c = {}, ScoreMode mode = ScoreMode::kScores) {
    return QuerySession(task(), image, text, c, encoder(), mode);
  }
};

TEST_F(Session, OriginalPredictionIsFree) {
  QuerySession s = make();
  EXPECT_EQ(std::get<ClassLabel>(s.original_prediction().answer).value, 2);
  EXPECT_EQ(s.ledger().count, 0);
  EXPECT_EQ(s.ledger().probes, 0);
}

TEST_F(Session, CountsQueriesPerStage) {
  QuerySession s = make();
  s.query(image, text, Stage::kImage);
  s.query(image, text, Stage::kImage);
  s.query(image, text, Stage::kMultimodal);
  EXPECT_EQ(s.ledger().count, 3);
  EXPECT_EQ(s.ledger().stage(Stage::kImage), 2);
  EXPECT_EQ(s.ledger().stage(Stage::kText), 0);
  EXPECT_EQ(s.ledger().stage(Stage::kMultimodal), 1);
}

TEST_F(Session, ProbesAreLedgeredApart) {
  QuerySession s = make();
  s.probe(text.with_token(1, modelzoo::Vocabulary::kUnk));
  EXPECT_EQ(s.ledger().probes, 1);
  EXPECT_EQ(s.ledger().count, 0);
  EXPECT_THROW(s.probe(TokenSequence::from_text("red")), InputError);
}

TEST_F(Session, ImageOnTheBallEdgePasses) {
  QuerySession s = make();
  std::vector<double> px(192, 0.5 + 16.0 / 255.0);
  px[0] = 0.5 - 16.0 / 255.0;
  EXPECT_NO_THROW(s.query(ImageTensor(8, 8, 3, px), text, Stage::kImage));
  EXPECT_EQ(s.ledger().constraint_violations, 0);
}

TEST_F(Session, ImageOutsideTheBallIsRejected) {
  QuerySession s = make();
  std::vector<double> px(192, 0.5);
  px[7] = 0.5 + 16.0 / 255.0 + 1e-9;
  EXPECT_THROW(s.query(ImageTensor(8, 8, 3, px), text, Stage::kImage), ConstraintViolation);
  EXPECT_THROW(s.query(ImageTensor(4, 4, 3), text, Stage::kImage), ConstraintViolation);
  EXPECT_EQ(s.ledger().constraint_violations, 2);
  EXPECT_EQ(s.ledger().count, 0);
}

TEST_F(Session, PixelRangeIsEnforced) {
  image = ImageTensor(8, 8, 3, std::vector<double>(192, 0.99));
  QuerySession s = make();
  std::vector<double> px(192, 0.99);
  px[3] = 1.0;
  EXPECT_NO_THROW(s.query(ImageTensor(8, 8, 3, px), text, Stage::kImage));
  px[3] = 1.0 + 1e-9;
  EXPECT_THROW(ImageTensor(8, 8, 3, px), InputError);
}

TEST_F(Session, TextBudget) {
  Constraints c;
  c.sigma_s = -1.0;
  QuerySession s = make(c);
  const int red = modelzoo::Vocabulary::standard().require_id("red");
  const int blue = modelzoo::Vocabulary::standard().require_id("blue");
  EXPECT_NO_THROW(s.query(image, text.with_token(4, red), Stage::kText));
  EXPECT_THROW(s.query(image, text.with_token(4, red).with_token(1, blue), Stage::kText), ConstraintViolation);
  EXPECT_THROW(s.query(image, TokenSequence::from_text("what color is the circle now"), Stage::kText),
               ConstraintViolation);
  EXPECT_EQ(s.ledger().count, 1);
}

TEST_F(Session, SimilarityGateIsStrict) {
  const int red = modelzoo::Vocabulary::standard().require_id("red");
  const TokenSequence swapped = text.with_token(4, red);
  Constraints c;
  c.sigma_s = encoder().similarity(text, swapped);
  QuerySession s = make(c);
  EXPECT_THROW(s.query(image, swapped, Stage::kText), ConstraintViolation);
  c.sigma_s = std::nextafter(c.sigma_s, -1.0);
  QuerySession t = make(c);
  EXPECT_NO_THROW(t.query(image, swapped, Stage::kText));
}

TEST_F(Session, HardLabelHidesScores) {
  QuerySession s = make({}, ScoreMode::kHardLabel);
  EXPECT_EQ(s.original_prediction().confidence, 1.0);
  EXPECT_EQ(s.query(image, text, Stage::kImage).confidence, 1.0);
  QuerySession t = make();
  EXPECT_LT(t.original_prediction().confidence, 1.0);
}

TEST_F(Session, RejectsMalformedConstraints) {
  Constraints c;
  c.sigma_i = -0.1;
  EXPECT_THROW(make(c), ConfigurationError);
  c = {};
  c.max_modified_words = -1;
  EXPECT_THROW(make(c), ConfigurationError);
  c = {};
  c.sigma_s = std::nan("");
  EXPECT_THROW(make(c), ConfigurationError);
}

TEST(ConstantTask, AlwaysAnswersTheSameLabel) {
  const auto task = vlattack::testing::constant_task(modelzoo::ModelConfig::tiny(), 3, 1);
  Rng rng(4);
  for (int i = 0; i < 10; ++i) {
    std::vector<double> px(192);
    for (double& v : px) v = rng.uniform();
    const Prediction p = TaskGateway::predict(task, ImageTensor(8, 8, 3, px), TokenSequence::from_text("red"));
    EXPECT_EQ(std::get<ClassLabel>(p.answer).value, 1);
  }
}

}  // namespace
