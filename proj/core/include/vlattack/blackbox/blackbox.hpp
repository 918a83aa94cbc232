#pragma once

#include <array>
#include <stdexcept>
#include <string>

#include "vlattack/modelzoo/pretrained.hpp"
#include "vlattack/modelzoo/types.hpp"

namespace vlattack::blackbox {

using modelzoo::FineTunedTask;
using modelzoo::SentenceEncoder;

enum class Stage { kImage = 0, kText = 1, kMultimodal = 2 };
std::string to_string(Stage stage);

struct QueryLedger {
  int count = 0;
  std::array<int, 3> by_stage{};
  // Word-importance probes (clean image, one word masked). Kept apart from
  // `count`, which covers candidate adversarial pairs only.
  int probes = 0;
  int constraint_violations = 0;

  int stage(Stage s) const { return by_stage[static_cast<std::size_t>(s)]; }
};

// Query budget relative to the attack's originals.
struct Constraints {
  double sigma_i = 16.0 / 255.0;
  double sigma_s = 0.95;
  int max_modified_words = 1;
};

// A queried pair broke the perturbation budget: a bug in attack code.
struct ConstraintViolation : std::logic_error {
  using std::logic_error::logic_error;
};

// What the black box reveals alongside the prediction.
enum class ScoreMode { kScores, kHardLabel };

// |a ∩ b| / |a ∪ b| with pixel-edge boxes; 0 when the union is empty.
double iou(const BoundingBox& a, const BoundingBox& b);

// Success indicator against the reference prediction. Classification: label
// differs. Generation: any token or length difference. Grounding: IoU <= 0.5.
// InputError when either prediction is not of `kind`.
bool is_adversarial(const Prediction& pred, const Prediction& original, TaskKind kind);

// Whether a clean prediction counts as correct against ground truth
// (grounding: IoU > 0.5).
bool is_correct(const Prediction& pred, const Answer& truth, TaskKind kind);

// Sole path from attack or evaluation code into S.
class TaskGateway {
 public:
  static Prediction predict(const FineTunedTask& task, const ImageTensor& image, const TokenSequence& text);
};

// Query handle for one attack instance on one (I, T). Every query is checked
// against the budget and recorded in the ledger. Not thread-safe; use one
// session per attack.
class QuerySession {
 public:
  QuerySession(const FineTunedTask& task, ImageTensor original_image, TokenSequence original_text,
               Constraints constraints, SentenceEncoder encoder, ScoreMode mode = ScoreMode::kScores);

  // The reference prediction y on the clean pair. Computed once at
  // construction and not counted as a query.
  const Prediction& original_prediction() const { return original_; }
  TaskKind kind() const { return task_->kind(); }
  const ImageTensor& original_image() const { return image_; }
  const TokenSequence& original_text() const { return text_; }
  const Constraints& constraints() const { return constraints_; }
  const SentenceEncoder& sentence_encoder() const { return encoder_; }
  const QueryLedger& ledger() const { return ledger_; }

  // Throws ConstraintViolation when (image, text) leaves the budget.
  Prediction query(const ImageTensor& image, const TokenSequence& text, Stage stage);
  // Clean image with a masked text; only the image budget is checked.
  Prediction probe(const TokenSequence& text);

  bool flips(const Prediction& pred) const { return is_adversarial(pred, original_, kind()); }

 private:
  void check_image(const ImageTensor& image);
  void check_text(const TokenSequence& text);
  Prediction reveal(Prediction p) const;

  const FineTunedTask* task_;
  ImageTensor image_;
  TokenSequence text_;
  Constraints constraints_;
  SentenceEncoder encoder_;
  ScoreMode mode_;
  Prediction original_;
  QueryLedger ledger_;
};

}  // namespace vlattack::blackbox
