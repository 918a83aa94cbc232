#include "vlattack/blackbox/blackbox.hpp"

#include <algorithm>
#include <cmath>

#include "vlattack/modelzoo/task.hpp"

namespace vlattack::blackbox {

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::kImage: return "image";
    case Stage::kText: return "text";
    case Stage::kMultimodal: return "multimodal";
  }
  return "unknown";
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const int ix = std::max(0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const int iy = std::max(0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const long inter = static_cast<long>(ix) * iy;
  const long uni = static_cast<long>(a.area()) + b.area() - inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

bool is_adversarial(const Prediction& pred, const Prediction& original, TaskKind kind) {
  if (kind_of(pred.answer) != kind || kind_of(original.answer) != kind) {
    throw InputError("prediction kind does not match task kind");
  }
  switch (kind) {
    case TaskKind::kClassification:
      return std::get<ClassLabel>(pred.answer) != std::get<ClassLabel>(original.answer);
    case TaskKind::kSequenceGeneration:
      return std::get<GeneratedTokens>(pred.answer) != std::get<GeneratedTokens>(original.answer);
    case TaskKind::kGrounding:
      return iou(std::get<BoundingBox>(pred.answer), std::get<BoundingBox>(original.answer)) <= 0.5;
  }
  return false;
}

bool is_correct(const Prediction& pred, const Answer& truth, TaskKind kind) {
  return !is_adversarial(pred, Prediction{truth, 1.0}, kind);
}

Prediction TaskGateway::predict(const FineTunedTask& task, const ImageTensor& image, const TokenSequence& text) {
  return modelzoo::predict(task.network_, task.spec_, image, text);
}

QuerySession::QuerySession(const FineTunedTask& task, ImageTensor original_image, TokenSequence original_text,
                           Constraints constraints, SentenceEncoder encoder, ScoreMode mode)
    : task_(&task),
      image_(std::move(original_image)),
      text_(std::move(original_text)),
      constraints_(constraints),
      encoder_(std::move(encoder)),
      mode_(mode) {
  if (!(constraints_.sigma_i >= 0.0) || !std::isfinite(constraints_.sigma_s) || constraints_.max_modified_words < 0) {
    throw ConfigurationError("invalid query constraints");
  }
  original_ = reveal(TaskGateway::predict(*task_, image_, text_));
}

Prediction QuerySession::reveal(Prediction p) const {
  if (mode_ == ScoreMode::kHardLabel) p.confidence = 1.0;
  return p;
}

void QuerySession::check_image(const ImageTensor& image) {
  if (!image.same_shape(image_)) {
    ++ledger_.constraint_violations;
    throw ConstraintViolation("queried image has a different shape");
  }
  // Same bound expressions as the projection in the attack, so a projected
  // image passes exactly.
  const double sigma = constraints_.sigma_i;
  auto px = image.pixels();
  auto ref = image_.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (!(px[i] >= 0.0 && px[i] <= 1.0) || px[i] < ref[i] - sigma || px[i] > ref[i] + sigma) {
      ++ledger_.constraint_violations;
      throw ConstraintViolation("queried image leaves the l-infinity ball or pixel range");
    }
  }
}

void QuerySession::check_text(const TokenSequence& text) {
  if (text == text_) return;
  if (text.size() != text_.size() || hamming_distance(text, text_) > constraints_.max_modified_words) {
    ++ledger_.constraint_violations;
    throw ConstraintViolation("queried text modifies too many words");
  }
  if (!(encoder_.similarity(text, text_) > constraints_.sigma_s)) {
    ++ledger_.constraint_violations;
    throw ConstraintViolation("queried text falls below the semantic similarity threshold");
  }
}

Prediction QuerySession::query(const ImageTensor& image, const TokenSequence& text, Stage stage) {
  check_image(image);
  check_text(text);
  ++ledger_.count;
  ++ledger_.by_stage[static_cast<std::size_t>(stage)];
  return reveal(TaskGateway::predict(*task_, image, text));
}

Prediction QuerySession::probe(const TokenSequence& text) {
  if (text.size() != text_.size()) throw InputError("probe must keep the sentence length");
  ++ledger_.probes;
  return reveal(TaskGateway::predict(*task_, image_, text));
}

}  // namespace vlattack::blackbox
