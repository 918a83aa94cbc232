#include "vlattack/modelzoo/types.hpp"

#include <algorithm>
#include <cmath>

#include "vlattack/modelzoo/vocabulary.hpp"

namespace vlattack {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kClassification: return "classification";
    case TaskKind::kSequenceGeneration: return "generation";
    case TaskKind::kGrounding: return "grounding";
  }
  return "unknown";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "classification") return TaskKind::kClassification;
  if (name == "generation" || name == "sequence_generation") return TaskKind::kSequenceGeneration;
  if (name == "grounding") return TaskKind::kGrounding;
  throw ConfigurationError("unknown task kind: " + name);
}

ImageTensor::ImageTensor(int height, int width, int channels)
    : ImageTensor(height, width, channels,
                  std::vector<double>(static_cast<std::size_t>(std::max(height, 0)) *
                                      std::max(width, 0) * std::max(channels, 0))) {}

ImageTensor::ImageTensor(int height, int width, int channels, std::vector<double> pixels)
    : height_(height), width_(width), channels_(channels), pixels_(std::move(pixels)) {
  if (height <= 0 || width <= 0 || channels <= 0) throw InputError("image dimensions must be positive");
  if (pixels_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw InputError("pixel count does not match image shape");
  }
  for (double v : pixels_) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("pixel value outside [0,1]");
  }
}

void ImageTensor::set(int y, int x, int c, double value) {
  if (!(value >= 0.0 && value <= 1.0)) throw InputError("pixel value outside [0,1]");
  pixels_[index(y, x, c)] = value;
}

double linf_distance(const ImageTensor& a, const ImageTensor& b) {
  if (!a.same_shape(b)) throw InputError("linf_distance shape mismatch");
  double m = 0.0;
  auto pa = a.pixels();
  auto pb = b.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) m = std::max(m, std::abs(pa[i] - pb[i]));
  return m;
}

TokenSequence::TokenSequence(std::vector<int> tokens) : tokens_(std::move(tokens)) {
  const auto& vocab = modelzoo::Vocabulary::standard();
  for (int t : tokens_) {
    if (t < 0 || t >= vocab.size()) throw InputError("token id out of vocabulary");
  }
}

TokenSequence TokenSequence::from_text(const std::string& text) {
  return TokenSequence(modelzoo::Vocabulary::standard().encode(text));
}

TokenSequence TokenSequence::with_token(std::size_t position, int token) const {
  if (position >= tokens_.size()) throw InputError("token position out of range");
  std::vector<int> copy = tokens_;
  copy[position] = token;
  return TokenSequence(std::move(copy));
}

std::string TokenSequence::text() const { return modelzoo::Vocabulary::standard().decode(tokens_); }

int hamming_distance(const TokenSequence& a, const TokenSequence& b) {
  if (a.size() != b.size()) return static_cast<int>(std::max(a.size(), b.size()));
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i] ? 1 : 0;
  return d;
}

TaskKind kind_of(const Answer& answer) {
  switch (answer.index()) {
    case 0: return TaskKind::kClassification;
    case 1: return TaskKind::kSequenceGeneration;
    default: return TaskKind::kGrounding;
  }
}

}  // namespace vlattack
