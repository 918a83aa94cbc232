#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace vlattack {

// Error families. Each module throws the one matching the failure class.
struct ConfigurationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AttackError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class TaskKind { kClassification, kSequenceGeneration, kGrounding };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

// H x W x C image with every value in [0, 1], HWC order.
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, int channels);
  ImageTensor(int height, int width, int channels, std::vector<double> pixels);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return pixels_.size(); }

  double at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }
  void set(int y, int x, int c, double value);

  std::span<const double> pixels() const { return pixels_; }
  bool same_shape(const ImageTensor& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> pixels_;
};

// l-infinity distance between two same-shape images.
double linf_distance(const ImageTensor& a, const ImageTensor& b);

// Token ids over the standard vocabulary.
class TokenSequence {
 public:
  TokenSequence() = default;
  explicit TokenSequence(std::vector<int> tokens);
  static TokenSequence from_text(const std::string& text);

  const std::vector<int>& tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  int operator[](std::size_t i) const { return tokens_[i]; }

  TokenSequence with_token(std::size_t position, int token) const;
  std::string text() const;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;

 private:
  std::vector<int> tokens_;
};

// Number of positions at which two equal-length sequences differ; length
// mismatch counts every position of the longer one.
int hamming_distance(const TokenSequence& a, const TokenSequence& b);

// Pixel-unit box; edges at x1/x2 so the area is (x2-x1)*(y2-y1).
struct BoundingBox {
  int x1 = 0;
  int y1 = 0;
  int x2 = 0;
  int y2 = 0;

  int area() const { return (x2 - x1) * (y2 - y1); }
  bool valid_within(int width, int height) const {
    return 0 <= x1 && x1 <= x2 && x2 <= width && 0 <= y1 && y1 <= y2 && y2 <= height;
  }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct ClassLabel {
  int value = 0;
  friend bool operator==(const ClassLabel&, const ClassLabel&) = default;
};

struct GeneratedTokens {
  std::vector<int> tokens;  // word ids, end token stripped
  friend bool operator==(const GeneratedTokens&, const GeneratedTokens&) = default;
};

using Answer = std::variant<ClassLabel, GeneratedTokens, BoundingBox>;

TaskKind kind_of(const Answer& answer);

struct Prediction {
  Answer answer;
  double confidence = 0.0;
};

}  // namespace vlattack
