#pragma once

#include <vector>

#include "vlattack/modelzoo/model.hpp"
#include "vlattack/modelzoo/types.hpp"

namespace vlattack::modelzoo {

// What a task predicts. Classification tasks name one answer word per class so
// the encoder-decoder structure can emit them as tokens.
struct TaskSpec {
  TaskKind kind = TaskKind::kClassification;
  std::vector<int> class_words;

  int class_count() const { return static_cast<int>(class_words.size()); }
  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct LabeledExample {
  ImageTensor image;
  TokenSequence text;
  Answer label;
};

struct TaskData {
  TaskSpec spec;
  std::vector<LabeledExample> examples;
};

struct MatchingPair {
  ImageTensor image;
  TokenSequence text;
  bool match = false;
  int masked = -1;  // position of a word to predict from the rest, or -1
};

using PretrainingCorpus = std::vector<MatchingPair>;

// Spec of the image-text matching objective used during pre-training.
TaskSpec matching_spec();

// Deterministic forward pass producing a task prediction. All decoding on
// the encoder-decoder structure is greedy and constrained to the task's
// output tokens; generation stops at the end token or max_decode_length.
Prediction predict(const VisionLanguageModel& model, const TaskSpec& spec, const ImageTensor& image,
                   const TokenSequence& text);

}  // namespace vlattack::modelzoo
