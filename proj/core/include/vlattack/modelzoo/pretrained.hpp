#pragma once

#include <cstdint>
#include <vector>

#include "vlattack/modelzoo/model.hpp"
#include "vlattack/modelzoo/task.hpp"

namespace vlattack::blackbox {
class TaskGateway;
}

namespace vlattack::modelzoo {

namespace detail {
struct TaskAccess;
}

// Mean-pooled frozen word embeddings, L2-normalized. Stands in for a
// universal sentence encoder when gating text perturbations.
class SentenceEncoder {
 public:
  explicit SentenceEncoder(Matrix word_table) : table_(std::move(word_table)) {}

  // InputError on an empty sequence or a zero pooled vector.
  Eigen::RowVectorXd encode(const TokenSequence& text) const;
  double similarity(const TokenSequence& a, const TokenSequence& b) const;

  const Matrix& table() const { return table_; }

 private:
  Matrix table_;
};

// White-box surrogate F. Attack code may read every parameter.
class PretrainedModel {
 public:
  explicit PretrainedModel(VisionLanguageModel network) : network_(std::move(network)) {}

  const VisionLanguageModel& network() const { return network_; }
  VisionLanguageModel& network() { return network_; }
  const ModelConfig& config() const { return network_.config(); }

  FeatureStack forward_with_features(const ImageTensor& image, const TokenSequence& text) const {
    return network_.features(image, text.tokens());
  }
  SentenceEncoder sentence_encoder() const { return SentenceEncoder(network_.word_table()); }

 private:
  VisionLanguageModel network_;
};

// Black-box target S. Parameters are reachable only through the blackbox
// gateway and checkpoint I/O.
class FineTunedTask {
 public:
  TaskKind kind() const { return spec_.kind; }
  const TaskSpec& spec() const { return spec_; }
  Structure structure() const { return network_.config().structure; }

 private:
  friend class blackbox::TaskGateway;
  friend struct detail::TaskAccess;

  FineTunedTask(VisionLanguageModel network, TaskSpec spec)
      : network_(std::move(network)), spec_(std::move(spec)) {}

  VisionLanguageModel network_;
  TaskSpec spec_;
};

struct TrainingRecipe {
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  double head_lr_scale = 1.0;  // applied to parameters past the backbone
};

struct TrainingLog {
  std::vector<double> epoch_loss;
};

PretrainedModel build_pretrained(const ModelConfig& config, std::uint64_t seed);

// Image-text matching on the corpus. TrainingError on empty corpus or a
// non-finite loss.
PretrainedModel pretrain(PretrainedModel model, const PretrainingCorpus& corpus, const TrainingRecipe& recipe,
                         TrainingLog* log = nullptr);

// Full fine-tuning: every backbone parameter is updated. Encoder-only models
// get a fresh head for the task; encoder-decoder models keep their decoder.
FineTunedTask fine_tune(const PretrainedModel& model, const TaskData& data, const TrainingRecipe& recipe,
                        TrainingLog* log = nullptr);

Eigen::RowVectorXd encode_sentence(const PretrainedModel& model, const TokenSequence& text);

}  // namespace vlattack::modelzoo
