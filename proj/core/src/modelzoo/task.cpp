#include "vlattack/modelzoo/task.hpp"

#include <algorithm>
#include <cmath>

#include "modelzoo/internal.hpp"

namespace vlattack::modelzoo {

namespace {

Eigen::RowVectorXd softmax(const Eigen::Ref<const Eigen::RowVectorXd>& logits) {
  const double mx = logits.maxCoeff();
  Eigen::RowVectorXd e = (logits.array() - mx).exp();
  return e / e.sum();
}

int argmax_among(const Eigen::RowVectorXd& probs, const std::vector<int>& allowed) {
  int best = allowed.front();
  for (int t : allowed) {
    if (probs(t) > probs(best)) best = t;
  }
  return best;
}

BoundingBox box_from_bins(const int bins[4], int image_size, int location_bins) {
  const int step = image_size / (location_bins - 1);
  const int ax = bins[0] * step, ay = bins[1] * step, bx = bins[2] * step, by = bins[3] * step;
  return {std::min(ax, bx), std::min(ay, by), std::max(ax, bx), std::max(ay, by)};
}

}  // namespace

TaskSpec matching_spec() {
  const Vocabulary& v = Vocabulary::standard();
  return {TaskKind::kClassification, {v.require_id("no"), v.require_id("yes")}};
}

std::vector<int> box_bins(const BoundingBox& box, int image_size, int location_bins) {
  const int step = image_size / (location_bins - 1);
  auto bin = [&](int c) { return std::clamp((c + step / 2) / step, 0, location_bins - 1); };
  return {bin(box.x1), bin(box.y1), bin(box.x2), bin(box.y2)};
}

std::vector<int> decoder_targets(const ModelConfig& config, const TaskSpec& spec, const Answer& label) {
  const OutputVocabulary out(config);
  std::vector<int> seq;
  switch (spec.kind) {
    case TaskKind::kClassification: {
      const int c = std::get<ClassLabel>(label).value;
      seq.push_back(out.word_token(spec.class_words.at(static_cast<std::size_t>(c))));
      break;
    }
    case TaskKind::kSequenceGeneration:
      for (int w : std::get<GeneratedTokens>(label).tokens) seq.push_back(out.word_token(w));
      break;
    case TaskKind::kGrounding:
      for (int b : box_bins(std::get<BoundingBox>(label), config.image_size, config.location_bins())) {
        seq.push_back(out.location_token(b));
      }
      break;
  }
  seq.push_back(OutputVocabulary::kEnd);
  return seq;
}

void check_task_compatible(const VisionLanguageModel& model, const TaskSpec& spec) {
  const ModelConfig& c = model.config();
  if (spec.kind == TaskKind::kClassification && spec.class_count() < 2) {
    throw ConfigurationError("classification needs at least two classes");
  }
  if (c.structure == Structure::kEncoderDecoder) return;
  switch (spec.kind) {
    case TaskKind::kClassification:
      if ((model.head_kind() != HeadKind::kClassifier && model.head_kind() != HeadKind::kMatching) ||
          model.head_outputs() != spec.class_count()) {
        throw ConfigurationError("classifier head does not match label space");
      }
      break;
    case TaskKind::kGrounding:
      if (model.head_kind() != HeadKind::kBox) throw ConfigurationError("grounding needs a box head");
      break;
    case TaskKind::kSequenceGeneration:
      throw ConfigurationError("sequence generation needs the encoder-decoder structure");
  }
}

Prediction predict(const VisionLanguageModel& model, const TaskSpec& spec, const ImageTensor& image,
                   const TokenSequence& text) {
  check_task_compatible(model, spec);
  model.check_inputs(image, text.tokens());
  const ModelConfig& c = model.config();
  ad::Tape tape;
  const auto p = model.bind(tape, false);
  const EncoderPass enc = model.encode(p, model.image_input(tape, image, false), text.tokens());

  if (c.structure == Structure::kEncoderOnly) {
    const Matrix& logits = model.head_logits(p, enc).value();
    if (spec.kind == TaskKind::kClassification) {
      const Eigen::RowVectorXd probs = softmax(logits.row(0));
      Eigen::Index best = 0;
      const double conf = probs.maxCoeff(&best);
      return {ClassLabel{static_cast<int>(best)}, conf};
    }
    int bins[4];
    double conf = 0.0;
    for (int r = 0; r < 4; ++r) {
      const Eigen::RowVectorXd probs = softmax(logits.row(r));
      Eigen::Index best = 0;
      conf += probs.maxCoeff(&best) / 4.0;
      bins[r] = static_cast<int>(best);
    }
    return {box_from_bins(bins, c.image_size, c.location_bins()), conf};
  }

  const OutputVocabulary out(c);
  std::vector<int> allowed;
  int fixed_length = 0;
  switch (spec.kind) {
    case TaskKind::kClassification:
      for (int w : spec.class_words) allowed.push_back(out.word_token(w));
      fixed_length = 1;
      break;
    case TaskKind::kGrounding:
      for (int b = 0; b < c.location_bins(); ++b) allowed.push_back(out.location_token(b));
      fixed_length = 4;
      break;
    case TaskKind::kSequenceGeneration:
      allowed.push_back(OutputVocabulary::kEnd);
      for (int w = Vocabulary::kSpecialCount; w < Vocabulary::standard().size(); ++w) {
        allowed.push_back(out.word_token(w));
      }
      break;
  }

  std::vector<int> prefix = {OutputVocabulary::kBegin};
  std::vector<int> emitted;
  double prob_sum = 0.0;
  int steps = 0;
  const int limit = fixed_length > 0 ? fixed_length : c.max_decode_length;
  while (steps < limit) {
    const Matrix& logits = model.decoder_logits(p, enc, prefix).value();
    const Eigen::RowVectorXd probs = softmax(logits.row(logits.rows() - 1));
    const int tok = argmax_among(probs, allowed);
    prob_sum += probs(tok);
    ++steps;
    if (tok == OutputVocabulary::kEnd) break;
    emitted.push_back(tok);
    prefix.push_back(tok);
  }
  const double conf = prob_sum / steps;

  switch (spec.kind) {
    case TaskKind::kClassification: {
      const int word = out.word_of(emitted.front());
      const auto it = std::find(spec.class_words.begin(), spec.class_words.end(), word);
      return {ClassLabel{static_cast<int>(it - spec.class_words.begin())}, conf};
    }
    case TaskKind::kGrounding: {
      int bins[4];
      for (int i = 0; i < 4; ++i) bins[i] = out.bin_of(emitted[static_cast<std::size_t>(i)]);
      return {box_from_bins(bins, c.image_size, c.location_bins()), conf};
    }
    case TaskKind::kSequenceGeneration: {
      GeneratedTokens g;
      for (int t : emitted) g.tokens.push_back(out.word_of(t));
      return {std::move(g), conf};
    }
  }
  return {};
}

}  // namespace vlattack::modelzoo
