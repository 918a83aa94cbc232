#include <cmath>
#include <functional>
#include <numeric>

#include "modelzoo/internal.hpp"
#include "vlattack/modelzoo/pretrained.hpp"
#include "vlattack/modelzoo/vocabulary.hpp"
#include "vlattack/util/parallel.hpp"
#include "vlattack/util/random.hpp"

namespace vlattack::modelzoo {

namespace {

// Gradients are reduced over a fixed number of chunks so results do not depend
// on how many workers ran them.
constexpr std::size_t kChunks = 8;

using SampleLoss = std::function<ad::Var(const VisionLanguageModel::Bound&, std::size_t index)>;

class Adam {
 public:
  explicit Adam(const ParamStore& params) {
    for (const auto& t : params) {
      m_.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
      v_.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
    }
  }

  void step(ParamStore& params, const std::vector<Matrix>& grads, double lr, std::size_t backbone, double head_scale) {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grads[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grads[i].cwiseProduct(grads[i]);
      const double rate = i < backbone ? lr : lr * head_scale;
      params[i].value.array() -= rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + kEps);
    }
  }

 private:
  std::vector<Matrix> m_, v_;
  int t_ = 0;
};

void train(VisionLanguageModel& net, std::size_t n, const SampleLoss& loss_fn, const TrainingRecipe& recipe,
           TrainingLog* log) {
  if (n == 0) throw TrainingError("training data is empty");
  if (recipe.epochs < 0 || recipe.batch_size <= 0 || !(recipe.learning_rate > 0.0) || !(recipe.head_lr_scale > 0.0)) {
    throw ConfigurationError("invalid training recipe");
  }
  ParamStore& params = net.params();
  Adam adam(params);
  Rng rng(stream_seed(recipe.seed, 0x747261696eULL));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  const std::size_t batch = static_cast<std::size_t>(recipe.batch_size);
  const std::size_t batches_per_epoch = (n + batch - 1) / batch;
  const double total_steps = static_cast<double>(batches_per_epoch) * recipe.epochs;
  std::size_t step = 0;

  std::vector<std::vector<Matrix>> chunk_grads(kChunks);
  std::vector<double> chunk_loss(kChunks);
  std::vector<Matrix> grads(params.size());

  for (int epoch = 0; epoch < recipe.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t count = std::min(batch, n - start);
      parallel_for(kChunks, [&](std::size_t c) {
        auto& g = chunk_grads[c];
        g.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) g[i].setZero(params[i].value.rows(), params[i].value.cols());
        chunk_loss[c] = 0.0;
        for (std::size_t s = c; s < count; s += kChunks) {
          ad::Tape tape;
          const auto bound = net.bind(tape, true);
          ad::Var loss = loss_fn(bound, order[start + s]);
          chunk_loss[c] += loss.scalar();
          tape.backward(loss);
          for (std::size_t i = 0; i < params.size(); ++i) {
            if (bound[i].has_grad()) g[i] += bound[i].grad();
          }
        }
      });
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < params.size(); ++i) grads[i].setZero(params[i].value.rows(), params[i].value.cols());
      for (std::size_t c = 0; c < kChunks; ++c) {
        batch_loss += chunk_loss[c];
        for (std::size_t i = 0; i < params.size(); ++i) grads[i] += chunk_grads[c][i];
      }
      if (!std::isfinite(batch_loss)) throw TrainingError("training loss became non-finite");
      double norm_sq = 0.0;
      for (auto& g : grads) {
        g /= static_cast<double>(count);
        norm_sq += g.squaredNorm();
      }
      const double norm = std::sqrt(norm_sq);
      if (!std::isfinite(norm)) throw TrainingError("gradient became non-finite");
      if (recipe.grad_clip > 0.0 && norm > recipe.grad_clip) {
        for (auto& g : grads) g *= recipe.grad_clip / norm;
      }
      // cosine decay to 10% of the base rate
      const double progress = total_steps > 0 ? static_cast<double>(step) / total_steps : 0.0;
      const double lr = recipe.learning_rate * (0.55 + 0.45 * std::cos(progress * 3.141592653589793));
      adam.step(params, grads, lr, net.backbone_size(), recipe.head_lr_scale);
      ++step;
      epoch_loss += batch_loss;
    }
    if (log) log->epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
}

// Loss of one labeled example under the model's structure.
ad::Var task_loss(const VisionLanguageModel& net, const VisionLanguageModel::Bound& p, const TaskSpec& spec,
                  const ImageTensor& image, const TokenSequence& text, const Answer& label) {
  net.check_inputs(image, text.tokens());
  ad::Tape& tape = p.tape();
  const EncoderPass enc = net.encode(p, net.image_input(tape, image, false), text.tokens());
  if (net.config().structure == Structure::kEncoderOnly) {
    ad::Var logits = net.head_logits(p, enc);
    if (spec.kind == TaskKind::kClassification) {
      const int target[] = {std::get<ClassLabel>(label).value};
      return ad::softmax_cross_entropy(logits, target);
    }
    const auto bins = box_bins(std::get<BoundingBox>(label), net.config().image_size,
                               net.config().location_bins());
    return ad::scale(ad::softmax_cross_entropy(logits, bins), 4.0);
  }
  const std::vector<int> targets = decoder_targets(net.config(), spec, label);
  std::vector<int> prefix = {OutputVocabulary::kBegin};
  prefix.insert(prefix.end(), targets.begin(), targets.end() - 1);
  return ad::scale(ad::softmax_cross_entropy(net.decoder_logits(p, enc, prefix), targets),
                   static_cast<double>(targets.size()));
}

// Cross-entropy for the word at pair.masked, predicted with that word hidden.
ad::Var masked_word_loss(const VisionLanguageModel& net, const VisionLanguageModel::Bound& p, const MatchingPair& pair) {
  const auto& vocab = Vocabulary::standard();
  std::vector<int> tokens = pair.text.tokens();
  if (pair.masked >= static_cast<int>(tokens.size()) || vocab.is_special(tokens[static_cast<std::size_t>(pair.masked)])) {
    throw InputError("masked position must hold a word");
  }
  const int word = tokens[static_cast<std::size_t>(pair.masked)];
  tokens[static_cast<std::size_t>(pair.masked)] = Vocabulary::kUnk;
  if (net.config().structure == Structure::kEncoderOnly) {
    net.check_inputs(pair.image, tokens);
    const EncoderPass enc = net.encode(p, net.image_input(p.tape(), pair.image, false), tokens);
    const int target[] = {word};
    return ad::softmax_cross_entropy(net.masked_word_logits(p, enc), target);
  }
  return task_loss(net, p, TaskSpec{TaskKind::kClassification, {word}}, pair.image, TokenSequence(tokens), ClassLabel{0});
}

void check_labels(const TaskData& data) {
  for (const auto& ex : data.examples) {
    if (kind_of(ex.label) != data.spec.kind) throw ConfigurationError("label kind does not match task kind");
    if (const auto* c = std::get_if<ClassLabel>(&ex.label)) {
      if (c->value < 0 || c->value >= data.spec.class_count()) throw ConfigurationError("class label out of range");
    }
  }
}

}  // namespace

PretrainedModel build_pretrained(const ModelConfig& config, std::uint64_t seed) {
  return PretrainedModel(VisionLanguageModel(config, seed));
}

PretrainedModel pretrain(PretrainedModel model, const PretrainingCorpus& corpus, const TrainingRecipe& recipe,
                         TrainingLog* log) {
  if (corpus.empty()) throw TrainingError("pre-training corpus is empty");
  VisionLanguageModel& net = model.network();
  const TaskSpec spec = matching_spec();
  train(net, corpus.size(),
        [&](const VisionLanguageModel::Bound& p, std::size_t i) {
          const MatchingPair& pair = corpus[i];
          ad::Var loss = task_loss(net, p, spec, pair.image, pair.text, ClassLabel{pair.match ? 1 : 0});
          if (pair.masked >= 0) loss = ad::add(loss, masked_word_loss(net, p, pair));
          return loss;
        },
        recipe, log);
  return model;
}

FineTunedTask fine_tune(const PretrainedModel& model, const TaskData& data, const TrainingRecipe& recipe,
                        TrainingLog* log) {
  if (data.examples.empty()) throw TrainingError("task data is empty");
  check_labels(data);
  VisionLanguageModel net = model.network();
  if (net.config().structure == Structure::kEncoderOnly) {
    switch (data.spec.kind) {
      case TaskKind::kClassification:
        net.reset_head(HeadKind::kClassifier, data.spec.class_count(), stream_seed(recipe.seed, 0x68656164ULL));
        break;
      case TaskKind::kGrounding:
        net.reset_head(HeadKind::kBox, 1, stream_seed(recipe.seed, 0x68656164ULL));
        break;
      case TaskKind::kSequenceGeneration:
        throw ConfigurationError("sequence generation needs the encoder-decoder structure");
    }
  }
  check_task_compatible(net, data.spec);
  train(net, data.examples.size(),
        [&](const VisionLanguageModel::Bound& p, std::size_t i) {
          const LabeledExample& ex = data.examples[i];
          return task_loss(net, p, data.spec, ex.image, ex.text, ex.label);
        },
        recipe, log);
  return detail::TaskAccess::make(std::move(net), data.spec);
}

Eigen::RowVectorXd SentenceEncoder::encode(const TokenSequence& text) const {
  if (text.empty()) throw InputError("cannot encode an empty sentence");
  Eigen::RowVectorXd pooled = Eigen::RowVectorXd::Zero(table_.cols());
  for (int t : text.tokens()) {
    if (t < 0 || t >= table_.rows()) throw InputError("token id out of vocabulary");
    pooled += table_.row(t);
  }
  pooled /= static_cast<double>(text.size());
  const double n = pooled.norm();
  if (n < 1e-12) throw InputError("sentence embedding has zero norm");
  return pooled / n;
}

double SentenceEncoder::similarity(const TokenSequence& a, const TokenSequence& b) const {
  return encode(a).dot(encode(b));
}

Eigen::RowVectorXd encode_sentence(const PretrainedModel& model, const TokenSequence& text) {
  return model.sentence_encoder().encode(text);
}

}  // namespace vlattack::modelzoo
