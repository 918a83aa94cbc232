#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vlattack/autodiff/tape.hpp"
#include "vlattack/modelzoo/config.hpp"
#include "vlattack/modelzoo/types.hpp"

namespace vlattack::modelzoo {

using ad::Matrix;

struct NamedTensor {
  std::string name;
  Matrix value;
};

// Ordered, named parameter tensors. Order is part of the checkpoint contract.
class ParamStore {
 public:
  std::size_t add(std::string name, Matrix value);
  std::size_t size() const { return tensors_.size(); }
  NamedTensor& operator[](std::size_t i) { return tensors_[i]; }
  const NamedTensor& operator[](std::size_t i) const { return tensors_[i]; }
  std::optional<std::size_t> find(std::string_view name) const;
  void truncate(std::size_t n) { tensors_.resize(n); }
  std::size_t element_count() const;

  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

 private:
  std::vector<NamedTensor> tensors_;
};

enum class HeadKind { kMatching, kClassifier, kBox, kDecoder };

std::string to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& name);

// Per-block features read by the block-wise loss. Each image block holds
// patch_count rows; each fusion block holds only rows at image-token
// positions. Features are taken at the output of each block (after its
// residual additions, before any final normalization).
struct FeatureStack {
  std::vector<Matrix> image_blocks;
  std::vector<Matrix> fusion_blocks;

  std::size_t vector_count() const;
};

struct EncoderPass {
  std::vector<ad::Var> image_blocks;
  std::vector<ad::Var> fusion_blocks;
  // Normalized output of the last fusion block, all rows ([CLS], text, image).
  ad::Var memory;
  Eigen::Index text_rows = 0;  // [CLS] + text
};

// Transformer vision-language model: ViT image encoder, a fusion encoder over
// [CLS] + text + image tokens, and either a pooled head (encoder-only) or an
// autoregressive decoder (encoder-decoder). Immutable use is thread-safe.
class VisionLanguageModel {
 public:
  VisionLanguageModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  HeadKind head_kind() const { return head_kind_; }
  int head_outputs() const { return head_outputs_; }

  // Replaces the pooled head of an encoder-only model.
  void reset_head(HeadKind kind, int outputs, std::uint64_t seed);

  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }
  std::size_t backbone_size() const { return backbone_size_; }

  // Word-embedding table, vocab_size x width.
  const Matrix& word_table() const { return params_[layout_.word_embed].value; }

  class Bound {
   public:
    ad::Tape& tape() const { return *tape_; }
    ad::Var operator[](std::size_t i) const { return vars_[i]; }

   private:
    friend class VisionLanguageModel;
    ad::Tape* tape_ = nullptr;
    std::vector<ad::Var> vars_;
  };

  Bound bind(ad::Tape& tape, bool trainable) const;

  // InputError on shape or vocabulary violations.
  void check_inputs(const ImageTensor& image, std::span<const int> tokens) const;
  ad::Var image_input(ad::Tape& tape, const ImageTensor& image, bool requires_grad) const;

  EncoderPass encode(const Bound& p, ad::Var image, std::span<const int> tokens) const;
  // Encoder-only: 1 x outputs (classifier/matching) or 4 x location_bins (box).
  ad::Var head_logits(const Bound& p, const EncoderPass& enc) const;
  // Encoder-only with the matching head: 1 x vocab_size logits for the word
  // hidden behind [UNK].
  ad::Var masked_word_logits(const Bound& p, const EncoderPass& enc) const;
  // Encoder-decoder: one row of output-vocabulary logits per prefix token.
  ad::Var decoder_logits(const Bound& p, const EncoderPass& enc, std::span<const int> prefix) const;

  // Value-level feature extraction (no gradients).
  FeatureStack features(const ImageTensor& image, std::span<const int> tokens) const;

 private:
  struct Linear {
    std::size_t weight, bias;
  };
  struct Norm {
    std::size_t gain, bias;
  };
  struct Attention {
    Linear q, k, v, out;
  };
  struct Block {
    Norm norm1;
    Attention self_attn;
    Norm norm_cross;
    Attention cross_attn;
    Norm norm2;
    Linear fc1, fc2;
  };
  struct Layout {
    Linear patch_embed;
    std::size_t image_pos;
    std::vector<Block> image_blocks;
    Norm image_norm;
    std::size_t word_embed, text_pos, type_embed, fusion_image_pos;
    Norm text_norm;
    std::vector<Block> fusion_blocks;
    Norm fusion_norm;
    // encoder-decoder only
    std::size_t out_embed = 0, dec_pos = 0;
    std::vector<Block> decoder_blocks;
    Norm decoder_norm{};
    Linear out_proj{};
    // pooled head
    Linear head{};
    Linear word_head{};  // matching only
  };

  class Init;

  Block add_block(Init& init, const std::string& prefix, bool cross);
  Linear add_linear(Init& init, const std::string& name, int in, int out);
  Norm add_norm(const std::string& name, int dim);

  ad::Var linear(const Bound& p, const Linear& l, ad::Var x) const;
  ad::Var pooled(const EncoderPass& enc) const;
  ad::Var norm(const Bound& p, const Norm& n, ad::Var x) const;
  ad::Var attend(const Bound& p, const Attention& a, ad::Var x, ad::Var context, bool causal) const;
  ad::Var block(const Bound& p, const Block& b, ad::Var x, std::optional<ad::Var> memory, bool causal) const;

  ModelConfig config_;
  std::uint64_t seed_;
  ParamStore params_;
  Layout layout_;
  std::size_t backbone_size_ = 0;
  HeadKind head_kind_ = HeadKind::kMatching;
  int head_outputs_ = 2;
};

}  // namespace vlattack::modelzoo
