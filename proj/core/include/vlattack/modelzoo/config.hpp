#pragma once

#include <nlohmann/json.hpp>

#include <string>

#include "vlattack/modelzoo/vocabulary.hpp"

namespace vlattack::modelzoo {

enum class Structure { kEncoderOnly, kEncoderDecoder };

std::string to_string(Structure s);
Structure structure_from_string(const std::string& name);

struct ModelConfig {
  Structure structure = Structure::kEncoderOnly;
  int image_size = 32;
  int channels = 3;
  int patch_size = 8;
  int width = 64;
  int heads = 4;
  int mlp_hidden = 128;
  int image_blocks = 2;
  int fusion_blocks = 2;
  int decoder_blocks = 1;
  int vocab_size = Vocabulary::standard().size();
  int max_text_length = 16;
  int max_decode_length = 8;

  // Throws ConfigurationError.
  void validate() const;

  int grid() const { return image_size / patch_size; }
  int patch_count() const { return grid() * grid(); }
  int patch_length() const { return patch_size * patch_size * channels; }
  // Box coordinates are quantized to even pixels: 0, 2, ..., image_size.
  int location_bins() const { return image_size / 2 + 1; }

  // Small model used for gradient checks: 8x8x3 input, 4x4 patches.
  static ModelConfig tiny(Structure structure = Structure::kEncoderOnly);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

// Decoder output tokens: begin, end, one per input word, then location bins.
class OutputVocabulary {
 public:
  static constexpr int kBegin = 0;
  static constexpr int kEnd = 1;

  explicit OutputVocabulary(const ModelConfig& config)
      : words_(config.vocab_size - Vocabulary::kSpecialCount), bins_(config.location_bins()) {}

  int size() const { return 2 + words_ + bins_; }
  int word_token(int word_id) const { return 2 + word_id - Vocabulary::kSpecialCount; }
  int location_token(int bin) const { return 2 + words_ + bin; }
  bool is_word(int token) const { return token >= 2 && token < 2 + words_; }
  bool is_location(int token) const { return token >= 2 + words_ && token < size(); }
  int word_of(int token) const { return token - 2 + Vocabulary::kSpecialCount; }
  int bin_of(int token) const { return token - 2 - words_; }
  int first_location() const { return 2 + words_; }

 private:
  int words_;
  int bins_;
};

}  // namespace vlattack::modelzoo
