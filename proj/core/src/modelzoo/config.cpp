#include "vlattack/modelzoo/config.hpp"

#include "vlattack/modelzoo/types.hpp"

namespace vlattack::modelzoo {

std::string to_string(Structure s) {
  return s == Structure::kEncoderOnly ? "encoder_only" : "encoder_decoder";
}

Structure structure_from_string(const std::string& name) {
  if (name == "encoder_only") return Structure::kEncoderOnly;
  if (name == "encoder_decoder") return Structure::kEncoderDecoder;
  throw ConfigurationError("unknown model structure: " + name);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigurationError("model config: " + what); };
  if (image_size <= 0 || channels <= 0 || patch_size <= 0) fail("image dimensions must be positive");
  if (image_size % patch_size != 0) fail("patch size must divide image size");
  if (image_size % 2 != 0) fail("image size must be even");
  if (width <= 0 || heads <= 0 || width % heads != 0) fail("heads must divide width");
  if (mlp_hidden <= 0) fail("mlp width must be positive");
  if (image_blocks <= 0) fail("need at least one image block");
  if (fusion_blocks <= 0) fail("need at least one fusion block");
  if (structure == Structure::kEncoderDecoder && decoder_blocks <= 0) fail("need at least one decoder block");
  if (vocab_size <= Vocabulary::kSpecialCount) fail("vocabulary smaller than special-token count");
  if (vocab_size < Vocabulary::standard().size()) fail("vocabulary smaller than the standard word list");
  if (max_text_length <= 0 || max_decode_length <= 0) fail("sequence limits must be positive");
}

ModelConfig ModelConfig::tiny(Structure structure) {
  ModelConfig c;
  c.structure = structure;
  c.image_size = 8;
  c.patch_size = 4;
  c.width = 16;
  c.heads = 2;
  c.mlp_hidden = 32;
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"structure", to_string(c.structure)}, {"image_size", c.image_size},
      {"channels", c.channels}, {"patch_size", c.patch_size},
      {"width", c.width}, {"heads", c.heads},
      {"mlp_hidden", c.mlp_hidden}, {"image_blocks", c.image_blocks},
      {"fusion_blocks", c.fusion_blocks}, {"decoder_blocks", c.decoder_blocks},
      {"vocab_size", c.vocab_size}, {"max_text_length", c.max_text_length},
      {"max_decode_length", c.max_decode_length},
  };
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.structure = structure_from_string(j.at("structure").get<std::string>());
  c.image_size = j.at("image_size").get<int>();
  c.channels = j.at("channels").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.width = j.at("width").get<int>();
  c.heads = j.at("heads").get<int>();
  c.mlp_hidden = j.at("mlp_hidden").get<int>();
  c.image_blocks = j.at("image_blocks").get<int>();
  c.fusion_blocks = j.at("fusion_blocks").get<int>();
  c.decoder_blocks = j.at("decoder_blocks").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_text_length = j.at("max_text_length").get<int>();
  c.max_decode_length = j.at("max_decode_length").get<int>();
  c.validate();
  return c;
}

}  // namespace vlattack::modelzoo
