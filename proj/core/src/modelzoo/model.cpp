#include "vlattack/modelzoo/model.hpp"

#include <cmath>

#include "vlattack/util/random.hpp"

namespace vlattack::modelzoo {

std::size_t ParamStore::add(std::string name, Matrix value) {
  tensors_.push_back({std::move(name), std::move(value)});
  return tensors_.size() - 1;
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::kMatching: return "matching";
    case HeadKind::kClassifier: return "classifier";
    case HeadKind::kBox: return "box";
    case HeadKind::kDecoder: return "decoder";
  }
  return "unknown";
}

HeadKind head_kind_from_string(const std::string& name) {
  if (name == "matching") return HeadKind::kMatching;
  if (name == "classifier") return HeadKind::kClassifier;
  if (name == "box") return HeadKind::kBox;
  if (name == "decoder") return HeadKind::kDecoder;
  throw ConfigurationError("unknown head kind: " + name);
}

std::size_t FeatureStack::vector_count() const {
  std::size_t n = 0;
  for (const auto& m : image_blocks) n += static_cast<std::size_t>(m.rows());
  for (const auto& m : fusion_blocks) n += static_cast<std::size_t>(m.rows());
  return n;
}

class VisionLanguageModel::Init {
 public:
  explicit Init(std::uint64_t seed) : rng_(seed) {}

  Matrix normal(int rows, int cols, double stddev) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng_.normal() * stddev;
    return m;
  }

  Rng& rng() { return rng_; }

 private:
  Rng rng_;
};

VisionLanguageModel::Linear VisionLanguageModel::add_linear(Init& init, const std::string& name, int in,
                                                            int out) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = params_.add(name + ".weight", init.normal(in, out, stddev));
  l.bias = params_.add(name + ".bias", Matrix::Zero(1, out));
  return l;
}

VisionLanguageModel::Norm VisionLanguageModel::add_norm(const std::string& name, int dim) {
  Norm n;
  n.gain = params_.add(name + ".gain", Matrix::Ones(1, dim));
  n.bias = params_.add(name + ".bias", Matrix::Zero(1, dim));
  return n;
}

VisionLanguageModel::Block VisionLanguageModel::add_block(Init& init, const std::string& prefix, bool cross) {
  const int d = config_.width;
  Block b;
  b.norm1 = add_norm(prefix + ".norm1", d);
  b.self_attn = {add_linear(init, prefix + ".attn.q", d, d), add_linear(init, prefix + ".attn.k", d, d),
                 add_linear(init, prefix + ".attn.v", d, d), add_linear(init, prefix + ".attn.out", d, d)};
  if (cross) {
    b.norm_cross = add_norm(prefix + ".norm_cross", d);
    b.cross_attn = {add_linear(init, prefix + ".cross.q", d, d), add_linear(init, prefix + ".cross.k", d, d),
                    add_linear(init, prefix + ".cross.v", d, d), add_linear(init, prefix + ".cross.out", d, d)};
  }
  b.norm2 = add_norm(prefix + ".norm2", d);
  b.fc1 = add_linear(init, prefix + ".mlp.fc1", d, config_.mlp_hidden);
  b.fc2 = add_linear(init, prefix + ".mlp.fc2", config_.mlp_hidden, d);
  return b;
}

VisionLanguageModel::VisionLanguageModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), seed_(seed) {
  config_.validate();
  Init init(seed);
  const int d = config_.width;
  const Vocabulary& vocab = Vocabulary::standard();

  layout_.patch_embed = add_linear(init, "image.patch_embed", config_.patch_length(), d);
  layout_.image_pos = params_.add("image.pos", init.normal(config_.patch_count(), d, 0.1));
  for (int i = 0; i < config_.image_blocks; ++i) {
    layout_.image_blocks.push_back(add_block(init, "image.block" + std::to_string(i), false));
  }
  layout_.image_norm = add_norm("image.norm", d);

  // Word vectors start from shared per-synonym-group directions plus
  // word-specific noise, standing in for distributional pre-training.
  const double unit = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix words = init.normal(config_.vocab_size, d, unit);
  for (const auto& group : vocab.synonym_groups()) {
    const Matrix concept_dir = init.normal(1, d, unit);
    for (int id : group) words.row(id) = concept_dir.row(0) + 0.35 * words.row(id);
  }
  layout_.word_embed = params_.add("text.word_embed", std::move(words));
  layout_.text_pos = params_.add("text.pos", init.normal(config_.max_text_length + 1, d, 0.02));
  layout_.text_norm = add_norm("text.norm", d);
  layout_.type_embed = params_.add("fusion.type_embed", init.normal(2, d, 0.1));
  layout_.fusion_image_pos = params_.add("fusion.image_pos", init.normal(config_.patch_count(), d, 0.1));
  for (int k = 0; k < config_.fusion_blocks; ++k) {
    layout_.fusion_blocks.push_back(add_block(init, "fusion.block" + std::to_string(k), false));
  }
  layout_.fusion_norm = add_norm("fusion.norm", d);

  if (config_.structure == Structure::kEncoderDecoder) {
    const OutputVocabulary out(config_);
    layout_.out_embed = params_.add("decoder.embed", init.normal(out.size(), d, unit));
    layout_.dec_pos = params_.add("decoder.pos", init.normal(config_.max_decode_length + 1, d, 0.1));
    for (int b = 0; b < config_.decoder_blocks; ++b) {
      layout_.decoder_blocks.push_back(add_block(init, "decoder.block" + std::to_string(b), true));
    }
    layout_.decoder_norm = add_norm("decoder.norm", d);
    layout_.out_proj = add_linear(init, "decoder.out_proj", d, out.size());
    backbone_size_ = params_.size();
    head_kind_ = HeadKind::kDecoder;
    head_outputs_ = out.size();
  } else {
    backbone_size_ = params_.size();
    reset_head(HeadKind::kMatching, 2, mix64(seed ^ 0x4845414455ULL));
  }
}

void VisionLanguageModel::reset_head(HeadKind kind, int outputs, std::uint64_t seed) {
  if (config_.structure != Structure::kEncoderOnly || kind == HeadKind::kDecoder) {
    throw ConfigurationError("pooled heads exist only on encoder-only models");
  }
  if (outputs <= 0) throw ConfigurationError("head needs at least one output");
  if (kind == HeadKind::kBox) outputs = 4 * config_.location_bins();
  params_.truncate(backbone_size_);
  Init init(seed);
  layout_.head = add_linear(init, "head." + to_string(kind), config_.width, outputs);
  if (kind == HeadKind::kMatching) layout_.word_head = add_linear(init, "head.word", config_.width, config_.vocab_size);
  head_kind_ = kind;
  head_outputs_ = outputs;
}

VisionLanguageModel::Bound VisionLanguageModel::bind(ad::Tape& tape, bool trainable) const {
  Bound b;
  b.tape_ = &tape;
  b.vars_.reserve(params_.size());
  for (const auto& t : params_) b.vars_.push_back(tape.parameter(t.value, trainable));
  return b;
}

void VisionLanguageModel::check_inputs(const ImageTensor& image, std::span<const int> tokens) const {
  if (image.height() != config_.image_size || image.width() != config_.image_size ||
      image.channels() != config_.channels) {
    throw InputError("image shape does not match model config");
  }
  if (tokens.empty()) throw InputError("empty token sequence");
  if (static_cast<int>(tokens.size()) > config_.max_text_length) throw InputError("token sequence too long");
  for (int t : tokens) {
    if (t < 0 || t >= config_.vocab_size) throw InputError("token id out of vocabulary");
  }
}

ad::Var VisionLanguageModel::image_input(ad::Tape& tape, const ImageTensor& image, bool requires_grad) const {
  Matrix row = Eigen::Map<const Matrix>(image.pixels().data(), 1, static_cast<Eigen::Index>(image.size()));
  return requires_grad ? tape.variable(std::move(row)) : tape.constant(std::move(row));
}

ad::Var VisionLanguageModel::linear(const Bound& p, const Linear& l, ad::Var x) const {
  return ad::add_row(ad::matmul(x, p[l.weight]), p[l.bias]);
}

ad::Var VisionLanguageModel::norm(const Bound& p, const Norm& n, ad::Var x) const {
  return ad::layer_norm(x, p[n.gain], p[n.bias]);
}

ad::Var VisionLanguageModel::attend(const Bound& p, const Attention& a, ad::Var x, ad::Var context,
                                    bool causal) const {
  ad::Var q = linear(p, a.q, x);
  ad::Var k = linear(p, a.k, context);
  ad::Var v = linear(p, a.v, context);
  return linear(p, a.out, ad::attention(q, k, v, config_.heads, causal));
}

ad::Var VisionLanguageModel::block(const Bound& p, const Block& b, ad::Var x, std::optional<ad::Var> memory,
                                   bool causal) const {
  ad::Var h = norm(p, b.norm1, x);
  x = ad::add(x, attend(p, b.self_attn, h, h, causal));
  if (memory) x = ad::add(x, attend(p, b.cross_attn, norm(p, b.norm_cross, x), *memory, false));
  ad::Var m = linear(p, b.fc2, ad::gelu(linear(p, b.fc1, norm(p, b.norm2, x))));
  return ad::add(x, m);
}

EncoderPass VisionLanguageModel::encode(const Bound& p, ad::Var image, std::span<const int> tokens) const {
  EncoderPass out;

  ad::Var patches = ad::patchify(image, config_.image_size, config_.image_size, config_.channels,
                                 config_.patch_size);
  ad::Var x = ad::add(linear(p, layout_.patch_embed, patches), p[layout_.image_pos]);
  for (const Block& b : layout_.image_blocks) {
    x = block(p, b, x, std::nullopt, false);
    out.image_blocks.push_back(x);
  }
  ad::Var image_tokens = norm(p, layout_.image_norm, x);

  std::vector<int> ids;
  ids.reserve(tokens.size() + 1);
  ids.push_back(Vocabulary::kCls);
  ids.insert(ids.end(), tokens.begin(), tokens.end());
  const auto text_len = static_cast<Eigen::Index>(ids.size());
  ad::Var text = norm(p, layout_.text_norm,
                      ad::add(ad::gather_rows(p[layout_.word_embed], ids), ad::slice_rows(p[layout_.text_pos], 0, text_len)));
  text = ad::add_row(text, ad::slice_rows(p[layout_.type_embed], 0, 1));
  ad::Var img = ad::add(image_tokens, p[layout_.fusion_image_pos]);
  img = ad::add_row(img, ad::slice_rows(p[layout_.type_embed], 1, 1));

  const ad::Var parts[] = {text, img};
  ad::Var h = ad::concat_rows(parts);
  for (const Block& b : layout_.fusion_blocks) {
    h = block(p, b, h, std::nullopt, false);
    out.fusion_blocks.push_back(ad::slice_rows(h, text_len, config_.patch_count()));
  }
  out.memory = norm(p, layout_.fusion_norm, h);
  out.text_rows = text_len;
  return out;
}

// Mean over the [CLS] and text rows.
ad::Var VisionLanguageModel::pooled(const EncoderPass& enc) const {
  ad::Tape& tape = *enc.memory.tape();
  const ad::Var pool = tape.constant(Matrix::Constant(1, enc.text_rows, 1.0 / static_cast<double>(enc.text_rows)));
  return ad::matmul(pool, ad::slice_rows(enc.memory, 0, enc.text_rows));
}

ad::Var VisionLanguageModel::masked_word_logits(const Bound& p, const EncoderPass& enc) const {
  if (config_.structure != Structure::kEncoderOnly || head_kind_ != HeadKind::kMatching) {
    throw ConfigurationError("model has no masked-word head");
  }
  return linear(p, layout_.word_head, pooled(enc));
}

ad::Var VisionLanguageModel::head_logits(const Bound& p, const EncoderPass& enc) const {
  if (config_.structure != Structure::kEncoderOnly) throw ConfigurationError("model has no pooled head");
  ad::Var logits = linear(p, layout_.head, pooled(enc));
  if (head_kind_ == HeadKind::kBox) return ad::reshape(logits, 4, config_.location_bins());
  return logits;
}

ad::Var VisionLanguageModel::decoder_logits(const Bound& p, const EncoderPass& enc,
                                            std::span<const int> prefix) const {
  if (config_.structure != Structure::kEncoderDecoder) throw ConfigurationError("model has no decoder");
  if (prefix.empty() || static_cast<int>(prefix.size()) > config_.max_decode_length + 1) {
    throw InputError("decoder prefix length out of range");
  }
  const auto n = static_cast<Eigen::Index>(prefix.size());
  ad::Var y = ad::add(ad::gather_rows(p[layout_.out_embed], prefix), ad::slice_rows(p[layout_.dec_pos], 0, n));
  for (const Block& b : layout_.decoder_blocks) y = block(p, b, y, enc.memory, true);
  return linear(p, layout_.out_proj, norm(p, layout_.decoder_norm, y));
}

FeatureStack VisionLanguageModel::features(const ImageTensor& image, std::span<const int> tokens) const {
  check_inputs(image, tokens);
  ad::Tape tape;
  const Bound p = bind(tape, false);
  const EncoderPass enc = encode(p, image_input(tape, image, false), tokens);
  FeatureStack fs;
  for (const auto& v : enc.image_blocks) fs.image_blocks.push_back(v.value());
  for (const auto& v : enc.fusion_blocks) fs.fusion_blocks.push_back(v.value());
  return fs;
}

}  // namespace vlattack::modelzoo
