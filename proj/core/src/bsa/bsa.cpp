#include "vlattack/bsa/bsa.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vlattack/util/random.hpp"

namespace vlattack::bsa {

namespace {

bool uses_image(LossScope s) { return s != LossScope::kFusionEncoder; }
bool uses_fusion(LossScope s) { return s != LossScope::kImageEncoder; }

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_finite(const LossAndGradient& lg) {
  std::size_t bad = 0;
  for (double g : lg.gradient) bad += std::isfinite(g) ? 0 : 1;
  if (bad > 0 || !std::isfinite(lg.loss)) {
    std::ostringstream msg;
    msg << "non-finite block-wise gradient: loss=" << lg.loss << ", " << bad << " of " << lg.gradient.size()
        << " pixel gradients non-finite";
    throw AttackError(msg.str());
  }
}

ImageTensor signed_step(const ImageTensor& clean, const ImageTensor& adv, const std::vector<double>& direction,
                        const AttackBudget& budget) {
  std::vector<double> next(adv.pixels().begin(), adv.pixels().end());
  for (std::size_t i = 0; i < next.size(); ++i) next[i] -= budget.step_size * sign(direction[i]);
  return project(clean, std::move(next), budget.sigma_i);
}

}  // namespace

void AttackBudget::validate() const {
  auto fail = [](const std::string& what) { throw ConfigurationError("attack budget: " + what); };
  if (!(sigma_i >= 0.0 && sigma_i < 1.0)) fail("sigma_i must be in [0, 1)");
  if (!(sigma_s > 0.0)) fail("sigma_s must be positive");
  if (single_modal_iterations <= 0 || single_modal_iterations > total_iterations) fail("need 0 < N_s <= N");
  if (!(step_size >= 0.0)) fail("step size must be non-negative");
  if (max_modified_words < 0) fail("max_modified_words must be non-negative");
}

AttackBudget AttackBudget::defaults_for(TaskKind kind) {
  AttackBudget b;
  if (kind == TaskKind::kGrounding) b.sigma_i = 4.0 / 255.0;
  return b;
}

double bsa_loss(const FeatureStack& clean, const FeatureStack& adv, LossScope scope) {
  if (clean.image_blocks.size() != adv.image_blocks.size() || clean.fusion_blocks.size() != adv.fusion_blocks.size()) {
    throw InputError("feature stacks have different block counts");
  }
  double total = 0.0;
  auto add_blocks = [&](const std::vector<modelzoo::Matrix>& a, const std::vector<modelzoo::Matrix>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) throw InputError("feature block shape mismatch");
      for (Eigen::Index r = 0; r < a[i].rows(); ++r) total += ad::cosine(a[i].row(r), b[i].row(r));
    }
  };
  if (uses_image(scope)) add_blocks(clean.image_blocks, adv.image_blocks);
  if (uses_fusion(scope)) add_blocks(clean.fusion_blocks, adv.fusion_blocks);
  return total;
}

BsaObjective::BsaObjective(const PretrainedModel& model, const ImageTensor& clean_image,
                           const TokenSequence& clean_text, LossScope scope)
    : model_(&model),
      clean_image_(clean_image),
      clean_text_(clean_text),
      scope_(scope),
      reference_(model.forward_with_features(clean_image, clean_text)) {}

double BsaObjective::loss(const ImageTensor& adv, const TokenSequence& adv_text) const {
  if (adv_text.size() != clean_text_.size()) throw InputError("perturbed text must keep the sentence length");
  return bsa_loss(reference_, model_->forward_with_features(adv, adv_text), scope_);
}

LossAndGradient BsaObjective::evaluate(const ImageTensor& adv, const TokenSequence& adv_text) const {
  if (adv_text.size() != clean_text_.size()) throw InputError("perturbed text must keep the sentence length");
  const auto& net = model_->network();
  net.check_inputs(adv, adv_text.tokens());
  ad::Tape tape;
  const auto params = net.bind(tape, false);
  ad::Var image = net.image_input(tape, adv, true);
  const modelzoo::EncoderPass enc = net.encode(params, image, adv_text.tokens());

  std::vector<ad::Var> terms;
  if (uses_image(scope_)) {
    for (std::size_t i = 0; i < enc.image_blocks.size(); ++i) {
      terms.push_back(ad::cosine_rows_sum(enc.image_blocks[i], reference_.image_blocks[i]));
    }
  }
  if (uses_fusion(scope_)) {
    for (std::size_t k = 0; k < enc.fusion_blocks.size(); ++k) {
      terms.push_back(ad::cosine_rows_sum(enc.fusion_blocks[k], reference_.fusion_blocks[k]));
    }
  }
  ad::Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  tape.backward(total);

  LossAndGradient out;
  out.loss = total.scalar();
  if (image.has_grad()) {
    out.gradient.assign(image.grad().data(), image.grad().data() + image.grad().size());
  } else {
    out.gradient.assign(adv.size(), 0.0);
  }
  return out;
}

ImageTensor project(const ImageTensor& clean, std::vector<double> pixels, double sigma_i) {
  auto ref = clean.pixels();
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    double v = std::min(std::max(pixels[i], ref[i] - sigma_i), ref[i] + sigma_i);
    pixels[i] = std::min(std::max(v, 0.0), 1.0);
  }
  return ImageTensor(clean.height(), clean.width(), clean.channels(), std::move(pixels));
}

ImageTensor init_perturbation(const ImageTensor& clean, double sigma_i, std::uint64_t seed) {
  Rng rng(stream_seed(seed, 0x696e6974ULL));
  std::vector<double> px(clean.pixels().begin(), clean.pixels().end());
  for (double& v : px) v += sigma_i * (2.0 * rng.uniform() - 1.0);
  return project(clean, std::move(px), sigma_i);
}

ImageTensor bsa_step(const BsaObjective& objective, const ImageTensor& adv, const TokenSequence& adv_text,
                     const AttackBudget& budget) {
  const LossAndGradient lg = objective.evaluate(adv, adv_text);
  check_finite(lg);
  return signed_step(objective.clean_image(), adv, lg.gradient, budget);
}

ImageTensor bsa_step_momentum(const BsaObjective& objective, const ImageTensor& adv,
                              const TokenSequence& adv_text, const AttackBudget& budget, MomentumState& state,
                              double decay) {
  if (!(decay >= 0.0)) throw ConfigurationError("momentum decay must be non-negative");
  const LossAndGradient lg = objective.evaluate(adv, adv_text);
  check_finite(lg);
  double l1 = 0.0;
  for (double g : lg.gradient) l1 += std::abs(g);
  if (state.velocity.empty()) state.velocity.assign(lg.gradient.size(), 0.0);
  for (std::size_t i = 0; i < lg.gradient.size(); ++i) {
    state.velocity[i] = decay * state.velocity[i] + (l1 > 0.0 ? lg.gradient[i] / l1 : 0.0);
  }
  return signed_step(objective.clean_image(), adv, state.velocity, budget);
}

ImageTensor bsa_attack(const BsaObjective& objective, int steps, const AttackBudget& budget, std::uint64_t seed,
                       std::vector<LossPoint>* trace) {
  if (steps < 0) throw ConfigurationError("negative step count");
  ImageTensor adv = init_perturbation(objective.clean_image(), budget.sigma_i, seed);
  for (int s = 0; s < steps; ++s) {
    if (trace) trace->push_back({s + 1, objective.loss(adv, objective.clean_text())});
    adv = bsa_step(objective, adv, objective.clean_text(), budget);
  }
  return adv;
}

std::string to_string(Optimizer o) { return o == Optimizer::kPgd ? "pgd" : "mi"; }

Optimizer optimizer_from_string(const std::string& name) {
  if (name == "pgd") return Optimizer::kPgd;
  if (name == "mi") return Optimizer::kMomentum;
  throw ConfigurationError("unknown optimizer: " + name);
}

BsaRunner::BsaRunner(const BsaObjective& objective, const AttackBudget& budget, OptimizerOptions options)
    : objective_(&objective), budget_(budget), options_(options) {
  budget_.validate();
}

ImageTensor BsaRunner::initialize(std::uint64_t seed) const {
  return init_perturbation(objective_->clean_image(), budget_.sigma_i, seed);
}

ImageTensor BsaRunner::run(ImageTensor adv, const TokenSequence& adv_text, int steps) {
  if (steps < 0) throw ConfigurationError("negative step count");
  const ImageTensor& clean = objective_->clean_image();
  for (int s = 0; s < steps; ++s) {
    const LossAndGradient lg = objective_->evaluate(adv, adv_text);
    check_finite(lg);
    trace_.push_back({iterations_ + 1, lg.loss});
    if (options_.kind == Optimizer::kPgd) {
      adv = signed_step(clean, adv, lg.gradient, budget_);
    } else {
      double l1 = 0.0;
      for (double g : lg.gradient) l1 += std::abs(g);
      if (momentum_.velocity.empty()) momentum_.velocity.assign(lg.gradient.size(), 0.0);
      for (std::size_t i = 0; i < lg.gradient.size(); ++i) {
        momentum_.velocity[i] = options_.decay * momentum_.velocity[i] + (l1 > 0.0 ? lg.gradient[i] / l1 : 0.0);
      }
      adv = signed_step(clean, adv, momentum_.velocity, budget_);
    }
    ++iterations_;
    auto px = adv.pixels();
    auto ref = clean.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) {
      if (px[i] < ref[i] - budget_.sigma_i || px[i] > ref[i] + budget_.sigma_i || px[i] < 0.0 || px[i] > 1.0) {
        throw AttackError("iterate left the perturbation budget");
      }
    }
  }
  return adv;
}

}  // namespace vlattack::bsa
