#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlattack/blackbox/blackbox.hpp"
#include "vlattack/modelzoo/pretrained.hpp"

namespace vlattack::bsa {

using modelzoo::FeatureStack;
using modelzoo::PretrainedModel;

struct AttackBudget {
  double sigma_i = 16.0 / 255.0;
  double sigma_s = 0.95;
  int total_iterations = 40;         // N
  int single_modal_iterations = 20;  // N_s
  double step_size = 0.01;
  int max_modified_words = 1;

  // Accepts the degenerate edges sigma_i = 0, step_size = 0 and sigma_s > 1
  // (an unsatisfiable gate). Throws ConfigurationError otherwise.
  void validate() const;

  // Grounding uses a 4/255 radius.
  static AttackBudget defaults_for(TaskKind kind);
  blackbox::Constraints constraints() const { return {sigma_i, sigma_s, max_modified_words}; }

  friend bool operator==(const AttackBudget&, const AttackBudget&) = default;
};

// Which terms of the block-wise loss are active.
enum class LossScope { kFull, kImageEncoder, kFusionEncoder };

// Sum of per-vector cosines between clean and perturbed features over the
// active blocks. Equals vector_count when adv == clean. InputError on shape
// mismatch.
double bsa_loss(const FeatureStack& clean, const FeatureStack& adv, LossScope scope = LossScope::kFull);

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // d loss / d pixel, HWC order
};

// Block-wise loss anchored at the clean pair (I, T), evaluated at a perturbed
// pair (I', T'). T' must have the length of T.
class BsaObjective {
 public:
  BsaObjective(const PretrainedModel& model, const ImageTensor& clean_image, const TokenSequence& clean_text,
               LossScope scope = LossScope::kFull);

  double loss(const ImageTensor& adv, const TokenSequence& adv_text) const;
  LossAndGradient evaluate(const ImageTensor& adv, const TokenSequence& adv_text) const;

  const FeatureStack& reference() const { return reference_; }
  const ImageTensor& clean_image() const { return clean_image_; }
  const TokenSequence& clean_text() const { return clean_text_; }
  LossScope scope() const { return scope_; }

 private:
  const PretrainedModel* model_;
  ImageTensor clean_image_;
  TokenSequence clean_text_;
  LossScope scope_;
  FeatureStack reference_;
};

// Projection onto the l-infinity ball around `clean`, then onto [0,1].
ImageTensor project(const ImageTensor& clean, std::vector<double> pixels, double sigma_i);

// I + delta with delta ~ U[-sigma_i, sigma_i] per pixel, projected.
ImageTensor init_perturbation(const ImageTensor& clean, double sigma_i, std::uint64_t seed);

// One signed-gradient descent step on the objective. AttackError when the
// gradient is non-finite.
ImageTensor bsa_step(const BsaObjective& objective, const ImageTensor& adv, const TokenSequence& adv_text,
                     const AttackBudget& budget);

struct MomentumState {
  std::vector<double> velocity;  // empty until the first step
};

// state <- decay * state + g / ||g||_1, then a step along sign(state).
ImageTensor bsa_step_momentum(const BsaObjective& objective, const ImageTensor& adv,
                              const TokenSequence& adv_text, const AttackBudget& budget, MomentumState& state,
                              double decay);

// Loss at the iterate a step started from.
struct LossPoint {
  int iteration = 0;  // 1-based global step index
  double loss = 0.0;

  friend bool operator==(const LossPoint&, const LossPoint&) = default;
};

// init_perturbation followed by exactly `steps` bsa_step calls.
ImageTensor bsa_attack(const BsaObjective& objective, int steps, const AttackBudget& budget, std::uint64_t seed,
                       std::vector<LossPoint>* trace = nullptr);

enum class Optimizer { kPgd, kMomentum };
std::string to_string(Optimizer o);
Optimizer optimizer_from_string(const std::string& name);

struct OptimizerOptions {
  Optimizer kind = Optimizer::kPgd;
  double decay = 1.0;
};

// Stateful driver shared by every image stage of one attack: keeps the
// momentum state and the iteration count, and asserts the budget after every
// step.
class BsaRunner {
 public:
  BsaRunner(const BsaObjective& objective, const AttackBudget& budget, OptimizerOptions options = {});

  ImageTensor initialize(std::uint64_t seed) const;
  // Continues from `adv`; never re-initializes.
  ImageTensor run(ImageTensor adv, const TokenSequence& adv_text, int steps);

  int iterations() const { return iterations_; }
  const std::vector<LossPoint>& trace() const { return trace_; }
  const ImageTensor& clean_image() const { return objective_->clean_image(); }
  const MomentumState& momentum() const { return momentum_; }

 private:
  const BsaObjective* objective_;
  AttackBudget budget_;
  OptimizerOptions options_;
  MomentumState momentum_;
  int iterations_ = 0;
  std::vector<LossPoint> trace_;
};

}  // namespace vlattack::bsa
