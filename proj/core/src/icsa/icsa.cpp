#include "vlattack/icsa/icsa.hpp"

#include <algorithm>

namespace vlattack::icsa {

namespace {

class Recorder {
 public:
  Recorder(QuerySession& session, AttackResult& result) : session_(&session), result_(&result) {}

  bool query(const ImageTensor& image, const TokenSequence& text, Stage stage, int iterations, int candidate = -1) {
    const Prediction p = session_->query(image, text, stage);
    const bool flipped = session_->flips(p);
    result_->trace.queries.push_back({stage, candidate, iterations, flipped, p.confidence});
    return flipped;
  }

 private:
  QuerySession* session_;
  AttackResult* result_;
};

void finish(AttackResult& r, const QuerySession& session, const bsa::BsaRunner* runner) {
  r.queries = session.ledger().count;
  r.probes = session.ledger().probes;
  if (runner) {
    r.image_iterations = runner->iterations();
    r.trace.loss = runner->trace();
  }
}

void check_plan(const SearchPlan& plan, const AttackBudget& budget) {
  const int span = budget.total_iterations - budget.single_modal_iterations;
  const bool ok = plan.K >= 0 && plan.K == static_cast<int>(plan.ranked.size()) && plan.K <= span &&
                  (plan.K == 0 ? plan.N_k == 0 : plan.N_k == span / plan.K);
  if (!ok) throw ConfigurationError("search plan does not match the attack budget");
}

}  // namespace

SearchPlan compute_plan(CandidateList candidates, const AttackBudget& budget) {
  budget.validate();
  const int span = budget.total_iterations - budget.single_modal_iterations;
  text_attack::rank(candidates);
  SearchPlan plan;
  plan.K = std::min(static_cast<int>(candidates.size()), span);
  plan.N_k = plan.K > 0 ? span / plan.K : 0;
  candidates.resize(static_cast<std::size_t>(plan.K));
  plan.ranked = std::move(candidates);
  return plan;
}

std::string to_string(AttackStatus s) {
  switch (s) {
    case AttackStatus::kSuccessImage: return "success_image";
    case AttackStatus::kSuccessText: return "success_text";
    case AttackStatus::kSuccessMultimodal: return "success_multimodal";
    case AttackStatus::kFailure: return "failure";
  }
  return "failure";
}

AttackStatus attack_status_from_string(const std::string& name) {
  for (auto s : {AttackStatus::kSuccessImage, AttackStatus::kSuccessText, AttackStatus::kSuccessMultimodal,
                 AttackStatus::kFailure}) {
    if (to_string(s) == name) return s;
  }
  throw InputError("unknown attack status: " + name);
}

AttackResult icsa_run(bsa::BsaRunner& runner, QuerySession& session, ImageTensor stage1_image,
                      const SearchPlan& plan, const AttackBudget& budget) {
  budget.validate();
  check_plan(plan, budget);
  if (!(runner.clean_image() == session.original_image())) {
    throw ConfigurationError("runner and session are anchored at different images");
  }
  AttackResult r;
  r.trace.K = plan.K;
  r.trace.N_k = plan.N_k;
  r.trace.ranked = plan.ranked;
  Recorder rec(session, r);
  ImageTensor adv = std::move(stage1_image);

  if (plan.K == 0) {
    const TokenSequence& text = session.original_text();
    adv = runner.run(std::move(adv), text, budget.total_iterations - budget.single_modal_iterations);
    if (rec.query(adv, text, Stage::kMultimodal, runner.iterations())) {
      r.status = AttackStatus::kSuccessMultimodal;
      r.adversarial = AdversarialPair{adv, text};
    }
    finish(r, session, &runner);
    return r;
  }

  for (int k = 0; k < plan.K; ++k) {
    const TokenSequence& text = plan.ranked[static_cast<std::size_t>(k)].text;
    bool flipped = rec.query(adv, text, Stage::kMultimodal, runner.iterations(), k);
    if (!flipped) {
      adv = runner.run(std::move(adv), text, plan.N_k);
      flipped = rec.query(adv, text, Stage::kMultimodal, runner.iterations(), k);
    }
    if (flipped) {
      r.status = AttackStatus::kSuccessMultimodal;
      r.adversarial = AdversarialPair{adv, text};
      r.candidate_index = k;
      break;
    }
  }
  finish(r, session, &runner);
  return r;
}

AttackResult vlattack(const bsa::PretrainedModel& model, QuerySession& session, const AttackBudget& budget,
                      std::uint64_t seed, const VlattackOptions& options) {
  budget.validate();
  const ImageTensor& image = session.original_image();
  const TokenSequence& text = session.original_text();
  const bsa::BsaObjective objective(model, image, text, options.scope);
  bsa::BsaRunner runner(objective, budget, options.optimizer);

  AttackResult r;
  Recorder rec(session, r);

  ImageTensor adv = runner.run(runner.initialize(seed), text, budget.single_modal_iterations);
  if (rec.query(adv, text, Stage::kImage, runner.iterations())) {
    r.status = AttackStatus::kSuccessImage;
    r.adversarial = AdversarialPair{adv, text};
    finish(r, session, &runner);
    return r;
  }
  if (options.depth == Depth::kImageOnly) {
    finish(r, session, &runner);
    return r;
  }

  text_attack::TextAttackResult ta = text_attack::text_attack(session, budget, options.substitutions);
  r.trace.importance = ta.importance;
  r.trace.tested = ta.candidates;
  r.trace.rejected = static_cast<int>(ta.rejected.size());
  for (std::size_t i = 0; i < ta.candidates.size(); ++i) {
    const bool last = i + 1 == ta.candidates.size();
    r.trace.queries.push_back({Stage::kText, -1, runner.iterations(),
                               last && ta.outcome == text_attack::TextOutcome::kSuccess, ta.confidences[i]});
  }
  if (const auto* hit = ta.adversarial()) {
    r.status = AttackStatus::kSuccessText;
    r.adversarial = AdversarialPair{image, hit->text};
    finish(r, session, &runner);
    return r;
  }
  if (options.depth == Depth::kImageText) {
    finish(r, session, &runner);
    return r;
  }

  SearchPlan plan = compute_plan(std::move(ta.candidates), budget);
  if (options.depth == Depth::kQueryCandidates) {
    r.trace.K = plan.K;
    r.trace.ranked = plan.ranked;
    for (int k = 0; k < plan.K; ++k) {
      const TokenSequence& cand = plan.ranked[static_cast<std::size_t>(k)].text;
      if (rec.query(adv, cand, Stage::kMultimodal, runner.iterations(), k)) {
        r.status = AttackStatus::kSuccessMultimodal;
        r.adversarial = AdversarialPair{adv, cand};
        r.candidate_index = k;
        break;
      }
    }
    finish(r, session, &runner);
    return r;
  }

  AttackResult stage3 = icsa_run(runner, session, std::move(adv), plan, budget);
  stage3.trace.queries.insert(stage3.trace.queries.begin(), r.trace.queries.begin(), r.trace.queries.end());
  stage3.trace.importance = std::move(r.trace.importance);
  stage3.trace.tested = std::move(r.trace.tested);
  stage3.trace.rejected = r.trace.rejected;
  finish(stage3, session, &runner);
  return stage3;
}

void validate_result(const AttackResult& result, const ImageTensor& image, const TokenSequence& text,
                     const modelzoo::SentenceEncoder& encoder, const AttackBudget& budget) {
  auto fail = [](const std::string& what) { throw AttackError("attack result invariant: " + what); };
  if (result.image_iterations > budget.total_iterations) fail("image iterations exceed N");
  if (result.queries != static_cast<int>(result.trace.queries.size())) fail("query count disagrees with trace");
  const int stage3 = result.queries - 1 - static_cast<int>(result.trace.tested.size());
  if (result.queries < 1 || stage3 < 0 || stage3 > std::max(2 * result.trace.K, 1)) fail("query ledger formula");
  if (!result.success()) {
    if (result.adversarial) fail("failure carries an adversarial pair");
    return;
  }
  if (!result.adversarial) fail("success without an adversarial pair");
  const AdversarialPair& adv = *result.adversarial;
  if (!adv.image.same_shape(image)) fail("image shape changed");
  auto px = adv.image.pixels();
  auto ref = image.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (px[i] < ref[i] - budget.sigma_i || px[i] > ref[i] + budget.sigma_i || px[i] < 0.0 || px[i] > 1.0) {
      fail("image leaves the budget");
    }
  }
  if (result.status == AttackStatus::kSuccessImage && !(adv.text == text)) fail("image success modified the text");
  if (result.status == AttackStatus::kSuccessText && !(adv.image == image)) fail("text success modified the image");
  if (!(adv.text == text)) {
    if (hamming_distance(adv.text, text) > budget.max_modified_words) fail("too many modified words");
    if (!(encoder.similarity(adv.text, text) > budget.sigma_s)) fail("text below the similarity gate");
  }
}

}  // namespace vlattack::icsa
