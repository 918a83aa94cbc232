#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vlattack/blackbox/blackbox.hpp"
#include "vlattack/bsa/bsa.hpp"
#include "vlattack/text_attack/text_attack.hpp"

namespace vlattack::icsa {

using blackbox::QuerySession;
using blackbox::Stage;
using bsa::AttackBudget;
using text_attack::CandidateList;

struct SearchPlan {
  int K = 0;
  int N_k = 0;
  CandidateList ranked;  // top-K
};

// K = min(|T|, N - N_s), N_k = floor((N - N_s) / K) for K > 0.
SearchPlan compute_plan(CandidateList candidates, const AttackBudget& budget);

enum class AttackStatus { kSuccessImage, kSuccessText, kSuccessMultimodal, kFailure };
std::string to_string(AttackStatus s);
AttackStatus attack_status_from_string(const std::string& name);

struct AdversarialPair {
  ImageTensor image;
  TokenSequence text;
};

struct QueryRecord {
  Stage stage = Stage::kImage;
  int candidate_index = -1;   // index into the ranked list, or -1
  int image_iterations = 0;   // cumulative at query time
  bool flipped = false;
  double confidence = 0.0;

  friend bool operator==(const QueryRecord&, const QueryRecord&) = default;
};

struct AttackTrace {
  std::vector<QueryRecord> queries;
  std::vector<bsa::LossPoint> loss;
  std::vector<int> importance;
  CandidateList tested;   // stage 2, in test order
  int rejected = 0;       // stage 2 candidates that failed the gate
  CandidateList ranked;   // stage 3, top-K
  int K = 0;
  int N_k = 0;

  friend bool operator==(const AttackTrace&, const AttackTrace&) = default;
};

struct AttackResult {
  AttackStatus status = AttackStatus::kFailure;
  std::optional<AdversarialPair> adversarial;
  int image_iterations = 0;
  int queries = 0;
  int probes = 0;
  int candidate_index = -1;
  AttackTrace trace;

  bool success() const { return status != AttackStatus::kFailure; }
};

// Stage 3. `runner` carries the image iterate state from stage 1 and anchors
// the loss at the clean pair. ConfigurationError when the plan does not match
// the budget or the runner and session disagree on the clean image.
AttackResult icsa_run(bsa::BsaRunner& runner, QuerySession& session, ImageTensor stage1_image,
                      const SearchPlan& plan, const AttackBudget& budget);

// How far down the attack ladder to go.
enum class Depth {
  kImageOnly,        // stage 1
  kImageText,        // stages 1-2
  kQueryCandidates,  // stages 1-2, then each ranked candidate with the stage-1 image
  kFull,             // stages 1-3
};

struct VlattackOptions {
  Depth depth = Depth::kFull;
  bsa::LossScope scope = bsa::LossScope::kFull;
  bsa::OptimizerOptions optimizer;
  int substitutions = 8;
};

// Caller guarantees S predicts (I, T) correctly.
AttackResult vlattack(const bsa::PretrainedModel& model, QuerySession& session, const AttackBudget& budget,
                      std::uint64_t seed, const VlattackOptions& options = {});

// Re-checks the result invariants against the originals; AttackError on any
// breach.
void validate_result(const AttackResult& result, const ImageTensor& image, const TokenSequence& text,
                     const modelzoo::SentenceEncoder& encoder, const AttackBudget& budget);

}  // namespace vlattack::icsa
