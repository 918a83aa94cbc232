// Acceptance run: one PASS/FAIL line per criterion, exit status 1 on any FAIL.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "support/fixtures.hpp"
#include "vlattack/harness/dataset.hpp"
#include "vlattack/harness/evaluate.hpp"
#include "vlattack/icsa/icsa.hpp"
#include "vlattack/util/random.hpp"

namespace {

using namespace vlattack;
using blackbox::QuerySession;
using blackbox::Stage;
using bsa::AttackBudget;
using icsa::AttackResult;
using modelzoo::Matrix;
using modelzoo::Vocabulary;

// Tolerances.
constexpr int kPlanCases = 500;
constexpr double kGradRelTol = 1e-4;
constexpr double kFdStep = 1e-4;
constexpr int kGradPixels = 20;
constexpr double kGradSeconds = 30.0;
constexpr int kConstraintAttacks = 50;
constexpr int kIouPairs = 25;
constexpr double kIouTol = 1e-6;
constexpr double kAccuracyFloor = 0.95;
constexpr double kNoiseMargin = 20.0;
constexpr double kMultimodalMargin = 5.0;
constexpr int kTrendSamples = 200;
constexpr int kDeterminismSamples = 20;

struct Check {
  bool ok = true;
  std::ostringstream why;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) why << what;
    ok = ok && cond;
  }
};

bool report(int n, const char* name, const std::function<void(Check&)>& body) {
  Check c;
  try {
    body(c);
  } catch (const std::exception& e) {
    c.ok = false;
    c.why << "exception: " << e.what();
  }
  std::printf("%s %d %s%s%s\n", c.ok ? "PASS" : "FAIL", n, name, c.why.str().empty() ? "" : " - ",
              c.why.str().c_str());
  std::fflush(stdout);
  return c.ok;
}

std::filesystem::path cache_dir() {
  if (const char* env = std::getenv("VLATTACK_TEST_CACHE")) return env;
  return VLATTACK_TEST_CACHE;
}

const harness::Lab& lab() { return vlattack::testing::trained_lab(modelzoo::Structure::kEncoderOnly, TaskKind::kClassification); }

// Verbatim split: K = min(|T|, N - N_s) and N_k = floor((N - N_s) / K).
void plan_exactness(Check& c) {
  Rng rng(73);
  for (int i = 0; i < kPlanCases; ++i) {
    AttackBudget b;
    b.total_iterations = 2 + rng.below(120);
    b.single_modal_iterations = 1 + rng.below(b.total_iterations);
    const int t = rng.below(60);
    text_attack::CandidateList cands;
    for (int j = 0; j < t; ++j) {
      const int w = 2 + rng.below(64);
      cands.push_back({TokenSequence(std::vector<int>{w}), 0.96 + 0.001 * rng.below(40), rng.below(8), 2, w});
    }
    const icsa::SearchPlan plan = icsa::compute_plan(cands, b);
    const int span = b.total_iterations - b.single_modal_iterations;
    const int k = std::min(t, span);
    const int nk = k == 0 ? 0 : static_cast<int>(std::floor(static_cast<double>(span) / k));
    c.require(plan.K == k && plan.N_k == nk && plan.ranked.size() == static_cast<std::size_t>(k),
              "plan mismatch at case " + std::to_string(i));
  }
}

void gradient_fidelity(Check& c) {
  const auto start = std::chrono::steady_clock::now();
  const modelzoo::PretrainedModel f = vlattack::testing::tiny_model();
  const auto& cfg = f.network().config();
  c.require(cfg.image_size == 8 && cfg.channels == 3 && cfg.image_blocks == 2 && cfg.fusion_blocks == 2,
            "fixture is not an 8x8x3 two-block model");
  Rng rng(41);
  std::vector<double> px(192);
  for (double& v : px) v = 0.1 + 0.8 * rng.uniform();
  const ImageTensor clean(8, 8, 3, px);
  const TokenSequence text = TokenSequence::from_text("what color is the circle");
  const bsa::BsaObjective obj(f, clean, text);
  for (double& v : px) v += 0.05 * (2.0 * rng.uniform() - 1.0);
  const ImageTensor x(8, 8, 3, px);
  const bsa::LossAndGradient lg = obj.evaluate(x, text);
  double worst = 0.0;
  for (int t = 0; t < kGradPixels; ++t) {
    const auto i = static_cast<std::size_t>(rng.below(192));
    std::vector<double> up = px, dn = px;
    up[i] += kFdStep;
    dn[i] -= kFdStep;
    const double fd = (obj.loss(ImageTensor(8, 8, 3, up), text) - obj.loss(ImageTensor(8, 8, 3, dn), text)) /
                      (2.0 * kFdStep);
    const double rel = std::abs(lg.gradient[i] - fd) / std::max(std::abs(fd), 1e-6);
    worst = std::max(worst, rel);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  c.require(worst < kGradRelTol, "max relative error " + std::to_string(worst));
  c.require(secs < kGradSeconds, "took " + std::to_string(secs) + " s");
}

bool inside_ball(const ImageTensor& x, const ImageTensor& clean, double sigma) {
  auto a = x.pixels();
  auto r = clean.pixels();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double hi = std::nextafter(r[i] + sigma, 2.0);
    const double lo = std::nextafter(r[i] - sigma, -2.0);
    if (a[i] < 0.0 || a[i] > 1.0 || a[i] > hi || a[i] < lo) return false;
  }
  return true;
}

void text_gate(Check& c, const modelzoo::SentenceEncoder& enc, const TokenSequence& original,
               const TokenSequence& t, double sigma_s) {
  c.require(t.size() == original.size() && hamming_distance(t, original) <= 1, "text modifies more than one word");
  c.require(t == original || enc.similarity(t, original) > sigma_s, "text below the similarity gate");
}

void constraint_suite(Check& c) {
  const harness::Lab& l = lab();
  const auto data = harness::synthesize_dataset(TaskKind::kClassification, 120, harness::eval_seed(0));
  const auto enc = l.pretrained.sentence_encoder();
  const AttackBudget budget = AttackBudget::defaults_for(TaskKind::kClassification);
  int attacked = 0;
  for (std::size_t i = 0; i < data.examples.size() && attacked < kConstraintAttacks; ++i) {
    const auto& ex = data.examples[i];
    QuerySession s(l.task, ex.image, ex.text, budget.constraints(), enc);
    if (!blackbox::is_correct(s.original_prediction(), ex.label, TaskKind::kClassification)) continue;
    ++attacked;
    const std::uint64_t seed = stream_seed(9, i);
    const AttackResult r = icsa::vlattack(l.pretrained, s, budget, seed);
    c.require(s.ledger().constraint_violations == 0, "session recorded a violation");
    icsa::validate_result(r, ex.image, ex.text, enc, budget);
    for (const auto& cand : r.trace.tested) text_gate(c, enc, ex.text, cand.text, budget.sigma_s);
    for (const auto& cand : r.trace.ranked) text_gate(c, enc, ex.text, cand.text, budget.sigma_s);
    if (r.adversarial) {
      c.require(inside_ball(r.adversarial->image, ex.image, budget.sigma_i), "adversarial image outside the ball");
      text_gate(c, enc, ex.text, r.adversarial->text, budget.sigma_s);
    }
    // Every iterate of a replayed stage-1 + stage-3 schedule.
    const bsa::BsaObjective obj(l.pretrained, ex.image, ex.text);
    bsa::BsaRunner runner(obj, budget);
    ImageTensor x = runner.initialize(seed);
    c.require(inside_ball(x, ex.image, budget.sigma_i), "initial iterate outside the ball");
    for (int step = 0; step < budget.total_iterations; ++step) {
      TokenSequence t = ex.text;
      if (step >= budget.single_modal_iterations && !r.trace.ranked.empty()) {
        t = r.trace.ranked[static_cast<std::size_t>(step) % r.trace.ranked.size()].text;
      }
      x = runner.run(x, t, 1);
      c.require(inside_ball(x, ex.image, budget.sigma_i), "iterate outside the ball");
    }
  }
  c.require(attacked == kConstraintAttacks, "only " + std::to_string(attacked) + " correct samples");
}

void ledger_exactness(Check& c) {
  modelzoo::ModelConfig cfg;
  cfg.max_text_length = 24;
  const auto task = vlattack::testing::constant_task(cfg, 4, 2);
  const auto f = modelzoo::build_pretrained(cfg, 3);
  const TokenSequence text = TokenSequence::from_text(
      "describe the red circle and the blue square and the green triangle in this picture and find the yellow "
      "disk please");
  c.require(text.size() >= 20, "text shorter than 20 words");
  const ImageTensor image = harness::synthesize_dataset(TaskKind::kClassification, 1, 5).examples[0].image;
  const AttackBudget budget;
  QuerySession s(task, image, text, budget.constraints(), f.sentence_encoder());
  const AttackResult r = icsa::vlattack(f, s, budget, 1);
  const int C = static_cast<int>(r.trace.tested.size());
  const int K = r.trace.K;
  c.require(r.status == icsa::AttackStatus::kFailure, "never-flipping fixture flipped");
  c.require(C >= 20, "only " + std::to_string(C) + " candidates");
  c.require(K == 20 && r.trace.N_k == 1, "K=" + std::to_string(K) + " N_k=" + std::to_string(r.trace.N_k));
  c.require(r.image_iterations == budget.single_modal_iterations + K * r.trace.N_k && r.image_iterations == 40,
            "image iterations " + std::to_string(r.image_iterations));
  c.require(r.queries == 1 + C + 2 * K && s.ledger().count == r.queries,
            "queries " + std::to_string(r.queries) + " != " + std::to_string(1 + C + 2 * K));
  c.require(s.ledger().stage(Stage::kImage) == 1 && s.ledger().stage(Stage::kText) == C &&
                s.ledger().stage(Stage::kMultimodal) == 2 * K,
            "per-stage counts");
}

void degenerate_path(Check& c) {
  const auto task = vlattack::testing::constant_task(modelzoo::ModelConfig{}, 4, 2);
  const auto f = modelzoo::build_pretrained(modelzoo::ModelConfig{}, 3);
  const ImageTensor image = harness::synthesize_dataset(TaskKind::kClassification, 1, 11).examples[0].image;
  const TokenSequence text = TokenSequence::from_text("what color is the circle");
  const AttackBudget budget;
  {
    QuerySession s(task, image, text, budget.constraints(), f.sentence_encoder());
    const bsa::BsaObjective obj(f, image, text);
    bsa::BsaRunner runner(obj, budget);
    const ImageTensor adv = runner.run(runner.initialize(1), text, budget.single_modal_iterations);
    const AttackResult r = icsa::icsa_run(runner, s, adv, icsa::compute_plan({}, budget), budget);
    c.require(r.image_iterations - budget.single_modal_iterations == 20, "stage 3 ran " +
              std::to_string(r.image_iterations - budget.single_modal_iterations) + " steps");
    c.require(r.queries == 1 && s.ledger().stage(Stage::kMultimodal) == 1, "stage 3 queries");
  }
  {
    // Empty list through the full pipeline: no word may change.
    AttackBudget b = budget;
    b.max_modified_words = 0;
    QuerySession s(task, image, text, b.constraints(), f.sentence_encoder());
    const AttackResult r = icsa::vlattack(f, s, b, 1);
    c.require(r.trace.ranked.empty() && r.trace.K == 0, "candidate list not empty");
    c.require(r.image_iterations == 40, "full run iterations " + std::to_string(r.image_iterations));
    c.require(s.ledger().stage(Stage::kMultimodal) == 1, "full run stage 3 queries");
  }
}

void trend(Check& c) {
  const harness::Lab& l = lab();
  const auto held = harness::synthesize_dataset(TaskKind::kClassification, kTrendSamples, harness::eval_seed(0));
  const double acc = harness::accuracy(l.task, held);
  c.require(acc >= kAccuracyFloor, "held-out accuracy " + std::to_string(acc));
  harness::EvalConfig cfg;
  cfg.sample_count = kTrendSamples;
  cfg.seed = 0;
  auto run = [&](harness::Mode m) {
    harness::EvalConfig x = cfg;
    x.mode = m;
    return harness::evaluate(x, l.pretrained, l.task, held);
  };
  const auto noise = run(harness::Mode::kRandomNoise);
  const auto bsa = run(harness::Mode::kBSA);
  const auto ba = run(harness::Mode::kBSA_BA);
  const auto full = run(harness::Mode::kVLAttack);
  std::printf("  accuracy %.2f%%  ASR: RANDOM_NOISE %.2f  BSA %.2f  BSA+BA %.2f  VLATTACK %.2f  (attempted %d)\n",
              100.0 * acc, noise.asr_percent, bsa.asr_percent, ba.asr_percent, full.asr_percent, full.attempted);
  c.require(bsa.asr_percent >= noise.asr_percent + kNoiseMargin, "BSA does not beat noise by 20 points");
  auto contains = [](const harness::EvalReport& big, const harness::EvalReport& small) {
    const auto a = big.success_set(), b = small.success_set();
    return std::includes(a.begin(), a.end(), b.begin(), b.end());
  };
  c.require(contains(full, ba) && contains(ba, bsa), "success sets are not nested");
  c.require(full.asr_percent >= bsa.asr_percent + kMultimodalMargin, "VLATTACK does not beat BSA by 5 points");

  // Regression fixture, recorded on the first run.
  const nlohmann::json now = {{"accuracy", acc},
                              {"random_noise", noise.asr_percent},
                              {"bsa", bsa.asr_percent},
                              {"bsa_ba", ba.asr_percent},
                              {"vlattack", full.asr_percent}};
  const auto path = cache_dir() / "trend-fixture.json";
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    const nlohmann::json recorded = nlohmann::json::parse(in);
    c.require(recorded == now, "values drifted from " + path.string());
  } else {
    std::ofstream(path) << now.dump(2) << "\n";
  }
}

// Brute-force neighbour scan with its own cosine.
std::vector<int> nearest(const Matrix& table, int word, int k) {
  std::vector<std::pair<double, int>> all;
  for (int w = Vocabulary::kSpecialCount; w < table.rows(); ++w) {
    if (w == word) continue;
    double dot = 0, na = 0, nb = 0;
    for (Eigen::Index j = 0; j < table.cols(); ++j) {
      dot += table(word, j) * table(w, j);
      na += table(word, j) * table(word, j);
      nb += table(w, j) * table(w, j);
    }
    all.emplace_back(dot / std::sqrt(na * nb), w);
  }
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<int> out;
  for (int i = 0; i < k && i < static_cast<int>(all.size()); ++i) out.push_back(all[static_cast<std::size_t>(i)].second);
  return out;
}

double grid_iou(const BoundingBox& a, const BoundingBox& b) {
  int inter = 0, uni = 0;
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const bool ia = x >= a.x1 && x < a.x2 && y >= a.y1 && y < a.y2;
      const bool ib = x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2;
      inter += ia && ib;
      uni += ia || ib;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

void oracle_equivalence(Check& c) {
  const harness::Lab& l = lab();
  const Matrix& table = l.pretrained.network().word_table();
  for (int w = Vocabulary::kSpecialCount; w < table.rows(); ++w) {
    const TokenSequence t(std::vector<int>{w});
    c.require(text_attack::generate_substitutions(table, t, 0, 8) == nearest(table, w, 8),
              "substitutions differ for word " + std::to_string(w));
  }

  const auto& vocab = Vocabulary::standard();
  const auto data = harness::synthesize_dataset(TaskKind::kClassification, 12, harness::eval_seed(0));
  for (const auto& ex : data.examples) {
    QuerySession s(l.task, ex.image, ex.text, {}, l.pretrained.sentence_encoder());
    const auto got = text_attack::rank_word_importance(s, ex.text);
    const Prediction orig = blackbox::TaskGateway::predict(l.task, ex.image, ex.text);
    std::vector<std::pair<double, int>> scored;
    for (std::size_t i = 0; i < ex.text.size(); ++i) {
      if (vocab.is_stop_word(ex.text[i])) continue;
      const Prediction p = blackbox::TaskGateway::predict(l.task, ex.image, ex.text.with_token(i, Vocabulary::kUnk));
      const bool flipped = blackbox::is_adversarial(p, orig, TaskKind::kClassification);
      scored.emplace_back(flipped ? orig.confidence + p.confidence : orig.confidence - p.confidence,
                          static_cast<int>(i));
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<int> expected;
    for (const auto& [score, pos] : scored) expected.push_back(pos);
    c.require(got == expected, "importance order differs for \"" + ex.text.text() + "\"");
  }

  Rng rng(25);
  auto box = [&] {
    const int x1 = rng.below(31), y1 = rng.below(31);
    return BoundingBox{x1, y1, x1 + 1 + rng.below(32 - x1), y1 + 1 + rng.below(32 - y1)};
  };
  for (int i = 0; i < kIouPairs; ++i) {
    const BoundingBox a = box(), b = box();
    c.require(std::abs(blackbox::iou(a, b) - grid_iou(a, b)) <= kIouTol, "IoU differs from grid count");
  }
}

void determinism(Check& c) {
  lab();  // makes sure the checkpoints exist
  const auto dir = vlattack::testing::scratch_dir();
  auto run = [&](const std::string& name) {
    const auto out = dir / name;
    const std::string cmd = std::string("\"") + VLATTACK_CLI + "\" evaluate --checkpoints \"" + cache_dir().string() +
                            "\" --samples " + std::to_string(kDeterminismSamples) + " --seed 0 --out \"" +
                            out.string() + "\" > /dev/null";
    c.require(std::system(cmd.c_str()) == 0, "evaluate exited with an error");
    return harness::load_report(out);
  };
  const harness::EvalReport a = run("first.json");
  const harness::EvalReport b = run("second.json");
  c.require(harness::same_results(a, b), "reports differ");
  nlohmann::json ja = harness::report_to_json(a), jb = harness::report_to_json(b);
  ja.erase("generated_at");
  jb.erase("generated_at");
  c.require(ja == jb, "report JSON differs outside generated_at");
  c.require(a.attempted > 0, "nothing attacked");
}

}  // namespace

int main() {
  bool ok = true;
  ok &= report(1, "plan exactness over a 500-case sweep", plan_exactness);
  ok &= report(2, "block-wise loss gradient vs finite differences", gradient_fidelity);
  ok &= report(3, "constraint suite over 50 full attacks", constraint_suite);
  ok &= report(4, "ledger exactness on a never-flipping task", ledger_exactness);
  ok &= report(5, "empty candidate list degenerates to BSA", degenerate_path);
  ok &= report(6, "trend reproduction on the toy classification task", trend);
  ok &= report(7, "oracle equivalence", oracle_equivalence);
  ok &= report(8, "evaluate is deterministic", determinism);
  return ok ? 0 : 1;
}
