#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "vlattack/icsa/icsa.hpp"
#include "vlattack/modelzoo/pretrained.hpp"

namespace vlattack::harness {

// No correctly predicted sample to attack.
struct EvaluationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string version();

enum class Mode { kIE, kTE, kBSA, kBSA_BA, kBSA_BA_Q, kVLAttack, kRandomNoise, kMIVariant };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& name);

// The six modes of the ablation ladder, in table order.
const std::vector<Mode>& ablation_modes();

struct EvalConfig {
  Mode mode = Mode::kVLAttack;
  TaskKind task_kind = TaskKind::kClassification;
  int sample_count = 200;
  bsa::AttackBudget budget;
  std::uint64_t seed = 0;
  bsa::Optimizer optimizer = bsa::Optimizer::kPgd;
  double momentum_decay = 1.0;
  int substitutions = 8;
  blackbox::ScoreMode score_mode = blackbox::ScoreMode::kScores;

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

nlohmann::json to_json(const EvalConfig& config);
EvalConfig eval_config_from_json(const nlohmann::json& j);

struct SampleRecord {
  int index = 0;  // position in the dataset
  icsa::AttackStatus status = icsa::AttackStatus::kFailure;
  int queries = 0;
  int probes = 0;
  int image_iterations = 0;
  int candidate_index = -1;
  double linf = 0.0;                    // of the adversarial image, 0 on failure
  std::vector<int> adversarial_text;    // empty on failure
  icsa::AttackTrace trace;

  bool success() const { return status != icsa::AttackStatus::kFailure; }
  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct EvalReport {
  EvalConfig config;
  std::string structure;
  int evaluated = 0;  // samples considered before filtering
  int attempted = 0;  // correctly predicted samples attacked
  int successes_image = 0;
  int successes_text = 0;
  int successes_multimodal = 0;
  double asr_percent = 0.0;
  double mean_queries = 0.0;
  double mean_image_iterations = 0.0;
  std::vector<SampleRecord> samples;
  std::string version;
  std::uint64_t seed = 0;
  std::string generated_at;  // excluded from reproducibility comparisons

  int successes() const { return successes_image + successes_text + successes_multimodal; }
  std::vector<int> success_set() const;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Equality ignoring generated_at.
bool same_results(const EvalReport& a, const EvalReport& b);

// Attacks the first `sample_count` examples that S predicts correctly on clean
// input. Samples run in parallel; each gets its own query session and the
// seed stream (config.seed, dataset index). EvaluationError when no sample
// qualifies; ConfigurationError on a task-kind mismatch.
EvalReport evaluate(const EvalConfig& config, const modelzoo::PretrainedModel& model,
                    const modelzoo::FineTunedTask& task, const modelzoo::TaskData& data);

struct AblationRow {
  Mode mode = Mode::kBSA;
  double asr_percent = 0.0;
  int successes = 0;
};

struct AblationTable {
  int attempted = 0;
  std::vector<AblationRow> rows;
  std::vector<EvalReport> reports;  // one per row
};

AblationTable run_ablation(const EvalConfig& base, const modelzoo::PretrainedModel& model,
                           const modelzoo::FineTunedTask& task, const modelzoo::TaskData& data);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
// Writes indented JSON; std::runtime_error on I/O failure.
void emit_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport load_report(const std::filesystem::path& path);

nlohmann::json ablation_to_json(const AblationTable& table);
// Bar chart of ASR per mode.
void write_chart(const AblationTable& table, const std::filesystem::path& path);

}  // namespace vlattack::harness
