#include "vlattack/harness/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "vlattack/util/parallel.hpp"
#include "vlattack/util/random.hpp"

namespace vlattack::harness {

namespace {

struct ModeInfo {
  Mode mode;
  const char* name;
};

constexpr ModeInfo kModes[] = {
    {Mode::kIE, "IE"},
    {Mode::kTE, "TE"},
    {Mode::kBSA, "BSA"},
    {Mode::kBSA_BA, "BSA+BA"},
    {Mode::kBSA_BA_Q, "BSA+BA+Q"},
    {Mode::kVLAttack, "VLATTACK"},
    {Mode::kRandomNoise, "RANDOM_NOISE"},
    {Mode::kMIVariant, "MI_VARIANT"},
};

icsa::VlattackOptions options_for(const EvalConfig& c) {
  icsa::VlattackOptions o;
  o.substitutions = c.substitutions;
  o.optimizer = {c.optimizer, c.momentum_decay};
  switch (c.mode) {
    case Mode::kIE:
      o.depth = icsa::Depth::kImageOnly;
      o.scope = bsa::LossScope::kImageEncoder;
      break;
    case Mode::kTE:
      o.depth = icsa::Depth::kImageOnly;
      o.scope = bsa::LossScope::kFusionEncoder;
      break;
    case Mode::kBSA: o.depth = icsa::Depth::kImageOnly; break;
    case Mode::kBSA_BA: o.depth = icsa::Depth::kImageText; break;
    case Mode::kBSA_BA_Q: o.depth = icsa::Depth::kQueryCandidates; break;
    case Mode::kVLAttack: o.depth = icsa::Depth::kFull; break;
    case Mode::kMIVariant:
      o.depth = icsa::Depth::kFull;
      o.optimizer.kind = bsa::Optimizer::kMomentum;
      break;
    case Mode::kRandomNoise: break;
  }
  return o;
}

icsa::AttackResult random_noise(blackbox::QuerySession& session, const bsa::AttackBudget& budget,
                                std::uint64_t seed) {
  icsa::AttackResult r;
  const ImageTensor adv = bsa::init_perturbation(session.original_image(), budget.sigma_i, seed);
  const Prediction p = session.query(adv, session.original_text(), blackbox::Stage::kImage);
  const bool flipped = session.flips(p);
  r.trace.queries.push_back({blackbox::Stage::kImage, -1, 0, flipped, p.confidence});
  if (flipped) {
    r.status = icsa::AttackStatus::kSuccessImage;
    r.adversarial = icsa::AdversarialPair{adv, session.original_text()};
  }
  r.queries = session.ledger().count;
  r.probes = session.ledger().probes;
  return r;
}

double round2(double x) { return std::round(x * 100.0) / 100.0; }

}  // namespace

std::string version() { return VLATTACK_VERSION; }

std::string to_string(Mode mode) {
  for (const auto& m : kModes) {
    if (m.mode == mode) return m.name;
  }
  return "unknown";
}

Mode mode_from_string(const std::string& name) {
  for (const auto& m : kModes) {
    if (name == m.name) return m.mode;
  }
  throw ConfigurationError("unknown evaluation mode: " + name);
}

const std::vector<Mode>& ablation_modes() {
  static const std::vector<Mode> modes = {Mode::kIE, Mode::kTE, Mode::kBSA, Mode::kBSA_BA, Mode::kBSA_BA_Q,
                                          Mode::kVLAttack};
  return modes;
}

std::vector<int> EvalReport::success_set() const {
  std::vector<int> out;
  for (const auto& s : samples) {
    if (s.success()) out.push_back(s.index);
  }
  return out;
}

bool same_results(const EvalReport& a, const EvalReport& b) {
  EvalReport x = a;
  x.generated_at = b.generated_at;
  return x == b;
}

EvalReport evaluate(const EvalConfig& config, const modelzoo::PretrainedModel& model,
                    const modelzoo::FineTunedTask& task, const modelzoo::TaskData& data) {
  config.budget.validate();
  if (config.sample_count <= 0) throw ConfigurationError("sample count must be positive");
  if (task.kind() != config.task_kind || data.spec.kind != config.task_kind) {
    throw ConfigurationError("evaluation task kind does not match the task or dataset");
  }
  const std::size_t n = std::min(static_cast<std::size_t>(config.sample_count), data.examples.size());

  std::vector<char> correct(n);
  parallel_for(n, [&](std::size_t i) {
    const auto& ex = data.examples[i];
    correct[i] = blackbox::is_correct(blackbox::TaskGateway::predict(task, ex.image, ex.text), ex.label, task.kind());
  });
  std::vector<int> eligible;
  for (std::size_t i = 0; i < n; ++i) {
    if (correct[i]) eligible.push_back(static_cast<int>(i));
  }
  if (eligible.empty()) throw EvaluationError("no correctly predicted sample to attack");

  const modelzoo::SentenceEncoder encoder = model.sentence_encoder();
  const icsa::VlattackOptions options = options_for(config);
  std::vector<SampleRecord> records(eligible.size());
  parallel_for(eligible.size(), [&](std::size_t slot) {
    const int index = eligible[slot];
    const auto& ex = data.examples[static_cast<std::size_t>(index)];
    blackbox::QuerySession session(task, ex.image, ex.text, config.budget.constraints(), encoder, config.score_mode);
    const std::uint64_t seed = stream_seed(config.seed, static_cast<std::uint64_t>(index));
    const icsa::AttackResult r = config.mode == Mode::kRandomNoise
                                     ? random_noise(session, config.budget, seed)
                                     : icsa::vlattack(model, session, config.budget, seed, options);
    icsa::validate_result(r, ex.image, ex.text, encoder, config.budget);
    if (session.ledger().constraint_violations != 0) throw AttackError("query ledger recorded a violation");

    SampleRecord& rec = records[slot];
    rec.index = index;
    rec.status = r.status;
    rec.queries = r.queries;
    rec.probes = r.probes;
    rec.image_iterations = r.image_iterations;
    rec.candidate_index = r.candidate_index;
    if (r.adversarial) {
      rec.linf = linf_distance(r.adversarial->image, ex.image);
      rec.adversarial_text = r.adversarial->text.tokens();
    }
    rec.trace = r.trace;
  });

  EvalReport report;
  report.config = config;
  report.structure = modelzoo::to_string(task.structure());
  report.evaluated = static_cast<int>(n);
  report.attempted = static_cast<int>(records.size());
  double queries = 0.0, iterations = 0.0;
  for (const auto& rec : records) {
    switch (rec.status) {
      case icsa::AttackStatus::kSuccessImage: ++report.successes_image; break;
      case icsa::AttackStatus::kSuccessText: ++report.successes_text; break;
      case icsa::AttackStatus::kSuccessMultimodal: ++report.successes_multimodal; break;
      case icsa::AttackStatus::kFailure: break;
    }
    queries += rec.queries;
    iterations += rec.image_iterations;
  }
  report.asr_percent = round2(100.0 * report.successes() / report.attempted);
  report.mean_queries = queries / report.attempted;
  report.mean_image_iterations = iterations / report.attempted;
  report.samples = std::move(records);
  report.version = version();
  report.seed = config.seed;
  return report;
}

AblationTable run_ablation(const EvalConfig& base, const modelzoo::PretrainedModel& model,
                           const modelzoo::FineTunedTask& task, const modelzoo::TaskData& data) {
  AblationTable table;
  for (Mode mode : ablation_modes()) {
    EvalConfig c = base;
    c.mode = mode;
    EvalReport r = evaluate(c, model, task, data);
    table.attempted = r.attempted;
    table.rows.push_back({mode, r.asr_percent, r.successes()});
    table.reports.push_back(std::move(r));
  }
  return table;
}

}  // namespace vlattack::harness
