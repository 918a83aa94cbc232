#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "vlattack/blackbox/blackbox.hpp"
#include "vlattack/harness/dataset.hpp"
#include "vlattack/harness/evaluate.hpp"
#include "vlattack/harness/lab.hpp"
#include "vlattack/icsa/icsa.hpp"
#include "vlattack/modelzoo/checkpoint.hpp"

namespace fs = std::filesystem;
using namespace vlattack;

namespace {

struct Common {
  std::string model = "encoder_only";
  std::string task = "classification";
  std::string mode = "VLATTACK";
  std::optional<double> sigma_i;
  double sigma_s = 0.95;
  int steps = 40;
  int init_steps = 20;
  double step_size = 0.01;
  int samples = 200;
  std::uint64_t seed = 0;
  std::string out;
  std::string optimizer = "pgd";
  std::string checkpoints = "checkpoints";
  bool hard_label = false;
};

void add_model_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--model", c.model, "Model structure")
      ->check(CLI::IsMember({"encoder_only", "encoder_decoder"}))
      ->capture_default_str();
  cmd->add_option("--task", c.task, "Downstream task")
      ->check(CLI::IsMember({"classification", "generation", "grounding"}))
      ->capture_default_str();
  cmd->add_option("--seed", c.seed, "Master seed")->capture_default_str();
  cmd->add_option("--checkpoints", c.checkpoints, "Checkpoint directory")->capture_default_str();
}

void add_attack_flags(CLI::App* cmd, Common& c) {
  add_model_flags(cmd, c);
  cmd->add_option("--mode", c.mode, "Attack mode")
      ->check(CLI::IsMember({"IE", "TE", "BSA", "BSA+BA", "BSA+BA+Q", "VLATTACK", "RANDOM_NOISE", "MI_VARIANT"}))
      ->capture_default_str();
  cmd->add_option("--sigma-i", c.sigma_i, "Image l-inf radius (default 16/255, grounding 4/255)");
  cmd->add_option("--sigma-s", c.sigma_s, "Sentence similarity threshold")->capture_default_str();
  cmd->add_option("--steps", c.steps, "Total image iterations N")->capture_default_str();
  cmd->add_option("--init-steps", c.init_steps, "Single-modal image iterations N_s")->capture_default_str();
  cmd->add_option("--step-size", c.step_size, "PGD step size")->capture_default_str();
  cmd->add_option("--samples", c.samples, "Evaluation samples")->capture_default_str();
  cmd->add_option("--out", c.out, "Output path");
  cmd->add_option("--optimizer", c.optimizer, "Image optimizer")
      ->check(CLI::IsMember({"pgd", "mi"}))
      ->capture_default_str();
  cmd->add_flag("--hard-label", c.hard_label, "Black box reveals labels only");
}

TaskKind task_kind(const Common& c) {
  return c.task == "generation" ? TaskKind::kSequenceGeneration : task_kind_from_string(c.task);
}

harness::EvalConfig eval_config(const Common& c) {
  harness::EvalConfig cfg;
  cfg.mode = harness::mode_from_string(c.mode);
  cfg.task_kind = task_kind(c);
  cfg.sample_count = c.samples;
  cfg.budget = bsa::AttackBudget::defaults_for(cfg.task_kind);
  if (c.sigma_i) cfg.budget.sigma_i = *c.sigma_i;
  cfg.budget.sigma_s = c.sigma_s;
  cfg.budget.total_iterations = c.steps;
  cfg.budget.single_modal_iterations = c.init_steps;
  cfg.budget.step_size = c.step_size;
  cfg.seed = c.seed;
  cfg.optimizer = bsa::optimizer_from_string(c.optimizer);
  cfg.score_mode = c.hard_label ? blackbox::ScoreMode::kHardLabel : blackbox::ScoreMode::kScores;
  cfg.budget.validate();
  return cfg;
}

harness::Lab load_lab(const Common& c) {
  const auto structure = modelzoo::structure_from_string(c.model);
  const auto fp = harness::pretrained_path(c.checkpoints, structure);
  const auto sp = harness::task_path(c.checkpoints, structure, task_kind(c));
  for (const auto& p : {fp, sp}) {
    if (!fs::exists(p)) throw std::runtime_error("missing checkpoint " + p.string() + "; run `vlattack train` first");
  }
  return {modelzoo::load_pretrained(fp), modelzoo::load_task(sp)};
}

void write_json(const nlohmann::json& j, const std::string& path) {
  if (path.empty()) {
    std::cout << j.dump(1) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << j.dump(1) << '\n';
}

// Overrides of the per-task lab recipe.
struct RecipeFlags {
  std::optional<int> corpus_size, pretrain_epochs, train_size, finetune_epochs;
  std::optional<double> finetune_lr;
};

int run_train(const Common& c, const RecipeFlags& flags, const std::string& dataset_dir) {
  const auto structure = modelzoo::structure_from_string(c.model);
  const TaskKind kind = task_kind(c);
  harness::LabRecipe recipe = harness::LabRecipe::for_task(kind);
  recipe.corpus_size = flags.corpus_size.value_or(recipe.corpus_size);
  recipe.pretrain_epochs = flags.pretrain_epochs.value_or(recipe.pretrain_epochs);
  recipe.train_size = flags.train_size.value_or(recipe.train_size);
  recipe.finetune_epochs = flags.finetune_epochs.value_or(recipe.finetune_epochs);
  recipe.finetune_lr = flags.finetune_lr.value_or(recipe.finetune_lr);
  std::printf("training %s on %s (seed %llu)\n", c.model.c_str(), c.task.c_str(),
              static_cast<unsigned long long>(c.seed));
  harness::Lab lab = harness::train_lab(structure, kind, c.seed, recipe);
  fs::create_directories(c.checkpoints);
  modelzoo::save_pretrained(harness::pretrained_path(c.checkpoints, structure), lab.pretrained);
  modelzoo::save_task(harness::task_path(c.checkpoints, structure, kind), lab.task);
  const auto held_out = harness::synthesize_dataset(kind, 200, harness::eval_seed(c.seed));
  std::printf("held-out accuracy: %.2f%%\n", 100.0 * harness::accuracy(lab.task, held_out));
  if (kind == TaskKind::kGrounding) std::printf("held-out mean IoU: %.4f\n", harness::mean_iou(lab.task, held_out));
  if (!dataset_dir.empty()) {
    fs::create_directories(dataset_dir);
    harness::write_dataset(held_out, fs::path(dataset_dir) / ("eval-" + c.task + ".vlt"),
                           fs::path(dataset_dir) / ("eval-" + c.task + ".json"));
  }
  std::printf("checkpoints written to %s\n", c.checkpoints.c_str());
  return 0;
}

int run_attack(const Common& c, int index) {
  const harness::EvalConfig cfg = eval_config(c);
  const harness::Lab lab = load_lab(c);
  const auto data = harness::synthesize_dataset(cfg.task_kind, index + 1, harness::eval_seed(c.seed));
  const auto& ex = data.examples.at(static_cast<std::size_t>(index));
  std::printf("sample %d: \"%s\"\n", index, ex.text.text().c_str());

  harness::EvalConfig one = cfg;
  modelzoo::TaskData single{data.spec, {ex}};
  one.sample_count = 1;
  const harness::EvalReport report = harness::evaluate(one, lab.pretrained, lab.task, single);
  nlohmann::json j = harness::report_to_json(report).at("samples").at(0);
  j["index"] = index;
  const auto& s = report.samples.front();
  std::printf("status: %s  queries: %d  probes: %d  image iterations: %d\n", icsa::to_string(s.status).c_str(),
              s.queries, s.probes, s.image_iterations);
  if (s.success()) {
    std::printf("adversarial text: \"%s\"  linf: %.5f\n", TokenSequence(s.adversarial_text).text().c_str(), s.linf);
  }
  write_json(j, c.out);
  return 0;
}

int run_evaluate(const Common& c) {
  const harness::EvalConfig cfg = eval_config(c);
  const harness::Lab lab = load_lab(c);
  const auto data = harness::synthesize_dataset(cfg.task_kind, cfg.sample_count, harness::eval_seed(c.seed));
  const harness::EvalReport report = harness::evaluate(cfg, lab.pretrained, lab.task, data);
  std::printf("%s on %s/%s: ASR %.2f%% over %d attempted (image %d, text %d, multimodal %d), mean queries %.2f\n",
              c.mode.c_str(), c.model.c_str(), c.task.c_str(), report.asr_percent, report.attempted,
              report.successes_image, report.successes_text, report.successes_multimodal, report.mean_queries);
  harness::emit_report(report, c.out.empty() ? fs::path("report.json") : fs::path(c.out));
  return 0;
}

int run_ablate(const Common& c, const std::string& chart) {
  const harness::EvalConfig cfg = eval_config(c);
  const harness::Lab lab = load_lab(c);
  const auto data = harness::synthesize_dataset(cfg.task_kind, cfg.sample_count, harness::eval_seed(c.seed));
  const harness::AblationTable table = harness::run_ablation(cfg, lab.pretrained, lab.task, data);
  std::printf("%-10s %8s\n", "mode", "ASR");
  for (const auto& row : table.rows) std::printf("%-10s %7.2f%%\n", harness::to_string(row.mode).c_str(), row.asr_percent);
  std::printf("attempted: %d\n", table.attempted);
  nlohmann::json j = harness::ablation_to_json(table);
  j["config"] = harness::to_json(cfg);
  if (!c.out.empty()) write_json(j, c.out);
  if (!chart.empty()) harness::write_chart(table, chart);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial attacks on toy vision-language models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", harness::version());

  Common train_opts, attack_opts, eval_opts, ablate_opts;
  RecipeFlags recipe;
  std::string dataset_dir, chart;
  int index = 0;

  CLI::App* train = app.add_subcommand("train", "Pre-train F and fine-tune S, writing checkpoints");
  add_model_flags(train, train_opts);
  train->add_option("--corpus-size", recipe.corpus_size, "Pre-training pairs (default 8000)");
  train->add_option("--pretrain-epochs", recipe.pretrain_epochs, "Pre-training epochs (default 24)");
  train->add_option("--train-size", recipe.train_size, "Fine-tuning examples (default 8000)");
  train->add_option("--finetune-epochs", recipe.finetune_epochs, "Fine-tuning epochs (default 5, grounding and generation 8)");
  train->add_option("--finetune-lr", recipe.finetune_lr, "Fine-tuning rate of the backbone (default 5e-5, grounding and generation 3e-4)");
  train->add_option("--dataset-dir", dataset_dir, "Also write the held-out dataset here");

  CLI::App* attack = app.add_subcommand("attack", "Attack one held-out sample and print its trace");
  add_attack_flags(attack, attack_opts);
  attack->add_option("--index", index, "Held-out sample index")->capture_default_str();

  CLI::App* evaluate = app.add_subcommand("evaluate", "Attack held-out samples and write a report");
  add_attack_flags(evaluate, eval_opts);

  CLI::App* ablate = app.add_subcommand("ablate", "Run the ablation ladder");
  add_attack_flags(ablate, ablate_opts);
  ablate->add_option("--chart", chart, "Write an SVG bar chart here");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return run_train(train_opts, recipe, dataset_dir);
    if (*attack) return run_attack(attack_opts, index);
    if (*evaluate) return run_evaluate(eval_opts);
    if (*ablate) return run_ablate(ablate_opts, chart);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
