#include "vlattack/harness/lab.hpp"

#include <vector>

#include "vlattack/blackbox/blackbox.hpp"
#include "vlattack/harness/dataset.hpp"
#include "vlattack/util/parallel.hpp"
#include "vlattack/util/random.hpp"

namespace vlattack::harness {

std::uint64_t corpus_seed(std::uint64_t seed) { return stream_seed(seed, 0x10); }
std::uint64_t train_seed(std::uint64_t seed) { return stream_seed(seed, 0x20); }
std::uint64_t eval_seed(std::uint64_t seed) { return stream_seed(seed, 0x30); }

LabRecipe LabRecipe::for_task(TaskKind kind) {
  LabRecipe r;
  if (kind != TaskKind::kClassification) {
    r.finetune_epochs = 8;
    r.finetune_lr = 3e-4;
    r.head_lr_scale = 3.0;
  }
  return r;
}

Lab train_lab(Structure structure, TaskKind kind, std::uint64_t seed, const LabRecipe& recipe) {
  modelzoo::ModelConfig config;
  config.structure = structure;
  PretrainedModel model = modelzoo::build_pretrained(config, stream_seed(seed, 0x01));
  const auto corpus = synthesize_corpus(recipe.corpus_size, corpus_seed(seed));
  model = modelzoo::pretrain(std::move(model), corpus,
                             {recipe.pretrain_epochs, recipe.batch_size, recipe.pretrain_lr, 1.0, stream_seed(seed, 0x02)});
  const auto data = synthesize_dataset(kind, recipe.train_size, train_seed(seed));
  FineTunedTask task = modelzoo::fine_tune(
      model, data, {recipe.finetune_epochs, recipe.batch_size, recipe.finetune_lr, 1.0, stream_seed(seed, 0x03),
                        recipe.head_lr_scale});
  return {std::move(model), std::move(task)};
}

std::filesystem::path pretrained_path(const std::filesystem::path& dir, Structure structure) {
  return dir / ("pretrained-" + to_string(structure) + ".vlt");
}

std::filesystem::path task_path(const std::filesystem::path& dir, Structure structure, TaskKind kind) {
  return dir / ("task-" + to_string(structure) + "-" + to_string(kind) + ".vlt");
}

Lab load_or_train_lab(const std::filesystem::path& dir, Structure structure, TaskKind kind, std::uint64_t seed,
                      const LabRecipe& recipe) {
  const auto fp = pretrained_path(dir, structure);
  const auto sp = task_path(dir, structure, kind);
  if (std::filesystem::exists(fp) && std::filesystem::exists(sp)) {
    return {modelzoo::load_pretrained(fp), modelzoo::load_task(sp)};
  }
  Lab lab = train_lab(structure, kind, seed, recipe);
  std::filesystem::create_directories(dir);
  modelzoo::save_pretrained(fp, lab.pretrained);
  modelzoo::save_task(sp, lab.task);
  return lab;
}

double accuracy(const FineTunedTask& task, const modelzoo::TaskData& data) {
  if (data.examples.empty()) return 0.0;
  std::vector<char> ok(data.examples.size());
  parallel_for(data.examples.size(), [&](std::size_t i) {
    const auto& ex = data.examples[i];
    ok[i] = blackbox::is_correct(blackbox::TaskGateway::predict(task, ex.image, ex.text), ex.label, task.kind());
  });
  std::size_t hits = 0;
  for (char c : ok) hits += c ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ok.size());
}

double mean_iou(const FineTunedTask& task, const modelzoo::TaskData& data) {
  if (task.kind() != TaskKind::kGrounding) throw InputError("mean IoU needs a grounding task");
  if (data.examples.empty()) return 0.0;
  std::vector<double> v(data.examples.size());
  parallel_for(data.examples.size(), [&](std::size_t i) {
    const auto& ex = data.examples[i];
    const Prediction p = blackbox::TaskGateway::predict(task, ex.image, ex.text);
    v[i] = blackbox::iou(std::get<BoundingBox>(p.answer), std::get<BoundingBox>(ex.label));
  });
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

}  // namespace vlattack::harness
