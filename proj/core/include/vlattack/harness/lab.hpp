#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "vlattack/modelzoo/checkpoint.hpp"
#include "vlattack/modelzoo/pretrained.hpp"

namespace vlattack::harness {

using modelzoo::FineTunedTask;
using modelzoo::PretrainedModel;
using modelzoo::Structure;

struct LabRecipe {
  int corpus_size = 8000;
  int pretrain_epochs = 24;
  int train_size = 8000;
  int finetune_epochs = 5;
  int batch_size = 16;
  double pretrain_lr = 1e-3;
  double finetune_lr = 5e-5;
  double head_lr_scale = 20.0;

  // Defaults above suit classification; grounding and generation fine-tune
  // longer at a higher rate.
  static LabRecipe for_task(TaskKind kind);
};

// Seed streams: corpus, training data and held-out data never overlap.
std::uint64_t corpus_seed(std::uint64_t seed);
std::uint64_t train_seed(std::uint64_t seed);
std::uint64_t eval_seed(std::uint64_t seed);

struct Lab {
  PretrainedModel pretrained;
  FineTunedTask task;
};

// Pre-trains F on the matching corpus, then fine-tunes S on the task.
Lab train_lab(Structure structure, TaskKind kind, std::uint64_t seed, const LabRecipe& recipe = {});

// Checkpoint paths used by the command-line tool: pretrained-<model>.vlt and
// task-<model>-<task>.vlt under `dir`.
std::filesystem::path pretrained_path(const std::filesystem::path& dir, Structure structure);
std::filesystem::path task_path(const std::filesystem::path& dir, Structure structure, TaskKind kind);

// Loads both checkpoints when present, otherwise trains and writes them.
Lab load_or_train_lab(const std::filesystem::path& dir, Structure structure, TaskKind kind, std::uint64_t seed,
                      const LabRecipe& recipe = {});

// Fraction of examples S answers correctly (grounding: IoU > 0.5).
double accuracy(const FineTunedTask& task, const modelzoo::TaskData& data);
// Mean IoU of predicted boxes against labels; grounding only.
double mean_iou(const FineTunedTask& task, const modelzoo::TaskData& data);

}  // namespace vlattack::harness
