#pragma once

#include <vector>

#include "vlattack/modelzoo/pretrained.hpp"
#include "vlattack/modelzoo/task.hpp"

namespace vlattack::modelzoo {

// Location bins (x1, y1, x2, y2) for a box.
std::vector<int> box_bins(const BoundingBox& box, int image_size, int location_bins);

// Decoder training sequence for a label, terminated by the end token.
std::vector<int> decoder_targets(const ModelConfig& config, const TaskSpec& spec, const Answer& label);

// ConfigurationError when the model cannot serve the task.
void check_task_compatible(const VisionLanguageModel& model, const TaskSpec& spec);

}  // namespace vlattack::modelzoo

namespace vlattack::modelzoo::detail {

// Construction and parameter access for FineTunedTask inside the model zoo.
struct TaskAccess {
  static FineTunedTask make(VisionLanguageModel network, TaskSpec spec) {
    return FineTunedTask(std::move(network), std::move(spec));
  }
  static const VisionLanguageModel& network(const FineTunedTask& task) { return task.network_; }
};

}  // namespace vlattack::modelzoo::detail
