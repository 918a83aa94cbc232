#pragma once

#include <filesystem>

#include "vlattack/harness/lab.hpp"
#include "vlattack/modelzoo/pretrained.hpp"

namespace vlattack::testing {

// Trained (F, S) for the standard recipe at seed 0. Trained once per build
// tree and cached on disk; training is deterministic, so the cache only
// saves time.
const harness::Lab& trained_lab(modelzoo::Structure structure, TaskKind kind);

// Held-out examples for the standard eval seed.
const modelzoo::TaskData& held_out(TaskKind kind, int n = 200);

// Encoder-only classification task whose head ignores its input and always
// answers `label` with fixed confidence.
modelzoo::FineTunedTask constant_task(const modelzoo::ModelConfig& config, int classes, int label,
                                      std::uint64_t seed = 5);

// Untrained tiny model for gradient checks.
modelzoo::PretrainedModel tiny_model(modelzoo::Structure structure = modelzoo::Structure::kEncoderOnly,
                                     std::uint64_t seed = 7);

// Per-process scratch directory, removed at exit.
std::filesystem::path scratch_dir();

}  // namespace vlattack::testing
