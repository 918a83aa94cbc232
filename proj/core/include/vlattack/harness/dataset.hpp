#pragma once

#include <cstdint>
#include <filesystem>

#include "vlattack/modelzoo/task.hpp"

namespace vlattack::harness {

using modelzoo::LabeledExample;
using modelzoo::PretrainingCorpus;
using modelzoo::TaskData;
using modelzoo::TaskSpec;

enum class ShapeType { kCircle, kSquare, kTriangle };

struct Shape {
  ShapeType type = ShapeType::kCircle;
  int color = 0;  // index into the eight base colors
  BoundingBox box;
};

struct Scene {
  double background = 0.0;
  std::vector<Shape> shapes;
};

constexpr int kColorCount = 8;
constexpr int kShapeTypeCount = 3;
constexpr int kImageSize = 32;

// Base color and shape words ("red", ..., "circle", ...).
int color_word(int color);
int shape_word(ShapeType type);

ImageTensor render(const Scene& scene, int size = kImageSize);

// Classification: 8 color classes named by the base color words.
TaskSpec task_spec(TaskKind kind);

// n labeled examples; example i depends only on (seed, i).
// Classification asks for the color of one shape, grounding refers to a
// shape and labels its box, generation asks for a caption of 1-2 shapes.
TaskData synthesize_dataset(TaskKind kind, int n, std::uint64_t seed);

// Image-text matching pairs, half of them mismatched.
PretrainingCorpus synthesize_corpus(int n, std::uint64_t seed);

// Writes `container` (one tensor "images", n x H x W x C) and a JSON
// manifest with one entry per example: byte offset of its image in the
// container file, text and label.
void write_dataset(const TaskData& data, const std::filesystem::path& container,
                   const std::filesystem::path& manifest);
TaskData read_dataset(const std::filesystem::path& container, const std::filesystem::path& manifest);

}  // namespace vlattack::harness
