#include "vlattack/harness/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <string>

#include "vlattack/modelzoo/checkpoint.hpp"
#include "vlattack/modelzoo/vocabulary.hpp"
#include "vlattack/util/random.hpp"

namespace vlattack::harness {

namespace {

using modelzoo::Vocabulary;

constexpr std::array<std::array<double, 3>, kColorCount> kRgb = {{
    {1.0, 0.0, 0.0}, {0.0, 0.85, 0.0}, {0.1, 0.2, 1.0}, {1.0, 1.0, 0.0},
    {0.0, 1.0, 1.0}, {1.0, 0.0, 1.0}, {1.0, 1.0, 1.0}, {1.0, 0.55, 0.0},
}};

const std::array<std::vector<std::string>, kColorCount> kColorNames = {{
    {"red", "crimson", "scarlet"}, {"green", "emerald"}, {"blue", "azure"}, {"yellow", "golden"},
    {"cyan", "aqua"}, {"magenta", "fuchsia"}, {"white", "ivory"}, {"orange", "amber"},
}};

const std::array<std::vector<std::string>, kShapeTypeCount> kShapeNames = {{
    {"circle", "disk", "ring"}, {"square", "box", "block"}, {"triangle", "wedge"},
}};

const std::vector<std::string> kImageNames = {"image", "picture", "photo", "scene"};

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& options) {
  return options[static_cast<std::size_t>(rng.below(static_cast<int>(options.size())))];
}

bool inside(ShapeType type, const BoundingBox& b, double px, double py) {
  const double s = b.x2 - b.x1;
  switch (type) {
    case ShapeType::kSquare: return px >= b.x1 && px < b.x2 && py >= b.y1 && py < b.y2;
    case ShapeType::kCircle: {
      const double cx = b.x1 + s / 2, cy = b.y1 + s / 2;
      return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= s * s / 4;
    }
    case ShapeType::kTriangle: {
      const double t = (py - b.y1) / s;
      if (t < 0.0 || t > 1.0) return false;
      return std::abs(px - (b.x1 + s / 2)) <= t * s / 2;
    }
  }
  return false;
}

// 1-3 shapes of distinct types, each filling its own patch-grid cell.
Scene random_scene(Rng& rng, int min_shapes, int max_shapes) {
  constexpr int kCell = 8;
  constexpr int kGrid = kImageSize / kCell;
  Scene scene;
  scene.background = rng.uniform(0.0, 0.3);
  const int count = min_shapes + rng.below(max_shapes - min_shapes + 1);
  std::array<int, kShapeTypeCount> types = {0, 1, 2};
  rng.shuffle(types.begin(), types.end());
  std::array<int, kGrid * kGrid> cells{};
  std::iota(cells.begin(), cells.end(), 0);
  rng.shuffle(cells.begin(), cells.end());
  for (int i = 0; i < count; ++i) {
    Shape shape;
    shape.type = static_cast<ShapeType>(types[static_cast<std::size_t>(i)]);
    shape.color = rng.below(kColorCount);
    const int cell = cells[static_cast<std::size_t>(i)];
    const int x = (cell % kGrid) * kCell, y = (cell / kGrid) * kCell;
    shape.box = {x, y, x + kCell, y + kCell};
    scene.shapes.push_back(shape);
  }
  return scene;
}

std::string color_name(Rng& rng, int color) { return pick(rng, kColorNames[static_cast<std::size_t>(color)]); }
std::string shape_name(Rng& rng, ShapeType t) { return pick(rng, kShapeNames[static_cast<std::size_t>(t)]); }

std::string fill(std::string pattern, const std::string& key, const std::string& value) {
  for (auto pos = pattern.find(key); pos != std::string::npos; pos = pattern.find(key)) {
    pattern.replace(pos, key.size(), value);
  }
  return pattern;
}

LabeledExample classification_example(Rng& rng) {
  static const std::vector<std::string> templates = {
      "what color is the {s}",
      "what is the color of the {s}",
      "which colour is the {s}",
      "what hue is the {s} in the {i}",
      "tell me the shade of the {s}",
      "what color is the {s} in this {i}",
  };
  Scene scene = random_scene(rng, 1, 3);
  const auto target = static_cast<std::size_t>(rng.below(static_cast<int>(scene.shapes.size())));
  const int label = rng.below(kColorCount);
  scene.shapes[target].color = label;
  const Shape& s = scene.shapes[target];
  std::string text = fill(pick(rng, templates), "{s}", shape_name(rng, s.type));
  text = fill(text, "{i}", pick(rng, kImageNames));
  return {render(scene), TokenSequence::from_text(text), ClassLabel{label}};
}

LabeledExample grounding_example(Rng& rng) {
  static const std::vector<std::string> templates = {
      "find the {c} {s}",
      "where is the {c} {s}",
      "locate the {c} {s} in the {i}",
      "show me the {c} {s}",
      "please find the {c} {s}",
  };
  const Scene scene = random_scene(rng, 1, 3);
  const Shape& s = scene.shapes[static_cast<std::size_t>(rng.below(static_cast<int>(scene.shapes.size())))];
  std::string text = fill(pick(rng, templates), "{c}", color_name(rng, s.color));
  text = fill(text, "{s}", shape_name(rng, s.type));
  text = fill(text, "{i}", pick(rng, kImageNames));
  return {render(scene), TokenSequence::from_text(text), s.box};
}

LabeledExample generation_example(Rng& rng) {
  static const std::vector<std::string> templates = {
      "describe the {i}",
      "caption this {i}",
      "what is in the {i}",
      "describe this {i} please",
  };
  Scene scene = random_scene(rng, 1, 2);
  std::sort(scene.shapes.begin(), scene.shapes.end(),
            [](const Shape& a, const Shape& b) { return a.box.x1 < b.box.x1; });
  GeneratedTokens caption;
  for (const Shape& s : scene.shapes) {
    caption.tokens.push_back(color_word(s.color));
    caption.tokens.push_back(shape_word(s.type));
  }
  const std::string text = fill(pick(rng, templates), "{i}", pick(rng, kImageNames));
  return {render(scene), TokenSequence::from_text(text), std::move(caption)};
}

nlohmann::json label_json(const Answer& a) {
  if (const auto* c = std::get_if<ClassLabel>(&a)) return {{"class", c->value}};
  if (const auto* g = std::get_if<GeneratedTokens>(&a)) return {{"tokens", g->tokens}};
  const auto& b = std::get<BoundingBox>(a);
  return {{"box", {b.x1, b.y1, b.x2, b.y2}}};
}

Answer label_from_json(const nlohmann::json& j) {
  if (j.contains("class")) return ClassLabel{j.at("class").get<int>()};
  if (j.contains("tokens")) return GeneratedTokens{j.at("tokens").get<std::vector<int>>()};
  const auto v = j.at("box").get<std::vector<int>>();
  if (v.size() != 4) throw InputError("box label needs four coordinates");
  return BoundingBox{v[0], v[1], v[2], v[3]};
}

}  // namespace

int color_word(int color) {
  return Vocabulary::standard().require_id(kColorNames.at(static_cast<std::size_t>(color)).front());
}

int shape_word(ShapeType type) {
  return Vocabulary::standard().require_id(kShapeNames.at(static_cast<std::size_t>(type)).front());
}

ImageTensor render(const Scene& scene, int size) {
  ImageTensor img(size, size, 3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      std::array<double, 3> px = {scene.background, scene.background, scene.background};
      for (const Shape& s : scene.shapes) {
        if (inside(s.type, s.box, x + 0.5, y + 0.5)) px = kRgb[static_cast<std::size_t>(s.color)];
      }
      for (int c = 0; c < 3; ++c) img.set(y, x, c, px[static_cast<std::size_t>(c)]);
    }
  }
  return img;
}

TaskSpec task_spec(TaskKind kind) {
  TaskSpec spec{kind, {}};
  if (kind == TaskKind::kClassification) {
    for (int c = 0; c < kColorCount; ++c) spec.class_words.push_back(color_word(c));
  }
  return spec;
}

TaskData synthesize_dataset(TaskKind kind, int n, std::uint64_t seed) {
  if (n <= 0) throw InputError("dataset size must be positive");
  TaskData data{task_spec(kind), {}};
  data.examples.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(stream_seed(seed, static_cast<std::uint64_t>(i)));
    switch (kind) {
      case TaskKind::kClassification: data.examples.push_back(classification_example(rng)); break;
      case TaskKind::kGrounding: data.examples.push_back(grounding_example(rng)); break;
      case TaskKind::kSequenceGeneration: data.examples.push_back(generation_example(rng)); break;
    }
  }
  return data;
}

PretrainingCorpus synthesize_corpus(int n, std::uint64_t seed) {
  if (n <= 0) throw InputError("corpus size must be positive");
  static const std::vector<std::string> templates = {
      "there is a {c} {s}",
      "a {c} {s} in the {i}",
      "the {i} is of a {c} {s}",
      "there is a {c} {s} here",
  };
  PretrainingCorpus corpus;
  corpus.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(stream_seed(seed ^ 0x636f72707573ULL, static_cast<std::uint64_t>(i)));
    const Scene scene = random_scene(rng, 1, 3);
    const Shape& s = scene.shapes[static_cast<std::size_t>(rng.below(static_cast<int>(scene.shapes.size())))];
    int color = s.color;
    ShapeType type = s.type;
    const bool match = rng.uniform() < 0.5;
    if (!match) {
      // The caption names a color or a shape type that is absent.
      std::vector<ShapeType> absent_types;
      for (int t = 0; t < kShapeTypeCount; ++t) {
        const auto st = static_cast<ShapeType>(t);
        if (std::none_of(scene.shapes.begin(), scene.shapes.end(), [&](const Shape& x) { return x.type == st; })) {
          absent_types.push_back(st);
        }
      }
      std::vector<int> absent_colors;
      for (int c = 0; c < kColorCount; ++c) {
        if (std::none_of(scene.shapes.begin(), scene.shapes.end(), [&](const Shape& x) { return x.color == c; })) {
          absent_colors.push_back(c);
        }
      }
      if (!absent_types.empty() && rng.uniform() < 0.5) {
        type = pick(rng, absent_types);
      } else {
        color = pick(rng, absent_colors);
      }
    }
    const std::string color_word = color_name(rng, color);
    const std::string shape_word = shape_name(rng, type);
    std::string text = fill(pick(rng, templates), "{c}", color_word);
    text = fill(text, "{s}", shape_word);
    text = fill(text, "{i}", pick(rng, kImageNames));
    modelzoo::MatchingPair pair{render(scene), TokenSequence::from_text(text), match};
    if (match) {
      // Hide the color or the shape word of a true caption.
      const int hidden = modelzoo::Vocabulary::standard().require_id(rng.uniform() < 0.5 ? color_word : shape_word);
      const auto& tokens = pair.text.tokens();
      pair.masked = static_cast<int>(std::find(tokens.begin(), tokens.end(), hidden) - tokens.begin());
    }
    corpus.push_back(std::move(pair));
  }
  return corpus;
}

void write_dataset(const TaskData& data, const std::filesystem::path& container,
                   const std::filesystem::path& manifest) {
  if (data.examples.empty()) throw InputError("dataset is empty");
  const ImageTensor& first = data.examples.front().image;
  modelzoo::TensorRecord images{"images", {static_cast<std::int64_t>(data.examples.size()), first.height(),
                                           first.width(), first.channels()}, {}};
  images.data.reserve(data.examples.size() * first.size());
  for (const auto& ex : data.examples) {
    if (!ex.image.same_shape(first)) throw InputError("dataset images differ in shape");
    images.data.insert(images.data.end(), ex.image.pixels().begin(), ex.image.pixels().end());
  }
  modelzoo::TensorContainer c;
  c.metadata = {{"kind", "dataset"}, {"task_kind", to_string(data.spec.kind)}, {"class_words", data.spec.class_words}};
  c.tensors.push_back(std::move(images));
  modelzoo::write_container(container, c);

  std::ifstream in(container, std::ios::binary);
  unsigned char len_bytes[8];
  in.read(reinterpret_cast<char*>(len_bytes), 8);
  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) header_len |= static_cast<std::uint64_t>(len_bytes[i]) << (8 * i);
  const std::uint64_t data_start = 8 + header_len;
  const std::uint64_t image_bytes = first.size() * sizeof(double);

  nlohmann::json m;
  m["container"] = container.filename().string();
  m["task_kind"] = to_string(data.spec.kind);
  m["class_words"] = data.spec.class_words;
  m["image_shape"] = {first.height(), first.width(), first.channels()};
  m["examples"] = nlohmann::json::array();
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    const auto& ex = data.examples[i];
    m["examples"].push_back({{"image_offset", data_start + i * image_bytes},
                             {"text", ex.text.text()},
                             {"tokens", ex.text.tokens()},
                             {"label", label_json(ex.label)}});
  }
  std::ofstream out(manifest);
  if (!out) throw std::runtime_error("cannot open " + manifest.string() + " for writing");
  out << m.dump(1) << '\n';
  if (!out) throw std::runtime_error("write failed for " + manifest.string());
}

TaskData read_dataset(const std::filesystem::path& container, const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open " + manifest.string());
  const nlohmann::json m = nlohmann::json::parse(in);
  const modelzoo::TensorContainer c = modelzoo::read_container(container);
  if (c.tensors.size() != 1 || c.tensors[0].shape.size() != 4) throw std::runtime_error("not a dataset container");
  const auto& images = c.tensors[0];
  const auto n = static_cast<std::size_t>(images.shape[0]);
  const int h = static_cast<int>(images.shape[1]), w = static_cast<int>(images.shape[2]);
  const int ch = static_cast<int>(images.shape[3]);
  const std::size_t per = static_cast<std::size_t>(h) * w * ch;
  if (m.at("examples").size() != n) throw std::runtime_error("manifest and container disagree on size");

  TaskData data{{task_kind_from_string(m.at("task_kind").get<std::string>()),
                 m.at("class_words").get<std::vector<int>>()},
                {}};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = m.at("examples")[i];
    std::vector<double> px(images.data.begin() + static_cast<std::ptrdiff_t>(i * per),
                           images.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    data.examples.push_back({ImageTensor(h, w, ch, std::move(px)),
                             TokenSequence(e.at("tokens").get<std::vector<int>>()), label_from_json(e.at("label"))});
  }
  return data;
}

}  // namespace vlattack::harness
