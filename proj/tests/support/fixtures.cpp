#include "support/fixtures.hpp"

#include <cstdlib>
#include <map>
#include <mutex>
#include <string>
#include <unistd.h>

#include "vlattack/harness/dataset.hpp"
#include "vlattack/modelzoo/checkpoint.hpp"

namespace vlattack::testing {

namespace {

std::filesystem::path cache_dir() {
  if (const char* env = std::getenv("VLATTACK_TEST_CACHE")) return env;
  return VLATTACK_TEST_CACHE;
}

// Writes next to the target and renames, so a crashed run never leaves a
// truncated checkpoint behind.
template <typename Save>
void atomic_save(const std::filesystem::path& path, Save save) {
  const auto tmp = path.string() + ".tmp" + std::to_string(::getpid());
  save(tmp);
  std::filesystem::rename(tmp, path);
}

}  // namespace

const harness::Lab& trained_lab(modelzoo::Structure structure, TaskKind kind) {
  static std::mutex mu;
  static std::map<std::pair<modelzoo::Structure, TaskKind>, harness::Lab> labs;
  std::lock_guard lock(mu);
  const auto key = std::make_pair(structure, kind);
  if (auto it = labs.find(key); it != labs.end()) return it->second;

  const auto dir = cache_dir();
  const auto fp = harness::pretrained_path(dir, structure);
  const auto sp = harness::task_path(dir, structure, kind);
  std::filesystem::create_directories(dir);
  if (std::filesystem::exists(fp) && std::filesystem::exists(sp)) {
    return labs.emplace(key, harness::Lab{modelzoo::load_pretrained(fp), modelzoo::load_task(sp)}).first->second;
  }
  harness::Lab lab = harness::train_lab(structure, kind, 0, harness::LabRecipe::for_task(kind));
  atomic_save(fp, [&](const std::string& p) { modelzoo::save_pretrained(p, lab.pretrained); });
  atomic_save(sp, [&](const std::string& p) { modelzoo::save_task(p, lab.task); });
  return labs.emplace(key, std::move(lab)).first->second;
}

const modelzoo::TaskData& held_out(TaskKind kind, int n) {
  static std::mutex mu;
  static std::map<std::pair<TaskKind, int>, modelzoo::TaskData> cache;
  std::lock_guard lock(mu);
  const auto key = std::make_pair(kind, n);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  return cache.emplace(key, harness::synthesize_dataset(kind, n, harness::eval_seed(0))).first->second;
}

modelzoo::FineTunedTask constant_task(const modelzoo::ModelConfig& config, int classes, int label,
                                      std::uint64_t seed) {
  modelzoo::VisionLanguageModel net(config, seed);
  net.reset_head(modelzoo::HeadKind::kClassifier, classes, seed);
  modelzoo::TensorContainer c;
  c.metadata = {{"kind", "finetuned"},
                {"config", modelzoo::to_json(config)},
                {"seed", seed},
                {"head_kind", "classifier"},
                {"head_outputs", classes},
                {"task", {{"task_kind", "classification"}, {"class_words", std::vector<int>{}}}}};
  std::vector<int> words;
  const auto& vocab = modelzoo::Vocabulary::standard();
  for (int i = 0; i < classes; ++i) words.push_back(vocab.kSpecialCount + i);
  c.metadata["task"]["class_words"] = words;
  for (const auto& t : net.params()) {
    modelzoo::TensorRecord r{t.name, {t.value.rows(), t.value.cols()}, {}};
    r.data.assign(t.value.data(), t.value.data() + t.value.size());
    if (t.name == "head.classifier.weight") std::fill(r.data.begin(), r.data.end(), 0.0);
    if (t.name == "head.classifier.bias") {
      std::fill(r.data.begin(), r.data.end(), 0.0);
      r.data[static_cast<std::size_t>(label)] = 4.0;
    }
    c.tensors.push_back(std::move(r));
  }
  const auto path = scratch_dir() / ("constant-" + std::to_string(classes) + "-" + std::to_string(label) + ".vlt");
  modelzoo::write_container(path, c);
  return modelzoo::load_task(path);
}

modelzoo::PretrainedModel tiny_model(modelzoo::Structure structure, std::uint64_t seed) {
  return modelzoo::build_pretrained(modelzoo::ModelConfig::tiny(structure), seed);
}

std::filesystem::path scratch_dir() {
  static const std::filesystem::path dir = [] {
    auto d = std::filesystem::temp_directory_path() / ("vlattack-test-" + std::to_string(::getpid()));
    std::filesystem::create_directories(d);
    std::atexit([] {
      std::error_code ec;
      std::filesystem::remove_all(std::filesystem::temp_directory_path() /
                                      ("vlattack-test-" + std::to_string(::getpid())),
                                  ec);
    });
    return d;
  }();
  return dir;
}

}  // namespace vlattack::testing
