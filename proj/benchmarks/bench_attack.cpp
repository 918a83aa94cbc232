#include <benchmark/benchmark.h>

#include "vlattack/bsa/bsa.hpp"
#include "vlattack/harness/dataset.hpp"
#include "vlattack/text_attack/text_attack.hpp"

namespace {

using namespace vlattack;

struct Setup {
  modelzoo::PretrainedModel model = modelzoo::build_pretrained(modelzoo::ModelConfig{}, 1);
  modelzoo::LabeledExample example = harness::synthesize_dataset(TaskKind::kClassification, 1, 3).examples[0];
};

const Setup& setup() {
  static const Setup s;
  return s;
}

void BM_ForwardWithFeatures(benchmark::State& state) {
  const auto& s = setup();
  for (auto _ : state) benchmark::DoNotOptimize(s.model.forward_with_features(s.example.image, s.example.text));
}
BENCHMARK(BM_ForwardWithFeatures);

void BM_BlockwiseGradient(benchmark::State& state) {
  const auto& s = setup();
  const bsa::BsaObjective obj(s.model, s.example.image, s.example.text);
  const ImageTensor x = bsa::init_perturbation(s.example.image, 16.0 / 255.0, 1);
  for (auto _ : state) benchmark::DoNotOptimize(obj.evaluate(x, s.example.text));
}
BENCHMARK(BM_BlockwiseGradient);

void BM_BsaStep(benchmark::State& state) {
  const auto& s = setup();
  const bsa::BsaObjective obj(s.model, s.example.image, s.example.text);
  const bsa::AttackBudget budget;
  ImageTensor x = bsa::init_perturbation(s.example.image, budget.sigma_i, 1);
  for (auto _ : state) x = bsa::bsa_step(obj, x, s.example.text, budget);
}
BENCHMARK(BM_BsaStep);

void BM_Substitutions(benchmark::State& state) {
  const auto& s = setup();
  const auto& table = s.model.network().word_table();
  for (auto _ : state) {
    for (std::size_t i = 0; i < s.example.text.size(); ++i) {
      benchmark::DoNotOptimize(text_attack::generate_substitutions(table, s.example.text, static_cast<int>(i), 8));
    }
  }
}
BENCHMARK(BM_Substitutions);

}  // namespace

BENCHMARK_MAIN();
