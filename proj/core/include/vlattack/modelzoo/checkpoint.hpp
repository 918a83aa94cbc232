#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vlattack/modelzoo/pretrained.hpp"

namespace vlattack::modelzoo {

// Flat tensor container:
//   u64 little-endian header length | JSON header | raw little-endian data
// The header holds {"metadata": {...}, "tensors": [{name, shape, dtype,
// offset, nbytes}]} with offsets relative to the start of the data section.
// Only dtype "f64" is produced.
struct TensorRecord {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> data;
};

struct TensorContainer {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<TensorRecord> tensors;
};

// Throws std::runtime_error on I/O failure or a malformed file.
void write_container(const std::filesystem::path& path, const TensorContainer& container);
TensorContainer read_container(const std::filesystem::path& path);
// Header JSON only; cheap for manifests and tooling.
nlohmann::json read_container_header(const std::filesystem::path& path);

void save_pretrained(const std::filesystem::path& path, const PretrainedModel& model);
PretrainedModel load_pretrained(const std::filesystem::path& path);

void save_task(const std::filesystem::path& path, const FineTunedTask& task);
FineTunedTask load_task(const std::filesystem::path& path);

}  // namespace vlattack::modelzoo
