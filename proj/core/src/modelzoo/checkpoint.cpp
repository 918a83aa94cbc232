#include "vlattack/modelzoo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "modelzoo/internal.hpp"

namespace vlattack::modelzoo {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr const char* kFormat = "vlattack-tensors";

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw std::runtime_error("container truncated before header length");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

nlohmann::json read_header(std::istream& in) {
  const std::uint64_t len = read_u64(in);
  if (len > (1ULL << 30)) throw std::runtime_error("container header too large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("container truncated inside header");
  nlohmann::json header = nlohmann::json::parse(text);
  if (header.value("format", "") != kFormat) throw std::runtime_error("not a tensor container");
  return header;
}

TensorContainer from_network(const VisionLanguageModel& net, const std::string& kind) {
  TensorContainer c;
  c.metadata = {
      {"kind", kind},
      {"config", to_json(net.config())},
      {"seed", net.seed()},
      {"head_kind", to_string(net.head_kind())},
      {"head_outputs", net.head_outputs()},
  };
  for (const auto& t : net.params()) {
    TensorRecord r{t.name, {t.value.rows(), t.value.cols()}, {}};
    r.data.assign(t.value.data(), t.value.data() + t.value.size());
    c.tensors.push_back(std::move(r));
  }
  return c;
}

VisionLanguageModel to_network(const TensorContainer& c, const std::string& kind) {
  const auto& meta = c.metadata;
  if (meta.value("kind", "") != kind) throw std::runtime_error("checkpoint is not a " + kind + " model");
  VisionLanguageModel net(config_from_json(meta.at("config")), meta.at("seed").get<std::uint64_t>());
  const HeadKind head = head_kind_from_string(meta.at("head_kind").get<std::string>());
  if (head != net.head_kind()) net.reset_head(head, meta.at("head_outputs").get<int>(), 0);
  ParamStore& params = net.params();
  if (params.size() != c.tensors.size()) throw std::runtime_error("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const TensorRecord& r = c.tensors[i];
    Matrix& dst = params[i].value;
    if (r.name != params[i].name || r.shape.size() != 2 || r.shape[0] != dst.rows() || r.shape[1] != dst.cols()) {
      throw std::runtime_error("checkpoint tensor mismatch at " + r.name);
    }
    std::memcpy(dst.data(), r.data.data(), r.data.size() * sizeof(double));
  }
  return net;
}

nlohmann::json spec_json(const TaskSpec& spec) {
  return {{"task_kind", to_string(spec.kind)}, {"class_words", spec.class_words}};
}

TaskSpec spec_from_json(const nlohmann::json& j) {
  return {task_kind_from_string(j.at("task_kind").get<std::string>()), j.at("class_words").get<std::vector<int>>()};
}

}  // namespace

void write_container(const std::filesystem::path& path, const TensorContainer& container) {
  nlohmann::json header;
  header["format"] = kFormat;
  header["metadata"] = container.metadata;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : container.tensors) {
    std::int64_t expected = 1;
    for (auto d : t.shape) expected *= d;
    if (expected != static_cast<std::int64_t>(t.data.size())) {
      throw std::invalid_argument("tensor " + t.name + " shape does not match its data");
    }
    const std::uint64_t nbytes = t.data.size() * sizeof(double);
    header["tensors"].push_back(
        {{"name", t.name}, {"shape", t.shape}, {"dtype", "f64"}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : container.tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

nlohmann::json read_container_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_header(in);
}

TensorContainer read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const nlohmann::json header = read_header(in);
  const std::streampos data_start = in.tellg();
  TensorContainer c;
  c.metadata = header.at("metadata");
  for (const auto& entry : header.at("tensors")) {
    if (entry.at("dtype").get<std::string>() != "f64") throw std::runtime_error("unsupported dtype");
    TensorRecord r;
    r.name = entry.at("name").get<std::string>();
    r.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    std::int64_t expected = 1;
    for (auto d : r.shape) expected *= d;
    if (nbytes != static_cast<std::uint64_t>(expected) * sizeof(double)) throw std::runtime_error("tensor size mismatch");
    r.data.resize(static_cast<std::size_t>(expected));
    in.seekg(data_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(r.data.data()), static_cast<std::streamsize>(nbytes));
    if (!in) throw std::runtime_error("container truncated in tensor " + r.name);
    c.tensors.push_back(std::move(r));
  }
  return c;
}

void save_pretrained(const std::filesystem::path& path, const PretrainedModel& model) {
  write_container(path, from_network(model.network(), "pretrained"));
}

PretrainedModel load_pretrained(const std::filesystem::path& path) {
  return PretrainedModel(to_network(read_container(path), "pretrained"));
}

void save_task(const std::filesystem::path& path, const FineTunedTask& task) {
  TensorContainer c = from_network(detail::TaskAccess::network(task), "finetuned");
  c.metadata["task"] = spec_json(task.spec());
  write_container(path, c);
}

FineTunedTask load_task(const std::filesystem::path& path) {
  const TensorContainer c = read_container(path);
  VisionLanguageModel net = to_network(c, "finetuned");
  return detail::TaskAccess::make(std::move(net), spec_from_json(c.metadata.at("task")));
}

}  // namespace vlattack::modelzoo
