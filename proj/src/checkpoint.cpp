#include "dynkd/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "dynkd/error.hpp"
#include "dynkd/nn/zoo.hpp"

namespace dynkd {

namespace {

constexpr char kMagic[8] = {'D', 'Y', 'N', 'K', 'D', 'C', 'K', 'P'};

struct TensorRef {
  std::string name;
  Tensor* tensor;
};

std::vector<TensorRef> model_tensors(nn::Model& model) {
  std::vector<TensorRef> out;
  for (auto& p : model.named_parameters()) out.push_back({p.name, &p.param->value});
  for (auto& b : model.named_buffers()) out.push_back({b.name, b.tensor});
  return out;
}

nlohmann::json shape_json(const Shape& s) { return {s.n, s.c, s.h, s.w}; }

}  // namespace

void save_checkpoint(const std::filesystem::path& path, nn::Model& model,
                     const nlohmann::json& metadata) {
  const auto tensors = model_tensors(model);
  nlohmann::json header;
  header["architecture_id"] = model.architecture_id();
  header["num_classes"] = model.num_classes();
  header["seed"] = model.seed();
  header["feature_tap"] = nn::to_string(model.feature_tap());
  const Shape& fs = model.feature_shape();
  header["feature_shape"] = {fs.c, fs.h, fs.w};
  header["parameter_count"] = model.parameter_count();
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors) {
    header["tensors"].push_back({{"name", t.name}, {"shape", shape_json(t.tensor->shape())}});
  }
  header["metadata"] = metadata;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : tensors) {
    out.write(reinterpret_cast<const char*>(t.tensor->data()),
              static_cast<std::streamsize>(t.tensor->size() * sizeof(real)));
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IngestionError(path.string() + " is not a dynkd checkpoint", 0);
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != kCheckpointVersion) {
    throw IngestionError("checkpoint format version " + std::to_string(version) +
                             " is not supported (expected " +
                             std::to_string(kCheckpointVersion) + ")",
                         8);
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 30)) throw IngestionError("corrupt checkpoint header length", 12);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IngestionError("truncated checkpoint header", 20);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(std::string("unreadable checkpoint header: ") + e.what(), 20);
  }

  nn::Model model = nn::build_model(header.at("architecture_id").get<std::string>(),
                                    header.at("num_classes").get<int>(),
                                    header.at("seed").get<std::uint64_t>(), true);
  auto tensors = model_tensors(model);
  const auto& listed = header.at("tensors");
  if (listed.size() != tensors.size()) {
    throw IngestionError("checkpoint lists " + std::to_string(listed.size()) + " tensors, " +
                             model.architecture_id() + " has " + std::to_string(tensors.size()),
                         20);
  }
  long long offset = 20 + static_cast<long long>(len);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& entry = listed[i];
    const auto& dims = entry.at("shape");
    const Shape s{dims[0].get<int>(), dims[1].get<int>(), dims[2].get<int>(), dims[3].get<int>()};
    if (entry.at("name").get<std::string>() != tensors[i].name || !(s == tensors[i].tensor->shape())) {
      throw IngestionError("checkpoint tensor " + entry.at("name").get<std::string>() +
                               " does not match architecture tensor " + tensors[i].name,
                           offset);
    }
    const auto bytes = static_cast<std::streamsize>(tensors[i].tensor->size() * sizeof(real));
    in.read(reinterpret_cast<char*>(tensors[i].tensor->data()), bytes);
    if (!in) throw IngestionError("truncated checkpoint payload", offset);
    offset += bytes;
  }
  return {std::move(model), header.value("metadata", nlohmann::json::object())};
}

}  // namespace dynkd
