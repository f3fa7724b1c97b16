#include "mmfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "mmfuse/error.hpp"

namespace mmfuse {

namespace {

constexpr const char* kFormat = "mmfuse-checkpoint";
constexpr int kVersion = 1;

std::filesystem::path stem_of(const std::filesystem::path& path) {
  auto ext = path.extension();
  if (ext == ".json" || ext == ".bin") return path.parent_path() / path.stem();
  return path;
}

nlohmann::ordered_json read_manifest_json(const std::filesystem::path& path) {
  std::ifstream in(checkpoint_manifest_path(path));
  if (!in) throw Error("cannot open checkpoint " + checkpoint_manifest_path(path).string());
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed checkpoint manifest " + checkpoint_manifest_path(path).string() + ": " + e.what());
  }
  if (j.value("format", "") != kFormat || j.value("version", 0) != kVersion) {
    throw Error(checkpoint_manifest_path(path).string() + " is not a version-1 mmfuse checkpoint");
  }
  return j;
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

}  // namespace

std::filesystem::path checkpoint_manifest_path(const std::filesystem::path& path) {
  auto s = stem_of(path);
  return s.replace_extension(s.extension().string() + ".json");
}

std::filesystem::path checkpoint_blob_path(const std::filesystem::path& path) {
  auto s = stem_of(path);
  return s.replace_extension(s.extension().string() + ".bin");
}

void save_checkpoint(const std::filesystem::path& path, nn::Module<float>& module, const CheckpointMeta& meta) {
  const auto json_path = checkpoint_manifest_path(path), bin_path = checkpoint_blob_path(path);
  if (json_path.has_parent_path()) std::filesystem::create_directories(json_path.parent_path());
  nlohmann::ordered_json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["blob"] = bin_path.filename().string();
  j["meta"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : meta) j["meta"][k] = v;
  auto& list = j["tensors"] = nlohmann::ordered_json::array();
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw Error("cannot write " + bin_path.string());
  std::size_t offset = 0;
  for (auto& nt : module.named_tensors()) {
    auto d = nt.tensor.data();
    std::vector<std::uint32_t> words(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) words[i] = to_le(std::bit_cast<std::uint32_t>(d[i]));
    const std::size_t bytes = words.size() * sizeof(std::uint32_t);
    bin.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(bytes));
    list.push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}, {"dtype", "f32"}, {"offset", offset},
                    {"byte_length", bytes}});
    offset += bytes;
  }
  if (!bin) throw Error("failed writing " + bin_path.string());
  std::ofstream out(json_path, std::ios::binary);
  if (!out) throw Error("cannot write " + json_path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed writing " + json_path.string());
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  const auto j = read_manifest_json(path);
  CheckpointMeta meta;
  for (const auto& [k, v] : j.at("meta").items()) meta[k] = v.get<std::string>();
  return meta;
}

CheckpointMeta load_checkpoint(const std::filesystem::path& path, nn::Module<float>& module) {
  const auto j = read_manifest_json(path);
  auto targets = module.named_tensors();
  const auto& entries = j.at("tensors");
  std::map<std::string, const nlohmann::ordered_json*> by_name;
  for (const auto& e : entries) by_name[e.at("name").get<std::string>()] = &e;
  for (const auto& nt : targets) {
    auto it = by_name.find(nt.name);
    if (it == by_name.end()) throw Error("checkpoint is missing parameter '" + nt.name + "'");
    const auto& e = *it->second;
    const auto shape = e.at("shape").get<Shape>();
    if (shape != nt.tensor.shape()) {
      throw Error("parameter '" + nt.name + "' has shape " + shape_str(shape) + " in the checkpoint but " +
                  shape_str(nt.tensor.shape()) + " in the model");
    }
    if (e.at("dtype").get<std::string>() != "f32" ||
        e.at("byte_length").get<std::size_t>() != nt.tensor.numel() * sizeof(float)) {
      throw Error("parameter '" + nt.name + "' has an inconsistent dtype or byte length");
    }
  }
  if (by_name.size() != targets.size()) {
    for (const auto& [name, e] : by_name) {
      bool found = false;
      for (const auto& nt : targets) found = found || nt.name == name;
      if (!found) throw Error("checkpoint parameter '" + name + "' does not exist in the model");
    }
  }
  const auto bin_path = checkpoint_blob_path(path);
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw Error("cannot open " + bin_path.string());
  std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  for (auto& nt : targets) {
    const auto& e = *by_name.at(nt.name);
    const auto offset = e.at("offset").get<std::size_t>(), bytes = e.at("byte_length").get<std::size_t>();
    if (offset + bytes > blob.size()) throw Error("parameter '" + nt.name + "' lies outside " + bin_path.string());
    auto d = nt.tensor.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      std::uint32_t w;
      std::memcpy(&w, blob.data() + offset + i * 4, 4);
      d[i] = std::bit_cast<float>(to_le(w));
    }
  }
  CheckpointMeta meta;
  for (const auto& [k, v] : j.at("meta").items()) meta[k] = v.get<std::string>();
  return meta;
}

}  // namespace mmfuse
