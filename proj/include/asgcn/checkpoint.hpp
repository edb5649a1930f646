#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "asgcn/errors.hpp"
#include "asgcn/tensor.hpp"

namespace asgcn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

// Single-file named-tensor container: one JSON header line
//   {"format_version":1, "meta":{...},
//    "tensors":{name:{"dtype":"f64","shape":[...],"offset":N}}}
// followed by the raw tensor payloads at the stated byte offsets
// (relative to the end of the header line). Keys are stored sorted, so
// identical contents produce identical files.
struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw ValidationError("checkpoint: missing tensor '" + name + "'");
    return it->second;
  }
  bool has(const std::string& name) const { return tensors.count(name) > 0; }
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json header;
  header["format_version"] = 1;
  header["meta"] = ckpt.meta;
  nlohmann::json tensors = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : ckpt.tensors) {
    nlohmann::json entry;
    entry["dtype"] = "f64";
    entry["shape"] = tensor.shape();
    entry["offset"] = offset;
    tensors[name] = entry;
    offset += tensor.numel() * sizeof(double);
  }
  header["tensors"] = tensors;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out << header.dump() << "\n";
  for (const auto& [name, tensor] : ckpt.tensors)
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
  if (!out) throw IoError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("checkpoint " + path + ": missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + path + ": " + e.what());
  }
  if (header.value("format_version", 0) != 1)
    throw ParseError("checkpoint " + path + ": unsupported format version");

  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  const std::streampos payload_start = in.tellg();
  try {
    for (const auto& [name, entry] : header.at("tensors").items()) {
      Shape shape = entry.at("shape").get<Shape>();
      const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
      Tensor t(shape);
      in.seekg(payload_start + static_cast<std::streamoff>(offset));
      in.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
      if (!in)
        throw ParseError("checkpoint " + path + ": truncated payload for '" +
                         name + "'");
      ckpt.tensors.emplace(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + path + ": " + e.what());
  }
  return ckpt;
}

}  // namespace asgcn
